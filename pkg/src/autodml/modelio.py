"""Deterministic binary container for fitted-model files.

Layout: a magic line, one JSON header line (sorted keys), then the raw
float64/int64 array payloads concatenated in manifest order, row-major
little-endian. The same bytes always come out of the same model, which
keeps save/load round-trips byte-identical (zip-based containers embed
timestamps and break that).
"""

from __future__ import annotations

import json
from typing import Any

import numpy as np

from .errors import IngestionError, ValidationError

MAGIC = b"ADML1\n"

_DTYPES = {"float64": "<f8", "int64": "<i8"}


def write_model(path: str, kind: str, header: dict[str, Any],
                arrays: dict[str, np.ndarray]) -> None:
    """Write a model file of the given kind.

    ``header`` must be JSON-serializable. Arrays are stored in the
    iteration order of ``arrays`` and must be float64 or int64.
    """
    manifest = []
    payloads = []
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr)
        if arr.dtype == np.float64:
            dtype = "float64"
        elif arr.dtype == np.int64:
            dtype = "int64"
        else:
            raise ValidationError(f"array {name!r} has unsupported dtype {arr.dtype}")
        manifest.append({"name": name, "shape": list(arr.shape), "dtype": dtype})
        payloads.append(arr.astype(_DTYPES[dtype], copy=False).tobytes(order="C"))
    full_header = {"format_version": 1, "kind": kind, "arrays": manifest,
                   "meta": header}
    header_bytes = json.dumps(full_header, sort_keys=True,
                              separators=(",", ":")).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(header_bytes)
        fh.write(b"\n")
        for chunk in payloads:
            fh.write(chunk)


def read_model(path: str) -> tuple[str, dict[str, Any], dict[str, np.ndarray]]:
    """Read a model file, returning (kind, meta header, arrays)."""
    with open(path, "rb") as fh:
        magic = fh.read(len(MAGIC))
        if magic != MAGIC:
            raise IngestionError(f"{path}: not a model file (bad magic)")
        header_line = fh.readline()
        try:
            full_header = json.loads(header_line.decode("utf-8"))
        except (UnicodeDecodeError, json.JSONDecodeError) as exc:
            raise IngestionError(f"{path}: corrupt model header: {exc}") from exc
        if full_header.get("format_version") != 1:
            raise IngestionError(
                f"{path}: unsupported format version {full_header.get('format_version')!r}")
        arrays: dict[str, np.ndarray] = {}
        for entry in full_header["arrays"]:
            shape = tuple(entry["shape"])
            dtype = np.dtype(_DTYPES[entry["dtype"]])
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * dtype.itemsize)
            if len(buf) != count * dtype.itemsize:
                raise IngestionError(f"{path}: truncated payload for array {entry['name']!r}")
            arrays[entry["name"]] = np.frombuffer(buf, dtype=dtype).reshape(shape).copy()
        return full_header["kind"], full_header["meta"], arrays
