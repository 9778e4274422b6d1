"""Data model, CSV ingestion, deterministic RNG, and fold bookkeeping.

All randomness in the package flows through :func:`rng_from_seed`, which
pins numpy's PCG64 bit generator. Identical seeds give bit-identical
streams on every platform numpy supports.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import (ArgumentError, IngestionError, SchemaError,
                     ValidationError)

TREATMENT_KINDS = ("binary", "continuous")
FOLD_SCHEMES = ("none", "simple_k_fold", "double_crossfit")

# Role rotation for double cross-fitting: evaluation fold e is paired with
# g-fold (e+1) mod 3 and alpha-fold (e+2) mod 3, a Latin square over
# 3 folds x 3 roles.
DOUBLE_CROSSFIT_K = 3


def rng_from_seed(seed: int | Sequence[int]) -> np.random.Generator:
    """Return a PCG64 generator for the given seed or seed tuple."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(seed)))


def spawn_seed_sequences(seed: int | Sequence[int], n: int) -> list[np.random.SeedSequence]:
    """Derive ``n`` independent child seed sequences from one seed."""
    return np.random.SeedSequence(seed).spawn(n)


@dataclass(frozen=True)
class Dataset:
    """Immutable sample (y, t, x) with treatment-kind metadata.

    Parameters
    ----------
    y : ndarray, shape (n,)
        Outcome.
    t : ndarray, shape (n,)
        Treatment; 0/1 coded when ``treatment_kind`` is binary.
    x : ndarray, shape (n, d)
        Covariates.
    treatment_kind : {"binary", "continuous"}
    column_names : list of str
        Covariate column names; defaults to x1..xd.
    """

    y: np.ndarray
    t: np.ndarray
    x: np.ndarray
    treatment_kind: str
    column_names: list[str] = field(default_factory=list)

    def __post_init__(self) -> None:
        y = np.ascontiguousarray(self.y, dtype=np.float64)
        t = np.ascontiguousarray(self.t, dtype=np.float64)
        x = np.ascontiguousarray(self.x, dtype=np.float64)
        if x.ndim == 1:
            x = x.reshape(-1, 1)
        if y.ndim != 1 or t.ndim != 1 or x.ndim != 2:
            raise ValidationError("y and t must be 1-d, x must be 2-d")
        n = y.shape[0]
        if n < 1:
            raise ValidationError("dataset must contain at least one row")
        if t.shape[0] != n or x.shape[0] != n:
            raise ValidationError(
                f"row counts differ: y has {n}, t has {t.shape[0]}, x has {x.shape[0]}")
        if self.treatment_kind not in TREATMENT_KINDS:
            raise ValidationError(f"unknown treatment_kind {self.treatment_kind!r}")
        for name, arr in (("y", y), ("t", t), ("x", x)):
            if not np.all(np.isfinite(arr)):
                raise ValidationError(f"non-finite entries in {name}")
        if self.treatment_kind == "binary" and not np.all((t == 0.0) | (t == 1.0)):
            raise ValidationError("binary treatment values must be 0.0 or 1.0")
        names = list(self.column_names) or [f"x{j + 1}" for j in range(x.shape[1])]
        if len(names) != x.shape[1]:
            raise ValidationError("column_names length must match covariate count")
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "t", t)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "column_names", names)
        for arr in (y, t, x):
            arr.setflags(write=False)

    @property
    def n(self) -> int:
        return self.y.shape[0]

    @property
    def d(self) -> int:
        return self.x.shape[1]

    def subset(self, indices: np.ndarray) -> "Dataset":
        """Row subset (copying), preserving metadata."""
        idx = np.asarray(indices, dtype=np.intp)
        return Dataset(self.y[idx].copy(), self.t[idx].copy(), self.x[idx].copy(),
                       self.treatment_kind, list(self.column_names))


@dataclass(frozen=True)
class FoldAssignment:
    """Fold indices plus, for double cross-fitting, the role rotation.

    ``roles`` maps each evaluation fold e to its (g-fold, alpha-fold,
    evaluation-fold) triple. Empty for the other schemes.
    """

    scheme: str
    folds: np.ndarray
    k: int
    roles: tuple[tuple[int, int, int], ...] = ()

    def __post_init__(self) -> None:
        if self.scheme not in FOLD_SCHEMES:
            raise ValidationError(f"unknown scheme {self.scheme!r}")
        folds = np.ascontiguousarray(self.folds, dtype=np.int64)
        object.__setattr__(self, "folds", folds)
        folds.setflags(write=False)

    def fold_indices(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.folds == fold)


def load_csv(path: str, schema: dict, treatment_kind: str) -> Dataset:
    """Load a dataset from a headered CSV file.

    ``schema`` maps roles to column names: ``{"y": name, "t": name,
    "x": [names]}``. An empty or missing "x" list selects every other
    column in file order.
    """
    if treatment_kind not in TREATMENT_KINDS:
        raise ArgumentError(f"unknown treatment_kind {treatment_kind!r}")
    unknown = set(schema) - {"y", "t", "x"}
    if unknown:
        raise SchemaError(f"unknown schema keys: {sorted(unknown)}")
    try:
        y_col, t_col = schema["y"], schema["t"]
    except KeyError as exc:
        raise SchemaError(f"schema must map {exc.args[0]!r} to a column") from exc
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise SchemaError(f"{path}: empty file") from None
        header = [h.strip() for h in header]
        x_cols = list(schema.get("x") or [c for c in header if c not in (y_col, t_col)])
        for col in [y_col, t_col, *x_cols]:
            if col not in header:
                raise SchemaError(f"{path}: column {col!r} not in header {header}")
        pos = {c: header.index(c) for c in header}
        y_vals: list[float] = []
        t_vals: list[float] = []
        x_rows: list[list[float]] = []
        for i, row in enumerate(reader):
            if len(row) != len(header):
                raise IngestionError(f"{path}: row {i} has {len(row)} cells, expected {len(header)}")
            def cell(col: str) -> float:
                raw = row[pos[col]].strip()
                try:
                    val = float(raw)
                except ValueError:
                    raise IngestionError(
                        f"{path}: row {i}, column {col!r}: non-numeric cell {raw!r}") from None
                if not math.isfinite(val):
                    raise IngestionError(f"{path}: row {i}, column {col!r}: non-finite cell")
                return val
            y_vals.append(cell(y_col))
            t_vals.append(cell(t_col))
            x_rows.append([cell(c) for c in x_cols])
    if not y_vals:
        raise IngestionError(f"{path}: no data rows")
    return Dataset(np.asarray(y_vals), np.asarray(t_vals), np.asarray(x_rows),
                   treatment_kind, x_cols)


def make_folds(n: int, scheme: str, k: int = 5, seed: int = 0) -> FoldAssignment:
    """Assign each of n rows to a fold under the given scheme.

    simple_k_fold shuffles then deals rows so fold sizes differ by at
    most one. double_crossfit is a 3-way split with the cyclic role
    rotation (eval e, g (e+1)%3, alpha (e+2)%3).
    """
    if scheme not in FOLD_SCHEMES:
        raise ArgumentError(f"unknown scheme {scheme!r}")
    if n < 1:
        raise ArgumentError("n must be positive")
    if scheme == "none":
        return FoldAssignment("none", np.zeros(n, dtype=np.int64), 1)
    if scheme == "simple_k_fold":
        if k < 2:
            raise ArgumentError("simple_k_fold needs k >= 2")
        if k > n:
            raise ArgumentError(f"k={k} exceeds n={n}")
    else:
        if k != DOUBLE_CROSSFIT_K:
            raise ArgumentError("double_crossfit uses a fixed 3-way split")
        if n < DOUBLE_CROSSFIT_K:
            raise ArgumentError(f"double_crossfit needs n >= {DOUBLE_CROSSFIT_K}")
        k = DOUBLE_CROSSFIT_K
    perm = rng_from_seed(seed).permutation(n)
    folds = np.empty(n, dtype=np.int64)
    folds[perm] = np.arange(n) % k
    if scheme == "simple_k_fold":
        return FoldAssignment(scheme, folds, k)
    roles = tuple((int((e + 1) % 3), int((e + 2) % 3), e) for e in range(3))
    return FoldAssignment(scheme, folds, k, roles)


def train_test_split(n: int, test_fraction: float, seed: int = 0) -> tuple[np.ndarray, np.ndarray]:
    """Disjoint (train, test) index arrays with |test| = round(n * fraction)."""
    if not 0.0 < test_fraction < 1.0:
        raise ArgumentError(f"test_fraction must lie in (0,1), got {test_fraction}")
    n_test = int(round(n * test_fraction))
    if n_test < 1 or n - n_test < 1:
        raise ArgumentError(
            f"split of n={n} at fraction {test_fraction} leaves an empty side")
    perm = rng_from_seed(seed).permutation(n)
    test = np.sort(perm[:n_test])
    train = np.sort(perm[n_test:])
    return train, test
