"""Command-line frontend: fit learners, estimate, replicate, report.

Subcommands
-----------
fit
    Train a learner on a CSV dataset and write a reloadable model file
    plus a training log.
estimate
    Compute one record per requested method on a CSV dataset, with
    cross-fitting per the requested scheme, and write/print JSON.
experiment
    Run seeded replications of a benchmark DGP and write the metrics
    table (CSV) and the per-replication records (JSON).
report
    Re-render a stored experiment JSON into the metrics table and a
    per-replication histogram source CSV.

Configuration comes from an optional YAML file (JSON parses too) merged
with flag overrides; flags win.  Unknown keys are rejected.  Every
output embeds the package version, the seed, and the fully resolved
configuration, so any run can be reproduced from its own artifacts.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numeric
error.
"""

from __future__ import annotations

import argparse
import dataclasses
import json
import os
import sys
from typing import Any, Callable, Sequence

import numpy as np
import yaml

from . import __version__
from . import experiments as ex
from . import forestriesz as fr
from . import riesznet as rn
from .dataset import Dataset, load_csv, make_folds
from .errors import (ArgumentError, AutodmlError, ConfigError, DataError,
                     IncompatibilityError, NumericError, SchemaError)
from .estimators import METHODS, LearnerFactories, crossfit_estimate
from .modelio import read_model
from .moments import MomentFunctional, make_moment

SCHEME_ALIASES = {"none": "none", "simple": "simple_k_fold",
                  "double": "double_crossfit"}
MOMENT_NAMES = ("ate", "avg_derivative")
FIT_LEARNERS = ("riesznet", "forestriesz")

_COMMON_KEYS = {"seed", "threads", "out"}
_DATA_KEYS = {"data", "schema", "treatment", "moment"}
_LEARNER_KEYS = {"learner", "learner_config", "multitask"}
_ESTIMATE_KEYS = {"methods", "scheme", "k", "level"}
COMMAND_KEYS = {
    "fit": _COMMON_KEYS | _DATA_KEYS | _LEARNER_KEYS,
    "estimate": (_COMMON_KEYS | _DATA_KEYS | _LEARNER_KEYS
                 | _ESTIMATE_KEYS | {"model"}),
    "experiment": (_COMMON_KEYS | _LEARNER_KEYS | _ESTIMATE_KEYS
                   | {"dgp", "n_reps", "oracle_seed", "oracle_n_mc"}),
    "report": _COMMON_KEYS | {"data"},
}
DGP_KEYS = {"kind", "n", "design_id", "coef_seed", "target_r2",
            "n_linear_cols", "noise_scale", "covariates_csv", "t_column"}


# --------------------------------------------------------------------------
# configuration resolution


def _require(settings: dict, key: str, command: str) -> Any:
    if settings.get(key) is None:
        raise ConfigError(f"{command} requires {key!r} "
                          f"(config key or flag)")
    return settings[key]


def _as_int(settings: dict, key: str) -> None:
    if settings.get(key) is None:
        return
    value = settings[key]
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"config key {key!r} must be an integer, "
                          f"got {value!r}")


def _as_float(settings: dict, key: str) -> None:
    if settings.get(key) is None:
        return
    value = settings[key]
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"config key {key!r} must be a number, "
                          f"got {value!r}")
    settings[key] = float(value)


def load_config_file(path: str | None) -> dict:
    """Parse the YAML/JSON config file into a flat dict."""
    if path is None:
        return {}
    try:
        with open(path, "r", encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh)
    except OSError as exc:
        raise ConfigError(f"cannot read config file {path}: {exc}") from exc
    except yaml.YAMLError as exc:
        raise ConfigError(f"malformed config file {path}: {exc}") from exc
    if loaded is None:
        return {}
    if not isinstance(loaded, dict):
        raise ConfigError("config file must hold a mapping at top level")
    return loaded


def resolve_settings(command: str, file_config: dict,
                     overrides: dict) -> dict:
    """Merge config-file values and flag overrides; flags win.

    Unknown keys are rejected for the command, as are unknown nested
    keys of the ``dgp`` block.
    """
    allowed = COMMAND_KEYS[command]
    unknown = sorted(set(file_config) - allowed)
    if unknown:
        raise ConfigError(f"unknown config keys for {command}: {unknown}")
    settings = dict(file_config)
    for key, value in overrides.items():
        if value is not None:
            if key not in allowed:
                raise ConfigError(f"flag --{key} does not apply "
                                  f"to {command}")
            settings[key] = value
    settings.setdefault("seed", 0)
    settings.setdefault("threads", os.cpu_count() or 1)
    settings.setdefault("out", ".")
    for key in ("seed", "threads", "k", "n_reps", "oracle_seed",
                "oracle_n_mc"):
        _as_int(settings, key)
    _as_float(settings, "level")
    if command in ("fit", "estimate", "experiment"):
        settings.setdefault("learner", "forestriesz")
        settings.setdefault("learner_config", {})
        settings.setdefault("multitask", True)
        if not isinstance(settings["learner_config"], dict):
            raise ConfigError("learner_config must be a mapping")
        if not isinstance(settings["multitask"], bool):
            raise ConfigError("multitask must be a boolean")
    if command in ("estimate", "experiment"):
        settings.setdefault("methods", ["dr"])
        settings.setdefault("scheme", "none")
        settings.setdefault("level", 0.95)
        if isinstance(settings["methods"], str):
            settings["methods"] = [m.strip() for m
                                   in settings["methods"].split(",")]
        bad = [m for m in settings["methods"] if m not in METHODS]
        if bad:
            raise ConfigError(f"unknown methods {bad}; "
                              f"expected subset of {list(METHODS)}")
        if settings["scheme"] not in SCHEME_ALIASES:
            raise ConfigError(
                f"unknown scheme {settings['scheme']!r}; expected one of "
                f"{sorted(SCHEME_ALIASES)}")
        settings.setdefault(
            "k", ex.SCHEME_KS[SCHEME_ALIASES[settings["scheme"]]])
    if command == "experiment":
        dgp = _require(settings, "dgp", command)
        if not isinstance(dgp, dict):
            raise ConfigError("dgp must be a mapping")
        unknown = sorted(set(dgp) - DGP_KEYS)
        if unknown:
            raise ConfigError(f"unknown dgp keys: {unknown}")
        settings.setdefault("n_reps", 10)
        settings.setdefault("oracle_seed", 0)
        settings.setdefault("oracle_n_mc", 1_000_000)
    return settings


def _moment_from_settings(settings: dict,
                          treatment_kind: str) -> MomentFunctional:
    spec = settings.get("moment")
    if spec is None:
        spec = "ate" if treatment_kind == "binary" else "avg_derivative"
    if isinstance(spec, str):
        spec = {"kind": spec}
    if not isinstance(spec, dict):
        raise ConfigError("moment must be a name or a mapping")
    unknown = sorted(set(spec) - {"kind", "fd_step", "derivative_mode"})
    if unknown:
        raise ConfigError(f"unknown moment keys: {unknown}")
    kind = spec.get("kind")
    if kind not in MOMENT_NAMES:
        raise ConfigError(f"moment kind must be one of {MOMENT_NAMES}, "
                          f"got {kind!r}")
    try:
        return make_moment(kind, fd_step=spec.get("fd_step", 1e-4),
                           derivative_mode=spec.get("derivative_mode",
                                                    "finite_difference"))
    except ArgumentError as exc:
        raise ConfigError(str(exc)) from exc


def _build_learner_config(name: str, raw: dict, threads: int):
    """Instantiate the learner's config dataclass from a config mapping."""
    raw = dict(raw)
    try:
        if name == "riesznet":
            for stage in ("fast", "fine"):
                if stage in raw:
                    raw[stage] = rn.StageConfig(**raw[stage])
            if "shared_widths" in raw:
                raw["shared_widths"] = tuple(raw["shared_widths"])
            if "reg_widths" in raw:
                raw["reg_widths"] = tuple(raw["reg_widths"])
            return rn.RieszNetConfig(**raw)
        if "feature_map" in raw and raw["feature_map"] is not None:
            raw["feature_map"] = fr.FeatureMap(**raw["feature_map"])
        raw.setdefault("n_jobs", threads)
        return fr.RieszForestConfig(**raw)
    except TypeError as exc:
        raise ConfigError(f"invalid learner_config for {name}: "
                          f"{exc}") from exc
    except (ArgumentError, ConfigError) as exc:
        raise ConfigError(f"invalid learner_config for {name}: "
                          f"{exc}") from exc


def _learner_config_record(config) -> dict:
    """JSON-safe echo of a resolved learner config dataclass."""
    record = dataclasses.asdict(config)
    fmap = record.get("feature_map")
    if isinstance(fmap, dict):
        record["feature_map"] = fmap
    elif fmap is not None:
        record["feature_map"] = config.feature_map.describe()
    return record


def _load_dataset(settings: dict, command: str) -> Dataset:
    path = _require(settings, "data", command)
    schema = settings.get("schema") or {}
    if not isinstance(schema, dict):
        raise ConfigError("schema must be a mapping")
    unknown = sorted(set(schema) - {"y", "t", "x"})
    if unknown:
        raise ConfigError(f"unknown schema keys: {unknown}")
    schema = {"y": schema.get("y", "y"), "t": schema.get("t", "t"),
              "x": list(schema.get("x", []))}
    treatment = settings.get("treatment")
    try:
        if treatment is None:
            probe = load_csv(path, schema, "continuous")
            is_binary = bool(np.all((probe.t == 0.0) | (probe.t == 1.0)))
            treatment = "binary" if is_binary else "continuous"
            settings["treatment"] = treatment
            if treatment == "continuous":
                return probe
        if treatment not in ("binary", "continuous"):
            raise ConfigError(f"treatment must be binary or continuous, "
                              f"got {treatment!r}")
        return load_csv(path, schema, treatment)
    except OSError as exc:
        raise DataError(f"cannot read dataset {path}: {exc}") from exc


def _resolved_config(command: str, settings: dict,
                     learner_config=None) -> dict:
    record = {"command": command, "version": __version__}
    for key in sorted(settings):
        value = settings[key]
        if key == "learner_config" and learner_config is not None:
            value = _learner_config_record(learner_config)
        record[key] = value
    return record


# --------------------------------------------------------------------------
# output helpers


def _ensure_out(settings: dict) -> str:
    out = settings["out"]
    try:
        os.makedirs(out, exist_ok=True)
    except OSError as exc:
        raise DataError(f"cannot create output directory {out}: "
                        f"{exc}") from exc
    return out


def _write_json(path: str, payload: dict) -> None:
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(payload, fh, indent=2, sort_keys=False)
            fh.write("\n")
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


def _write_csv(path: str, text: str, provenance: dict) -> None:
    """Write a CSV with provenance comment lines before the header."""
    lines = [f"# {key}: {json.dumps(value, sort_keys=True)}"
             for key, value in provenance.items()]
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("\n".join(lines) + "\n" + text)
    except OSError as exc:
        raise DataError(f"cannot write {path}: {exc}") from exc


# --------------------------------------------------------------------------
# subcommands


def cmd_fit(settings: dict) -> int:
    learner = settings["learner"]
    if learner not in FIT_LEARNERS:
        raise ConfigError(
            f"fit supports {FIT_LEARNERS}; the plug-in learners are "
            f"constructed inline by estimate")
    data = _load_dataset(settings, "fit")
    moment = _moment_from_settings(settings, data.treatment_kind)
    raw = dict(settings["learner_config"])
    raw.setdefault("seed", settings["seed"])
    config = _build_learner_config(learner, raw, settings["threads"])
    out = _ensure_out(settings)
    model_path = os.path.join(out, "model.bin")
    if learner == "riesznet":
        net = rn.train(data, config, moment)
        net.save(model_path)
        log = {"history": net.history, "epochs": len(net.history)}
    else:
        forest = fr.fit_forest(data, moment, config)
        forest.save(model_path)
        log = {"n_trees": len(forest.trees),
               "leaf_counts": [int(t.leaf_count.sum())
                               for t in forest.trees]}
    resolved = _resolved_config("fit", settings, config)
    _write_json(os.path.join(out, "fit_log.json"),
                {"version": __version__, "seed": settings["seed"],
                 "resolved_config": resolved, "model": model_path,
                 "training_log": log})
    print(f"model written to {model_path}")
    return 0


def _factories_from_model(path: str, settings: dict,
                          moment: MomentFunctional) -> LearnerFactories:
    try:
        kind, _, _ = read_model(path)
    except OSError as exc:
        raise DataError(f"cannot read model file {path}: {exc}") from exc
    if kind == "riesz_forest":
        forest = fr.load_forest(path)
        alpha = forest.alpha_oracle()
        if forest.multitask:
            g = forest.g_oracle()
            return LearnerFactories(fit_pair=lambda train: (g, alpha))
        return LearnerFactories(fit_alpha=lambda train: alpha)
    if kind == "riesznet":
        net = rn.FittedRieszNet.load(path)
        g, alpha = net.g_oracle(), net.alpha_oracle()
        return LearnerFactories(fit_pair=lambda train: (g, alpha))
    raise DataError(f"{path}: unsupported model kind {kind!r}")


def cmd_estimate(settings: dict) -> int:
    data = _load_dataset(settings, "estimate")
    moment = _moment_from_settings(settings, data.treatment_kind)
    scheme = SCHEME_ALIASES[settings["scheme"]]
    learner_config = None
    if settings.get("model"):
        if settings["scheme"] != "none":
            raise ConfigError(
                "a pre-fitted model cannot be cross-fit; use scheme none "
                "or drop the model path for an end-to-end fit")
        factories = _factories_from_model(settings["model"], settings,
                                          moment)
    else:
        raw = dict(settings["learner_config"])
        riesznet_config = forest_config = None
        if settings["learner"] == "riesznet":
            learner_config = riesznet_config = _build_learner_config(
                "riesznet", raw, settings["threads"])
        elif settings["learner"] == "forestriesz" or raw:
            learner_config = forest_config = _build_learner_config(
                "forestriesz", raw, settings["threads"])
        factories = ex.make_learner_factories(
            settings["learner"], moment, seed=settings["seed"],
            multitask=settings["multitask"],
            riesznet_config=riesznet_config, forest_config=forest_config)
        factories = ex._memoized_factories(factories)
    folds = make_folds(data.n, scheme, k=settings["k"],
                       seed=settings["seed"])
    records = []
    for method in settings["methods"]:
        e = crossfit_estimate(data, factories, moment, folds, method,
                              settings["level"])
        records.append(e.record(scheme=settings["scheme"],
                                seed=settings["seed"]))
    resolved = _resolved_config("estimate", settings, learner_config)
    payload = {"version": __version__, "seed": settings["seed"],
               "resolved_config": resolved, "n": data.n,
               "estimates": records}
    out = _ensure_out(settings)
    _write_json(os.path.join(out, "estimates.json"), payload)
    print(json.dumps(payload, indent=2))
    return 0


def _dgp_from_settings(settings: dict):
    """DgpSpec plus (mu, sigma2) models for the semi-synthetic designs."""
    raw = dict(settings["dgp"])
    kind = raw.pop("kind", None)
    if kind not in ex.DGP_KINDS:
        raise ConfigError(f"dgp kind must be one of {ex.DGP_KINDS}, "
                          f"got {kind!r}")
    n = raw.pop("n", None)
    if not isinstance(n, int) or isinstance(n, bool):
        raise ConfigError("dgp requires an integer n")
    csv_path = raw.pop("covariates_csv", None)
    t_column = raw.pop("t_column", None)
    mu_model = sigma2_model = None
    covariates = None
    if csv_path is not None:
        if kind != "bhp_design":
            raise ConfigError("covariates_csv applies only to bhp_design")
        if t_column is None:
            raise ConfigError(
                "covariates_csv needs t_column to fit the treatment's "
                "conditional mean and variance models")
        try:
            source = load_csv(csv_path, {"y": t_column, "t": t_column,
                                         "x": []}, "continuous")
        except OSError as exc:
            raise DataError(f"cannot read covariates_csv {csv_path}: "
                            f"{exc}") from exc
        covariates = source.x
        mu_forest = fr.fit_regression_forest(source.x, source.t)
        mu = fr.predict_regression(mu_forest, source.x)
        resid2 = (source.t - mu) ** 2
        s2_forest = fr.fit_regression_forest(source.x, resid2)
        mu_model = lambda x: fr.predict_regression(mu_forest, x)  # noqa: E731
        sigma2_model = lambda x: fr.predict_regression(s2_forest, x)  # noqa: E731
    try:
        spec = ex.DgpSpec(kind, n, covariates=covariates, **raw)
    except TypeError as exc:
        raise ConfigError(f"invalid dgp block: {exc}") from exc
    return spec, mu_model, sigma2_model, csv_path is not None


def cmd_experiment(settings: dict) -> int:
    spec, mu_model, sigma2_model, data_dependent = \
        _dgp_from_settings(settings)
    moment = ex.default_moment(spec)
    learner = settings["learner"]
    learner_config = None
    raw = dict(settings["learner_config"])
    if learner in FIT_LEARNERS:
        learner_config = _build_learner_config(learner, raw,
                                               settings["threads"])
    elif raw:
        learner_config = _build_learner_config("forestriesz", raw,
                                               settings["threads"])

    def builder(seed: int) -> LearnerFactories:
        return ex.make_learner_factories(
            learner, moment, seed=seed, multitask=settings["multitask"],
            riesznet_config=(learner_config if learner == "riesznet"
                             else None),
            forest_config=(learner_config if learner != "riesznet"
                           else None))

    report = ex.run_replications(
        spec, builder, settings["methods"],
        SCHEME_ALIASES[settings["scheme"]], settings["n_reps"],
        base_seed=settings["seed"], level=settings["level"],
        k=settings["k"], moment=moment, mu_model=mu_model,
        sigma2_model=sigma2_model, oracle_seed=settings["oracle_seed"],
        oracle_n_mc=settings["oracle_n_mc"])

    resolved = _resolved_config("experiment", settings, learner_config)
    payload = ex.report_payload(report, resolved)
    payload["version"] = __version__
    payload["seed"] = settings["seed"]
    payload["data_dependent"] = data_dependent
    out = _ensure_out(settings)
    _write_json(os.path.join(out, "replications.json"), payload)
    provenance = {"version": __version__, "seed": settings["seed"],
                  "resolved_config": resolved}
    _write_csv(os.path.join(out, "metrics.csv"),
               ex.metrics_csv_text(report.rows), provenance)
    _print_summary(payload)
    return 0


def _print_summary(payload: dict) -> None:
    label = " (data-dependent)" if payload.get("data_dependent") else ""
    print(f"theta_true {payload['theta_true']:.6g} "
          f"(mc se {payload['theta_mc_se']:.2g}){label}")
    for row in payload["rows"]:
        print(f"{row['method']:>14}: bias {row['bias']:+.4f}  "
              f"rmse {row['rmse']:.4f}  coverage {row['coverage']:.3f}  "
              f"mae {row['mae']:.4f}  n_reps {row['n_reps']}")
    failures = payload.get("n_failures", len(payload.get("failures", [])))
    if failures:
        print(f"warning: {failures} failed replication records")


def cmd_report(settings: dict) -> int:
    path = _require(settings, "data", "report")
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read report input {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"malformed report input {path}: {exc}") from exc
    for key in ("rows", "replications", "theta_true"):
        if key not in payload:
            raise SchemaError(f"report input lacks the {key!r} field")
    try:
        rows = [ex.MetricsRow(**row) for row in payload["rows"]]
    except TypeError as exc:
        raise SchemaError(f"malformed metrics rows: {exc}") from exc
    provenance = {"version": payload.get("version", __version__),
                  "seed": payload.get("seed", settings["seed"]),
                  "resolved_config": payload.get("resolved_config", {})}
    out = _ensure_out(settings)
    _write_csv(os.path.join(out, "metrics.csv"),
               ex.metrics_csv_text(rows), provenance)
    buf = ["method,seed,theta,se,ci_lo,ci_hi"]
    for rec in payload["replications"]:
        buf.append(f"{rec['method']},{rec['seed']},{rec['theta']!r},"
                   f"{rec['se']!r},{rec['ci'][0]!r},{rec['ci'][1]!r}")
    _write_csv(os.path.join(out, "histogram.csv"), "\n".join(buf) + "\n",
               provenance)
    _print_summary(payload)
    return 0


# --------------------------------------------------------------------------
# argument parsing and dispatch


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="autodml",
        description="Debiased estimation of average linear moment "
                    "functionals with learned Riesz representers.")
    parser.add_argument("--version", action="version",
                        version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name, helptext in (("fit", "train a learner and save it"),
                           ("estimate", "estimate a functional on a CSV"),
                           ("experiment", "run seeded replications"),
                           ("report", "re-render a stored experiment")):
        p = sub.add_parser(name, help=helptext)
        p.add_argument("--config", help="YAML config file")
        p.add_argument("--data", help="input CSV (report: stored JSON)")
        p.add_argument("--out", help="output directory (default .)")
        p.add_argument("--seed", type=int, help="seed (default 0)")
        p.add_argument("--threads", type=int,
                       help="worker threads (default: available cores)")
        if name in ("fit", "estimate", "experiment"):
            p.add_argument("--learner",
                           help="riesznet | forestriesz | plugin_binary "
                                "| plugin_stein")
        if name == "estimate":
            p.add_argument("--model", help="pre-fitted model file")
        if name in ("estimate", "experiment"):
            p.add_argument("--method",
                           help="comma-separated subset of "
                                f"{{{','.join(METHODS)}}}")
            p.add_argument("--scheme", choices=sorted(SCHEME_ALIASES),
                           help="cross-fitting scheme")
    return parser


def _overrides(args: argparse.Namespace) -> dict:
    mapping = {"data": "data", "out": "out", "seed": "seed",
               "threads": "threads", "learner": "learner",
               "method": "methods", "scheme": "scheme", "model": "model"}
    return {key: getattr(args, flag) for flag, key in mapping.items()
            if hasattr(args, flag) and getattr(args, flag) is not None}


def main(argv: Sequence[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    handlers: dict[str, Callable[[dict], int]] = {
        "fit": cmd_fit, "estimate": cmd_estimate,
        "experiment": cmd_experiment, "report": cmd_report}
    try:
        file_config = load_config_file(args.config)
        settings = resolve_settings(args.command, file_config,
                                    _overrides(args))
        return handlers[args.command](settings)
    except (ConfigError, ArgumentError, IncompatibilityError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 4
    except AutodmlError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
