"""Benchmark generators with known ground truth and the replication harness.

Three families of data-generating processes are provided:

* a binary-treatment design whose average treatment effect is exactly 1,
* a continuous-treatment design whose average derivative is pinned down
  by a Monte Carlo oracle,
* six semi-synthetic average-derivative designs built on a user-supplied
  covariate matrix (or a uniform synthetic substitute) with the
  treatment redrawn from a fitted conditional normal.

``run_replications`` repeats generate/fit/estimate over seeded
replications and aggregates bias, RMSE, coverage, and MAE per method.
Identical inputs reproduce the report bit-exactly; failed replications
are recorded and excluded, never silently dropped.
"""

from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .dataset import Dataset, make_folds, rng_from_seed
from .errors import (ArgumentError, AutodmlError, DataError, NumericError,
                     SchemaError, ValidationError)
from .estimators import METHODS, LearnerFactories, crossfit_estimate
from .moments import MomentFunctional, make_moment
from . import forestriesz as fr
from . import riesznet as rn

DGP_KINDS = ("binary_synthetic", "continuous_synthetic", "bhp_design")
LEARNER_NAMES = ("riesznet", "forestriesz", "plugin_binary", "plugin_stein")
SCHEME_KS = {"none": 1, "simple_k_fold": 5, "double_crossfit": 3}

_N_C_COLS = 9        # the cubic-slope confounder block uses x1..x9
_NL_COLS = (5, 7)    # sigmoid bumps sit on x6 and x8 (0-based 5, 7)


def expit(z: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    z = np.asarray(z, dtype=np.float64)
    out = np.empty_like(z)
    pos = z >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-z[pos]))
    ez = np.exp(z[~pos])
    out[~pos] = ez / (1.0 + ez)
    return out


# --------------------------------------------------------------------------
# DGP specification


@dataclass(frozen=True)
class DgpSpec:
    """Everything needed to draw one replication of a benchmark dataset.

    Parameters
    ----------
    kind : {"binary_synthetic", "continuous_synthetic", "bhp_design"}
    n : int
        Sample size per replication (for a user covariate matrix, at most
        its row count; rows are subsampled without replacement if fewer).
    design_id : int, optional
        Semi-synthetic design 1..6; required iff kind is "bhp_design".
    covariates : ndarray, optional
        User covariate matrix for the semi-synthetic designs; when absent
        covariates are drawn uniform on (-1, 1) per replication.
    coef_seed : int
        Seed for the once-per-design confounder coefficient draw.
    target_r2 : float
        Outcome-noise calibration target for the semi-synthetic designs.
    n_linear_cols : int
        How many leading covariate columns the linear confounder uses.
    noise_scale : float
        Outcome noise standard deviation for the two synthetic designs.
    """

    kind: str
    n: int
    design_id: int | None = None
    covariates: np.ndarray | None = None
    coef_seed: int = 0
    target_r2: float = 0.15
    n_linear_cols: int = 21
    noise_scale: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in DGP_KINDS:
            raise ArgumentError(f"unknown dgp kind {self.kind!r}")
        if self.n < 1:
            raise ArgumentError("n must be at least 1")
        if self.kind == "bhp_design":
            if self.design_id is None or not 1 <= self.design_id <= 6:
                raise ArgumentError("bhp designs require design_id in 1..6")
        elif self.design_id is not None:
            raise ArgumentError(f"{self.kind} takes no design_id")
        if not 0.0 < self.target_r2 < 1.0:
            raise ArgumentError("target_r2 must lie in (0, 1)")
        if self.n_linear_cols < 1:
            raise ArgumentError("n_linear_cols must be positive")
        if self.noise_scale < 0:
            raise ArgumentError("noise_scale must be nonnegative")
        if self.covariates is not None:
            cov = np.ascontiguousarray(self.covariates, dtype=np.float64)
            if cov.ndim != 2:
                raise ValidationError("covariates must be a 2-d matrix")
            object.__setattr__(self, "covariates", cov)
            cov.setflags(write=False)

    @property
    def required_columns(self) -> int:
        """Minimum covariate column count for the semi-synthetic designs."""
        return max(self.n_linear_cols, _N_C_COLS, max(_NL_COLS) + 1)


def _check_bhp_columns(spec: DgpSpec, n_cols: int) -> None:
    if n_cols < spec.required_columns:
        raise SchemaError(
            f"design {spec.design_id} needs at least "
            f"{spec.required_columns} covariate columns, got {n_cols}")


def design_coefficients(design_id: int, seed: int,
                        n_linear_cols: int = 21
                        ) -> tuple[np.ndarray, np.ndarray]:
    """Confounder coefficients (b, c), drawn once per (design, seed).

    b is uniform on [-0.5, 0.5] over the linear block; c is uniform on
    [-0.2, 0.2] over the nine cubic-slope columns.  Both are always
    drawn (from independent child streams) so that the draw for one
    design never shifts with unrelated configuration.
    """
    if not 1 <= design_id <= 6:
        raise ArgumentError("design_id must lie in 1..6")
    b_ss, c_ss = np.random.SeedSequence((seed, design_id)).spawn(2)
    b = np.random.Generator(np.random.PCG64(b_ss)).uniform(
        -0.5, 0.5, size=n_linear_cols)
    c = np.random.Generator(np.random.PCG64(c_ss)).uniform(
        -0.2, 0.2, size=_N_C_COLS)
    return b, c


def _cubic_slope(x: np.ndarray, design_id: int, c: np.ndarray) -> np.ndarray:
    slope = x[:, 0] ** 2 / 10.0 + 0.5
    if design_id >= 5:
        slope = slope + x[:, :_N_C_COLS] @ c
    return slope


def bhp_regression(design_id: int, t: np.ndarray, x: np.ndarray,
                   b: np.ndarray, c: np.ndarray) -> np.ndarray:
    """Noiseless outcome surface f(t, x) for semi-synthetic design 1..6."""
    if design_id <= 3:
        out = -0.6 * t
    else:
        out = -_cubic_slope(x, design_id, c) * t ** 3 / 6.0
    if design_id in (2, 3, 5, 6):
        out = out + x[:, :b.shape[0]] @ b
    if design_id in (3, 6):
        out = out + 1.5 * expit(10.0 * x[:, _NL_COLS[0]]) \
            + 1.5 * expit(10.0 * x[:, _NL_COLS[1]])
    return out


def bhp_regression_derivative(design_id: int, t: np.ndarray, x: np.ndarray,
                              c: np.ndarray) -> np.ndarray:
    """Analytic treatment derivative of the design's outcome surface."""
    if design_id <= 3:
        return np.full(t.shape[0], -0.6)
    return -_cubic_slope(x, design_id, c) * t ** 2 / 2.0


def synthetic_mu(x: np.ndarray) -> np.ndarray:
    """Closed-form conditional treatment mean for synthetic covariates."""
    return 1.0 + x[:, 0]


def synthetic_sigma2(x: np.ndarray) -> np.ndarray:
    """Closed-form conditional treatment variance for synthetic covariates."""
    return 0.5 + 0.25 * x[:, 1] ** 2


# --------------------------------------------------------------------------
# generators


def gen_binary_synthetic(n: int, seed: int,
                         noise_scale: float = 1.0) -> tuple[Dataset, float]:
    """Binary-treatment benchmark with average treatment effect exactly 1.

    y = t + expit(10 x1) + noise, P(t=1 | x) = 0.5 + 0.3 expit(10 x1),
    ten uniform covariates on (-1, 1).
    """
    if n < 1:
        raise ArgumentError("n must be at least 1")
    rng = rng_from_seed((seed, 0))
    x = rng.uniform(-1.0, 1.0, size=(n, 10))
    lift = expit(10.0 * x[:, 0])
    t = (rng.uniform(size=n) < 0.5 + 0.3 * lift).astype(np.float64)
    y = t + lift + noise_scale * rng.standard_normal(n)
    return Dataset(y, t, x, "binary"), 1.0


def gen_continuous_synthetic(n: int, seed: int, noise_scale: float = 1.0,
                             oracle_seed: int = 0,
                             oracle_n_mc: int = 1_000_000
                             ) -> tuple[Dataset, float]:
    """Continuous-treatment benchmark for the average derivative.

    y = (x1^2/2 + 0.5) t^3/3 + expit(10 x1) + noise with
    t = 1 + 2 expit(10 x1) + standard normal shift, two uniform
    covariates.  The true average derivative E[(x1^2/2 + 0.5) t^2] has
    no closed form and is returned from the seeded Monte Carlo oracle.
    """
    if n < 1:
        raise ArgumentError("n must be at least 1")
    rng = rng_from_seed((seed, 0))
    x = rng.uniform(-1.0, 1.0, size=(n, 2))
    lift = expit(10.0 * x[:, 0])
    t = 1.0 + 2.0 * lift + rng.standard_normal(n)
    y = (x[:, 0] ** 2 / 2.0 + 0.5) * t ** 3 / 3.0 + lift \
        + noise_scale * rng.standard_normal(n)
    theta, _ = _continuous_theta(oracle_seed, oracle_n_mc)
    return Dataset(y, t, x, "continuous"), theta


_CONTINUOUS_THETA_CACHE: dict[tuple[int, int], tuple[float, float]] = {}


def _continuous_theta(seed: int, n_mc: int) -> tuple[float, float]:
    key = (seed, n_mc)
    if key not in _CONTINUOUS_THETA_CACHE:
        rng = rng_from_seed((seed, 1))
        x1 = rng.uniform(-1.0, 1.0, size=n_mc)
        t = 1.0 + 2.0 * expit(10.0 * x1) + rng.standard_normal(n_mc)
        d = (x1 ** 2 / 2.0 + 0.5) * t ** 2
        _CONTINUOUS_THETA_CACHE[key] = (
            float(np.mean(d)), float(np.std(d) / math.sqrt(n_mc)))
    return _CONTINUOUS_THETA_CACHE[key]


def _bhp_covariates(spec: DgpSpec, rng: np.random.Generator) -> np.ndarray:
    """One replication's covariate rows (user matrix or uniform draw)."""
    if spec.covariates is None:
        return rng.uniform(-1.0, 1.0, size=(spec.n, spec.n_linear_cols))
    rows = spec.covariates.shape[0]
    if spec.n > rows:
        raise ValidationError(
            f"requested n={spec.n} exceeds the {rows} covariate rows")
    if spec.n == rows:
        return spec.covariates
    return spec.covariates[rng.choice(rows, size=spec.n, replace=False)]


def _sigma2_values(sigma2_model, x: np.ndarray) -> np.ndarray:
    s2 = np.asarray(sigma2_model(x), dtype=np.float64)
    return np.maximum(s2, 1e-6)


def gen_bhp_design(design_id: int, covariates: np.ndarray | None,
                   mu_model, sigma2_model, seed: int, n: int | None = None,
                   coef_seed: int = 0, target_r2: float = 0.15,
                   n_linear_cols: int = 21, oracle_seed: int = 0,
                   oracle_n_mc: int = 200_000) -> tuple[Dataset, float]:
    """Semi-synthetic average-derivative benchmark on given covariates.

    The treatment is redrawn as a conditional normal with the supplied
    mean/variance models (closed forms when covariates are synthetic),
    the outcome is the design surface plus noise calibrated so that the
    simulated regression explains ``target_r2`` of the variance.
    """
    if n is None:
        n = covariates.shape[0] if covariates is not None else 1000
    spec = DgpSpec("bhp_design", n, design_id=design_id,
                   covariates=covariates, coef_seed=coef_seed,
                   target_r2=target_r2, n_linear_cols=n_linear_cols)
    mu_model, sigma2_model = _bhp_models(spec, mu_model, sigma2_model)
    data = _gen_bhp_data(spec, seed, mu_model, sigma2_model)
    theta, _ = _bhp_theta(spec, mu_model, sigma2_model,
                          oracle_n_mc, oracle_seed)
    return data, theta


def _bhp_models(spec: DgpSpec, mu_model, sigma2_model):
    if spec.covariates is None:
        return (mu_model or synthetic_mu, sigma2_model or synthetic_sigma2)
    if mu_model is None or sigma2_model is None:
        raise ArgumentError(
            "user covariates need fitted mu and sigma2 models")
    return mu_model, sigma2_model


def _gen_bhp_data(spec: DgpSpec, seed: int, mu_model,
                  sigma2_model) -> Dataset:
    rng = rng_from_seed((seed, 0))
    x = _bhp_covariates(spec, rng)
    _check_bhp_columns(spec, x.shape[1])
    b, c = design_coefficients(spec.design_id, spec.coef_seed,
                               spec.n_linear_cols)
    mu = np.asarray(mu_model(x), dtype=np.float64)
    t = mu + np.sqrt(_sigma2_values(sigma2_model, x)) \
        * rng.standard_normal(x.shape[0])
    f = bhp_regression(spec.design_id, t, x, b, c)
    # solve var(noise) from R^2 = var(f) / (var(f) + var(noise))
    noise_var = float(np.var(f)) * (1.0 - spec.target_r2) / spec.target_r2
    y = f + math.sqrt(noise_var) * rng.standard_normal(x.shape[0])
    return Dataset(y, t, x, "continuous")


def _bhp_theta(spec: DgpSpec, mu_model, sigma2_model, n_mc: int,
               seed: int) -> tuple[float, float]:
    if spec.design_id <= 3:
        return -0.6, 0.0
    rng = rng_from_seed((seed, 1))
    if spec.covariates is None:
        x = rng.uniform(-1.0, 1.0, size=(n_mc, spec.n_linear_cols))
    else:
        rows = spec.covariates.shape[0]
        x = spec.covariates[rng.integers(0, rows, size=n_mc)]
    _check_bhp_columns(spec, x.shape[1])
    _, c = design_coefficients(spec.design_id, spec.coef_seed,
                               spec.n_linear_cols)
    mu = np.asarray(mu_model(x), dtype=np.float64)
    t = mu + np.sqrt(_sigma2_values(sigma2_model, x)) \
        * rng.standard_normal(n_mc)
    d = bhp_regression_derivative(spec.design_id, t, x, c)
    return float(np.mean(d)), float(np.std(d) / math.sqrt(n_mc))


def generate_data(spec: DgpSpec, seed: int, mu_model=None,
                  sigma2_model=None) -> Dataset:
    """Draw one replication dataset for the DgpSpec (no oracle work)."""
    if spec.kind == "binary_synthetic":
        return gen_binary_synthetic(spec.n, seed, spec.noise_scale)[0]
    if spec.kind == "continuous_synthetic":
        return gen_continuous_synthetic(spec.n, seed, spec.noise_scale)[0]
    mu_model, sigma2_model = _bhp_models(spec, mu_model, sigma2_model)
    return _gen_bhp_data(spec, seed, mu_model, sigma2_model)


def true_theta_oracle(spec: DgpSpec, n_mc: int = 1_000_000, seed: int = 0,
                      mu_model=None, sigma2_model=None
                      ) -> tuple[float, float]:
    """Ground-truth target value and its Monte Carlo standard error.

    Closed-form designs return the exact constant with zero error; the
    others average the analytic treatment derivative over fresh draws.
    """
    if n_mc < 10_000:
        raise ArgumentError("n_mc must be at least 10^4")
    if spec.kind == "binary_synthetic":
        return 1.0, 0.0
    if spec.kind == "continuous_synthetic":
        return _continuous_theta(seed, n_mc)
    mu_model, sigma2_model = _bhp_models(spec, mu_model, sigma2_model)
    return _bhp_theta(spec, mu_model, sigma2_model, n_mc, seed)


def default_moment(spec: DgpSpec) -> MomentFunctional:
    """The target functional implied by the DGP's treatment kind."""
    if spec.kind == "binary_synthetic":
        return make_moment("ate")
    return make_moment("avg_derivative")


# --------------------------------------------------------------------------
# learner factories


def _int_seed(*words: int) -> int:
    return int(np.random.SeedSequence(words).generate_state(1)[0])


def _riesznet_factories(moment: MomentFunctional, seed: int, multitask: bool,
                        config: rn.RieszNetConfig) -> LearnerFactories:
    import dataclasses

    def fit(train: Dataset, salt: int):
        cfg = dataclasses.replace(config, seed=_int_seed(seed, salt))
        return rn.train(train, cfg, moment)

    if multitask:
        def fit_pair(train: Dataset):
            net = fit(train, 0)
            return net.g_oracle(), net.alpha_oracle()

        return LearnerFactories(fit_pair=fit_pair)
    return LearnerFactories(
        fit_g=lambda train: fit(train, 1).g_oracle(),
        fit_alpha=lambda train: fit(train, 2).alpha_oracle())


def _forest_factories(moment: MomentFunctional, seed: int, multitask: bool,
                      config: fr.RieszForestConfig) -> LearnerFactories:
    import dataclasses

    def fit(train: Dataset, salt: int, joint: bool):
        cfg = dataclasses.replace(config, seed=_int_seed(seed, salt),
                                  multitask=joint)
        return fr.fit_forest(train, moment, cfg)

    if multitask:
        def fit_pair(train: Dataset):
            forest = fit(train, 0, True)
            return forest.g_oracle(), forest.alpha_oracle()

        return LearnerFactories(fit_pair=fit_pair)
    return LearnerFactories(
        fit_g=lambda train: fit(train, 1, True).g_oracle(),
        fit_alpha=lambda train: fit(train, 2, False).alpha_oracle())


def _regression_oracle(x: np.ndarray, target: np.ndarray, seed: int,
                       config: fr.RieszForestConfig | None):
    import dataclasses

    cfg = config or fr.RieszForestConfig(l2=0.0)
    forest = fr.fit_regression_forest(
        x, target, dataclasses.replace(cfg, seed=seed))
    return lambda t, x_new: fr.predict_regression(forest, x_new)


def _plugin_factories(moment: MomentFunctional, seed: int, kind: str,
                      config: fr.RieszForestConfig | None
                      ) -> LearnerFactories:
    from .moments import PluginBinaryRR, PluginSteinRR

    if kind == "plugin_binary":
        if moment.treatment_kind != "binary":
            raise ValidationError(
                "plugin_binary requires a binary-treatment moment")

        def fit_alpha(train: Dataset):
            prop = _regression_oracle(train.x, train.t,
                                      _int_seed(seed, 3), config)
            return PluginBinaryRR(prop)
    else:
        if moment.treatment_kind != "continuous":
            raise ValidationError(
                "plugin_stein requires a continuous-treatment moment")

        def fit_alpha(train: Dataset):
            mean = _regression_oracle(train.x, train.t,
                                      _int_seed(seed, 4), config)
            resid2 = (train.t - mean(None, train.x)) ** 2
            var = _regression_oracle(train.x, resid2,
                                     _int_seed(seed, 5), config)
            return PluginSteinRR(mean, var)

    return LearnerFactories(fit_alpha=fit_alpha)


def make_learner_factories(name: str, moment: MomentFunctional, seed: int = 0,
                           multitask: bool = True, riesznet_config=None,
                           forest_config=None) -> LearnerFactories:
    """Build estimator-facing factories for a named learner.

    The plug-in learners estimate only the representer (their conditional
    mean/variance/propensity inputs come from pure-regression forests),
    so they support the IPS method alone.
    """
    if name == "riesznet":
        return _riesznet_factories(moment, seed, multitask,
                                   riesznet_config or rn.RieszNetConfig())
    if name == "forestriesz":
        return _forest_factories(moment, seed, multitask,
                                 forest_config or fr.RieszForestConfig())
    if name in ("plugin_binary", "plugin_stein"):
        return _plugin_factories(moment, seed, name, forest_config)
    raise ArgumentError(f"unknown learner {name!r}; "
                        f"expected one of {LEARNER_NAMES}")


def _memoized_factories(base: LearnerFactories) -> LearnerFactories:
    """Cache fits per training set so several methods share one fit.

    Fitting is deterministic in the training data, so reuse is exact.
    The cache keys on the training rows' bytes; it lives only for the
    wrapper's lifetime (one replication).
    """
    cache: dict = {}

    def key(train: Dataset, tag: str):
        return (tag, train.y.tobytes(), train.t.tobytes(),
                train.x.tobytes())

    def wrap(fn, tag):
        if fn is None:
            return None

        def fitted(train: Dataset):
            k = key(train, tag)
            if k not in cache:
                cache[k] = fn(train)
            return cache[k]

        return fitted

    return LearnerFactories(fit_g=wrap(base.fit_g, "g"),
                            fit_alpha=wrap(base.fit_alpha, "alpha"),
                            fit_pair=wrap(base.fit_pair, "pair"))


# --------------------------------------------------------------------------
# metrics and the replication harness


@dataclass(frozen=True)
class MetricsRow:
    """Aggregated performance of one method over the replications."""

    method: str
    bias: float
    rmse: float
    coverage: float
    mae: float
    n_reps: int
    mean_se: float

    def __post_init__(self) -> None:
        if self.n_reps < 1:
            raise ValidationError("a metrics row needs n_reps >= 1")
        if not 0.0 <= self.coverage <= 1.0:
            raise ValidationError("coverage must lie in [0, 1]")
        if self.rmse ** 2 < self.bias ** 2 - 1e-12:
            raise ValidationError("rmse cannot fall below |bias|")
        if self.mae < 0 or self.mean_se < 0 or self.rmse < 0:
            raise ValidationError("rmse, mae, mean_se must be nonnegative")

    def record(self) -> dict:
        return {"method": self.method, "bias": self.bias, "rmse": self.rmse,
                "coverage": self.coverage, "mae": self.mae,
                "n_reps": self.n_reps, "mean_se": self.mean_se}


@dataclass(frozen=True)
class ReplicationReport:
    """Per-method metric rows plus the per-replication detail records."""

    rows: tuple[MetricsRow, ...]
    replications: tuple[dict, ...]
    failures: tuple[dict, ...]
    theta_true: float
    theta_mc_se: float
    level: float
    scheme: str
    n_reps: int


def _aggregate_method(method: str, records: Sequence[dict],
                      theta_true: float, level: float) -> MetricsRow | None:
    rows = [r for r in records if r["method"] == method]
    if not rows:
        return None
    n_ok = len(rows)
    errors = [r["theta"] - theta_true for r in rows]
    bias = math.fsum(errors) / n_ok
    rmse = math.sqrt(math.fsum(e * e for e in errors) / n_ok)
    mae = math.fsum(abs(e) for e in errors) / n_ok
    covered = sum(1 for r in rows
                  if r["ci"][0] <= theta_true <= r["ci"][1])
    mean_se = math.fsum(r["se"] for r in rows) / n_ok
    return MetricsRow(method, bias, rmse, covered / n_ok, mae,
                      n_ok, mean_se)


def _one_replication(spec: DgpSpec, learners, moment: MomentFunctional,
                     methods: Sequence[str], scheme: str, k: int,
                     seed: int, level: float, mu_model, sigma2_model
                     ) -> tuple[list[dict], list[dict]]:
    records: list[dict] = []
    failures: list[dict] = []
    try:
        data = generate_data(spec, seed, mu_model, sigma2_model)
        folds = make_folds(data.n, scheme, k=k, seed=_int_seed(seed, 2))
        base = learners(_int_seed(seed, 1)) if callable(learners) \
            else learners
        factories = _memoized_factories(base)
    except AutodmlError as exc:
        failures.append({"seed": seed, "method": None,
                         "error": type(exc).__name__, "message": str(exc)})
        return records, failures
    for method in methods:
        try:
            e = crossfit_estimate(data, factories, moment, folds,
                                  method, level)
        except AutodmlError as exc:
            failures.append({"seed": seed, "method": method,
                             "error": type(exc).__name__,
                             "message": str(exc)})
            continue
        records.append({"seed": seed, "method": method,
                        "theta": e.theta_hat, "se": e.se,
                        "ci": [e.ci_lo, e.ci_hi], "n": e.n})
    return records, failures


def run_replications(spec: DgpSpec, learners, methods: Sequence[str],
                     scheme: str, n_reps: int, base_seed: int,
                     level: float = 0.95, k: int | None = None,
                     moment: MomentFunctional | None = None,
                     mu_model=None, sigma2_model=None,
                     oracle_seed: int = 0, oracle_n_mc: int = 1_000_000,
                     n_jobs: int = 1) -> ReplicationReport:
    """Generate/fit/estimate over seeded replications and aggregate.

    Parameters
    ----------
    spec : DgpSpec
    learners : LearnerFactories or callable seed -> LearnerFactories
        A callable receives a distinct derived seed per replication.
    methods : sequence of method names from METHODS
    scheme : {"none", "simple_k_fold", "double_crossfit"}
    n_reps : int
        Replication count; replication r uses seed ``base_seed + r``.
    base_seed : int

    Returns
    -------
    ReplicationReport
        One MetricsRow per method (aggregated over the successful
        replications), the per-replication estimate records, and any
        recorded failures.

    Raises
    ------
    NumericError
        If every replication failed for every method.
    """
    if n_reps < 1:
        raise ArgumentError("n_reps must be at least 1")
    unknown = [m for m in methods if m not in METHODS]
    if unknown:
        raise ArgumentError(f"unknown methods {unknown}; expected {METHODS}")
    if k is None:
        if scheme not in SCHEME_KS:
            raise ArgumentError(f"unknown scheme {scheme!r}")
        k = SCHEME_KS[scheme]
    moment = moment or default_moment(spec)
    theta_true, theta_mc_se = true_theta_oracle(
        spec, n_mc=oracle_n_mc, seed=oracle_seed,
        mu_model=mu_model, sigma2_model=sigma2_model)

    tasks = [(spec, learners, moment, methods, scheme, k,
              base_seed + r, level, mu_model, sigma2_model)
             for r in range(n_reps)]
    if n_jobs == 1:
        outcomes = [_one_replication(*task) for task in tasks]
    else:
        from joblib import Parallel, delayed
        outcomes = Parallel(n_jobs=n_jobs, prefer="threads")(
            delayed(_one_replication)(*task) for task in tasks)

    records: list[dict] = []
    failures: list[dict] = []
    for recs, fails in outcomes:
        records.extend(recs)
        failures.extend(fails)
    rows = [row for method in methods
            if (row := _aggregate_method(method, records, theta_true,
                                         level)) is not None]
    if not rows:
        detail = failures[0]["message"] if failures else "no output"
        raise NumericError(
            f"all {n_reps} replications failed; first error: {detail}")
    return ReplicationReport(tuple(rows), tuple(records), tuple(failures),
                             theta_true, theta_mc_se, level, scheme, n_reps)


# --------------------------------------------------------------------------
# report export


METRICS_COLUMNS = ("method", "bias", "rmse", "coverage", "mae",
                   "n_reps", "mean_se")


def metrics_csv_text(rows: Sequence[MetricsRow]) -> str:
    """Render metric rows as a CSV table (one MetricsRow per line)."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(METRICS_COLUMNS)
    for row in rows:
        rec = row.record()
        writer.writerow([repr(rec[c]) if isinstance(rec[c], float)
                         else rec[c] for c in METRICS_COLUMNS])
    return buf.getvalue()


def report_payload(report: ReplicationReport, config: dict | None = None
                   ) -> dict:
    """JSON-ready report: metric rows plus per-replication estimates."""
    return {
        "theta_true": report.theta_true,
        "theta_mc_se": report.theta_mc_se,
        "level": report.level,
        "scheme": report.scheme,
        "n_reps": report.n_reps,
        "n_failures": len(report.failures),
        "data_dependent": False,
        "rows": [row.record() for row in report.rows],
        "replications": list(report.replications),
        "failures": list(report.failures),
        "resolved_config": config or {},
    }


# --------------------------------------------------------------------------
# external benchmark ingestion


def load_benchmark_csv(path: str) -> tuple[Dataset, float]:
    """Read one binary-benchmark replication file with ground truth.

    Expects the headerless layout ``t, y, y_counterfactual, mu0, mu1,
    x1..xd`` (25 covariates in the published benchmark); the true
    effect is the mean of ``mu1 - mu0`` over rows.
    """
    try:
        raw = np.loadtxt(path, delimiter=",", dtype=np.float64, ndmin=2)
    except (OSError, ValueError) as exc:
        raise DataError(f"cannot read benchmark csv {path}: {exc}") from exc
    if raw.shape[1] < 6:
        raise SchemaError(
            f"benchmark csv needs >= 6 columns "
            f"(t, y, y_cf, mu0, mu1, x...), got {raw.shape[1]}")
    t, y = raw[:, 0], raw[:, 1]
    mu0, mu1 = raw[:, 3], raw[:, 4]
    data = Dataset(y, t, raw[:, 5:], "binary")
    return data, float(np.mean(mu1 - mu0))
