"""Debiased estimators of average linear effects with cross-fitting.

Four methods share one shape: per-sample identifying-moment values
``psi_i`` whose mean is the point estimate, whose sample standard
deviation over sqrt(n) is the standard error, and whose normal-based
interval is the confidence set.

- direct:       ``psi = m(W; g)``
- ips:          ``psi = alpha(Z) Y``
- dr:           ``psi = m(W; g) + alpha(Z) (Y - g(Z))``
- dr_post_tmle: ``dr`` after replacing ``g`` with ``g + eps * alpha``
  where ``eps`` is the least-squares coefficient of ``Y - g`` on
  ``alpha``; the correction zeroes the debiasing term, so the plug-in
  and doubly robust estimates coincide.

Cross-fitting trains the nuisances out of fold: the simple scheme fits
both learners on each fold's complement; the double scheme fits the
regression and the representer on disjoint folds of a 3-way split and
rejects multitask learners, which cannot separate the two fits.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Any, Callable

import numpy as np

from .dataset import Dataset, FoldAssignment
from .errors import (ArgumentError, IncompatibilityError, NumericError,
                     ShapeError, ValidationError)
from .moments import MomentFunctional

METHODS = ("direct", "ips", "dr", "dr_post_tmle")

DEFAULT_LEVEL = 0.95


# --------------------------------------------------------------------------
# normal quantile

# Rational approximation coefficients (Acklam), |error| < 1.15e-9 before
# refinement; one Halley step against the erfc-based CDF brings the
# result to float precision.
_A = (-3.969683028665376e+01, 2.209460984245205e+02,
      -2.759285104469687e+02, 1.383577518672690e+02,
      -3.066479806614716e+01, 2.506628277459239e+00)
_B = (-5.447609879822406e+01, 1.615858368580409e+02,
      -1.556989798598866e+02, 6.680131188771972e+01,
      -1.328068155288572e+01)
_C = (-7.784894002430293e-03, -3.223964580411365e-01,
      -2.400758277161838e+00, -2.549732539343734e+00,
      4.374664141464968e+00, 2.938163982698783e+00)
_D = (7.784695709041462e-03, 3.224671290700398e-01,
      2.445134137142996e+00, 3.754408661907416e+00)

_P_LOW = 0.02425


def _normal_cdf(x: float) -> float:
    return 0.5 * math.erfc(-x / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    """Inverse standard normal CDF, absolute error below 1e-9.

    Rational initial guess refined by one Halley step on
    ``cdf(x) - p = 0``.
    """
    if not 0.0 < p < 1.0:
        raise ArgumentError("quantile level must lie strictly in (0, 1)")
    if p < _P_LOW:
        q = math.sqrt(-2.0 * math.log(p))
        x = ((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q
               + _C[4]) * q + _C[5])
             / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    elif p > 1.0 - _P_LOW:
        q = math.sqrt(-2.0 * math.log(1.0 - p))
        x = -((((((_C[0] * q + _C[1]) * q + _C[2]) * q + _C[3]) * q
                + _C[4]) * q + _C[5])
              / ((((_D[0] * q + _D[1]) * q + _D[2]) * q + _D[3]) * q + 1.0))
    else:
        q = p - 0.5
        r = q * q
        x = ((((((_A[0] * r + _A[1]) * r + _A[2]) * r + _A[3]) * r
               + _A[4]) * r + _A[5]) * q
             / (((((_B[0] * r + _B[1]) * r + _B[2]) * r + _B[3]) * r
                 + _B[4]) * r + 1.0))
    err = _normal_cdf(x) - p
    u = err * math.sqrt(2.0 * math.pi) * math.exp(0.5 * x * x)
    return x - u / (1.0 + 0.5 * x * u)


# --------------------------------------------------------------------------
# estimates


@dataclass(frozen=True)
class Estimate:
    """Point estimate with influence-function standard error.

    ``psi`` holds the per-sample identifying-moment values in original
    index order; ``theta_hat`` is their mean and ``se`` their sample
    standard deviation (n-1 denominator) over sqrt(n).
    """

    theta_hat: float
    se: float
    ci_lo: float
    ci_hi: float
    n: int
    method: str
    psi: np.ndarray

    def __post_init__(self) -> None:
        if self.method not in METHODS:
            raise ArgumentError(f"unknown method {self.method!r}")
        psi = np.ascontiguousarray(self.psi, dtype=np.float64)
        if psi.ndim != 1 or psi.shape[0] != self.n:
            raise ShapeError("psi must be a length-n vector")
        if not self.se >= 0.0:
            raise ValidationError("se must be >= 0")
        if not self.ci_lo <= self.theta_hat <= self.ci_hi:
            raise ValidationError("interval must contain the estimate")
        object.__setattr__(self, "psi", psi)
        psi.setflags(write=False)

    def record(self, scheme: str | None = None,
               seed: int | None = None) -> dict[str, Any]:
        """JSON-serializable summary row."""
        return {"method": self.method, "theta": self.theta_hat,
                "se": self.se, "ci": [self.ci_lo, self.ci_hi],
                "n": self.n, "scheme": scheme, "seed": seed}


def estimate_from_psi(psi: np.ndarray, method: str,
                      level: float = DEFAULT_LEVEL) -> Estimate:
    """Summarize identifying-moment values into an Estimate.

    ``se`` is 0 for a single sample (no dispersion information).
    """
    if not 0.0 < level < 1.0:
        raise ArgumentError("confidence level must lie strictly in (0, 1)")
    psi = np.ascontiguousarray(psi, dtype=np.float64)
    if psi.ndim != 1 or psi.shape[0] < 1:
        raise ShapeError("psi must be a nonempty vector")
    if not np.all(np.isfinite(psi)):
        raise NumericError("non-finite identifying-moment values")
    n = psi.shape[0]
    theta = float(np.mean(psi))
    se = 0.0 if n < 2 else float(np.std(psi, ddof=1) / math.sqrt(n))
    z = normal_quantile(0.5 + level / 2.0)
    return Estimate(theta, se, theta - z * se, theta + z * se, n,
                    method, psi)


# --------------------------------------------------------------------------
# plain estimators


def _oracle_values(oracle, data: Dataset, what: str) -> np.ndarray:
    values = np.asarray(oracle(data.t, data.x), dtype=np.float64)
    if values.shape != (data.n,):
        raise ShapeError(f"{what} oracle must return one value per sample")
    return values


def direct_estimate(g_oracle, moment: MomentFunctional, data: Dataset,
                    level: float = DEFAULT_LEVEL) -> Estimate:
    """Plug-in estimate ``mean m(W; g)``."""
    psi = moment.apply(g_oracle, data.y, data.t, data.x)
    return estimate_from_psi(psi, "direct", level)


def ips_estimate(alpha_oracle, data: Dataset,
                 level: float = DEFAULT_LEVEL) -> Estimate:
    """Representer-weighting estimate ``mean alpha(Z) Y``."""
    psi = _oracle_values(alpha_oracle, data, "alpha") * data.y
    return estimate_from_psi(psi, "ips", level)


def _dr_psi(g_oracle, alpha_oracle, moment: MomentFunctional,
            data: Dataset) -> np.ndarray:
    m_vals = moment.apply(g_oracle, data.y, data.t, data.x)
    g_vals = _oracle_values(g_oracle, data, "regression")
    a_vals = _oracle_values(alpha_oracle, data, "alpha")
    return m_vals + a_vals * (data.y - g_vals)


def dr_estimate(g_oracle, alpha_oracle, moment: MomentFunctional,
                data: Dataset, level: float = DEFAULT_LEVEL) -> Estimate:
    """Doubly robust estimate ``mean m(W; g) + alpha (Y - g)``."""
    return estimate_from_psi(_dr_psi(g_oracle, alpha_oracle, moment, data),
                             "dr", level)


def tmle_epsilon(y, g_values, alpha_values) -> float:
    """Least-squares coefficient of ``Y - g`` on ``alpha``.

    Raises
    ------
    NumericError
        If all alpha values are zero (degenerate regressor).
    """
    y = np.asarray(y, dtype=np.float64)
    g_values = np.asarray(g_values, dtype=np.float64)
    alpha_values = np.asarray(alpha_values, dtype=np.float64)
    if not y.shape == g_values.shape == alpha_values.shape:
        raise ShapeError("y, g, and alpha values must align")
    denom = float(np.sum(alpha_values * alpha_values))
    if denom <= 0.0:
        raise NumericError("degenerate correction: all alpha values zero")
    return float(np.sum(alpha_values * (y - g_values)) / denom)


class CorrectedRegression:
    """Regression oracle ``g(z) + eps * alpha(z)``."""

    def __init__(self, g_oracle, alpha_oracle, eps: float) -> None:
        self.g_oracle = g_oracle
        self.alpha_oracle = alpha_oracle
        self.eps = float(eps)

    def __call__(self, t, x) -> np.ndarray:
        return np.asarray(self.g_oracle(t, x)) \
            + self.eps * np.asarray(self.alpha_oracle(t, x))


class SmoothCorrectedRegression(CorrectedRegression):
    def d_dt(self, t, x) -> np.ndarray:
        return np.asarray(self.g_oracle.d_dt(t, x)) \
            + self.eps * np.asarray(self.alpha_oracle.d_dt(t, x))


def corrected_regression(g_oracle, alpha_oracle,
                         eps: float) -> CorrectedRegression:
    """Build ``g + eps * alpha``, keeping the exact-derivative channel
    when both components expose one."""
    if hasattr(g_oracle, "d_dt") and hasattr(alpha_oracle, "d_dt"):
        return SmoothCorrectedRegression(g_oracle, alpha_oracle, eps)
    return CorrectedRegression(g_oracle, alpha_oracle, eps)


def _post_tmle_psi(g_oracle, alpha_oracle, moment: MomentFunctional,
                   data: Dataset) -> np.ndarray:
    g_vals = _oracle_values(g_oracle, data, "regression")
    a_vals = _oracle_values(alpha_oracle, data, "alpha")
    eps = tmle_epsilon(data.y, g_vals, a_vals)
    corrected = corrected_regression(g_oracle, alpha_oracle, eps)
    return _dr_psi(corrected, alpha_oracle, moment, data)


def post_tmle_estimate(g_oracle, alpha_oracle, moment: MomentFunctional,
                       data: Dataset,
                       level: float = DEFAULT_LEVEL) -> Estimate:
    """DR estimate after the least-squares correction of ``g``.

    The corrected residuals are orthogonal to alpha, so this equals the
    plug-in estimate of the corrected regression up to rounding.
    """
    psi = _post_tmle_psi(g_oracle, alpha_oracle, moment, data)
    return estimate_from_psi(psi, "dr_post_tmle", level)


# --------------------------------------------------------------------------
# cross-fitting


@dataclass(frozen=True)
class LearnerFactories:
    """Nuisance learner constructors for cross-fitting.

    Either ``fit_pair`` (one training call returning
    ``(g_oracle, alpha_oracle)``; a multitask learner) or separate
    ``fit_g`` / ``fit_alpha`` constructors.  Factories must be
    deterministic given the training data.
    """

    fit_g: Callable[[Dataset], Any] | None = None
    fit_alpha: Callable[[Dataset], Any] | None = None
    fit_pair: Callable[[Dataset], tuple[Any, Any]] | None = None

    def __post_init__(self) -> None:
        if self.fit_pair is not None:
            if self.fit_g is not None or self.fit_alpha is not None:
                raise ArgumentError(
                    "pass either fit_pair or separate factories, not both")
        elif self.fit_g is None and self.fit_alpha is None:
            raise ArgumentError("no learner factory given")

    @property
    def multitask(self) -> bool:
        """One training call produces both nuisances."""
        return self.fit_pair is not None

    def oracles(self, train: Dataset,
                need_g: bool, need_alpha: bool) -> tuple[Any, Any]:
        if self.fit_pair is not None:
            return self.fit_pair(train)
        g = alpha = None
        if need_g:
            if self.fit_g is None:
                raise ArgumentError("method needs a regression learner")
            g = self.fit_g(train)
        if need_alpha:
            if self.fit_alpha is None:
                raise ArgumentError("method needs a representer learner")
            alpha = self.fit_alpha(train)
        return g, alpha


def _method_needs(method: str) -> tuple[bool, bool]:
    need_g = method in ("direct", "dr", "dr_post_tmle")
    need_alpha = method in ("ips", "dr", "dr_post_tmle")
    return need_g, need_alpha


def _psi_for_method(method: str, g_oracle, alpha_oracle,
                    moment: MomentFunctional,
                    fold_data: Dataset) -> np.ndarray:
    if method == "direct":
        return moment.apply(g_oracle, fold_data.y, fold_data.t, fold_data.x)
    if method == "ips":
        return _oracle_values(alpha_oracle, fold_data, "alpha") * fold_data.y
    if method == "dr":
        return _dr_psi(g_oracle, alpha_oracle, moment, fold_data)
    if method == "dr_post_tmle":
        # eps is re-fit within each evaluation fold from the
        # out-of-fold nuisances.
        return _post_tmle_psi(g_oracle, alpha_oracle, moment, fold_data)
    raise ArgumentError(f"unknown method {method!r}")


def crossfit_estimate(data: Dataset, factories: LearnerFactories,
                      moment: MomentFunctional, folds: FoldAssignment,
                      method: str,
                      level: float = DEFAULT_LEVEL) -> Estimate:
    """Out-of-fold estimation under a fold assignment.

    none: fit on all samples, evaluate on all samples.  simple: per
    fold, fit on the complement and evaluate on the fold.  double: per
    rotation, fit the regression and the representer on their disjoint
    role folds and evaluate on the third; psi values are pooled in
    original index order.

    Raises
    ------
    IncompatibilityError
        Multitask learners under the double scheme.
    """
    if method not in METHODS:
        raise ArgumentError(f"unknown method {method!r}")
    if folds.folds.shape[0] != data.n:
        raise ShapeError("fold assignment does not match the dataset")
    need_g, need_alpha = _method_needs(method)

    if folds.scheme == "none":
        g, alpha = factories.oracles(data, need_g, need_alpha)
        psi = _psi_for_method(method, g, alpha, moment, data)
        return estimate_from_psi(psi, method, level)

    if folds.scheme == "simple_k_fold":
        psi = np.empty(data.n)
        for e in range(folds.k):
            eval_idx = folds.fold_indices(e)
            train_idx = np.flatnonzero(folds.folds != e)
            g, alpha = factories.oracles(data.subset(train_idx),
                                         need_g, need_alpha)
            psi[eval_idx] = _psi_for_method(method, g, alpha, moment,
                                            data.subset(eval_idx))
        return estimate_from_psi(psi, method, level)

    if factories.multitask:
        raise IncompatibilityError(
            "multitask learners cannot be used with double cross-fitting: "
            "the regression and representer fits share training data")
    psi = np.empty(data.n)
    for g_fold, alpha_fold, eval_fold in folds.roles:
        g = alpha = None
        if need_g:
            if factories.fit_g is None:
                raise ArgumentError("method needs a regression learner")
            g = factories.fit_g(data.subset(folds.fold_indices(g_fold)))
        if need_alpha:
            if factories.fit_alpha is None:
                raise ArgumentError("method needs a representer learner")
            alpha = factories.fit_alpha(
                data.subset(folds.fold_indices(alpha_fold)))
        eval_idx = folds.fold_indices(eval_fold)
        psi[eval_idx] = _psi_for_method(method, g, alpha, moment,
                                        data.subset(eval_idx))
    return estimate_from_psi(psi, method, level)
