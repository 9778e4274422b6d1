"""Linear moment functionals m(W; f) and plug-in Riesz representers.

A FunctionOracle is any callable f(t, x) -> values taking a treatment
vector (n,) and covariate matrix (n, d) and returning (n,) evaluations.
Oracles may additionally expose an exact treatment-derivative channel as
an attribute ``d_dt(t, x) -> (n,)``; neural learners provide it, plain
callables usually do not.

Every moment kind here is linear in the oracle and evaluates it only at
finitely many treatment points per sample. ``linearization`` exposes
those points and weights, which lets downstream learners turn m(W; f)
into closed-form quantities of their own basis functions.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .dataset import Dataset
from .errors import ArgumentError, NumericError, ValidationError

MOMENT_KINDS = ("ate", "policy", "avg_derivative", "incremental_policy")
DERIVATIVE_MODES = ("finite_difference", "exact_if_available")

PROPENSITY_CLIP = (0.01, 0.99)
SIGMA2_FLOOR = 1e-6


def _as_batch(t, x) -> tuple[np.ndarray, np.ndarray]:
    t = np.atleast_1d(np.asarray(t, dtype=np.float64))
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1) if t.shape[0] == 1 else x.reshape(-1, 1)
    if x.shape[0] != t.shape[0]:
        raise ValidationError(f"t has {t.shape[0]} rows but x has {x.shape[0]}")
    return t, x


def _check_finite(values: np.ndarray, what: str) -> np.ndarray:
    values = np.asarray(values, dtype=np.float64)
    if not np.all(np.isfinite(values)):
        raise NumericError(f"non-finite {what}")
    return values


@dataclass(frozen=True)
class MomentFunctional:
    """One of the four linear functionals, with its evaluation plan.

    Parameters
    ----------
    kind : {"ate", "policy", "avg_derivative", "incremental_policy"}
    policy : callable x -> (n,), optional
        Required for the policy kinds. Range {0,1} for "policy",
        [-1,1] for "incremental_policy".
    fd_step : float
        Central-difference step for the derivative kinds.
    derivative_mode : {"finite_difference", "exact_if_available"}
        Whether to use an oracle's d_dt channel when present.
    """

    kind: str
    policy: Callable[[np.ndarray], np.ndarray] | None = None
    fd_step: float = 1e-4
    derivative_mode: str = "finite_difference"

    def __post_init__(self) -> None:
        if self.kind not in MOMENT_KINDS:
            raise ArgumentError(f"unknown moment kind {self.kind!r}")
        if self.kind in ("policy", "incremental_policy") and self.policy is None:
            raise ArgumentError(f"moment kind {self.kind!r} requires a policy map")
        if self.fd_step <= 0:
            raise ArgumentError("fd_step must be positive")
        if self.derivative_mode not in DERIVATIVE_MODES:
            raise ArgumentError(f"unknown derivative_mode {self.derivative_mode!r}")

    @property
    def treatment_kind(self) -> str:
        return "binary" if self.kind in ("ate", "policy") else "continuous"

    @property
    def is_derivative(self) -> bool:
        return self.kind in ("avg_derivative", "incremental_policy")

    def _policy_values(self, x: np.ndarray) -> np.ndarray:
        pi = np.asarray(self.policy(x), dtype=np.float64)
        pi = np.broadcast_to(pi, (x.shape[0],)).astype(np.float64)
        if self.kind == "policy" and not np.all((pi == 0.0) | (pi == 1.0)):
            raise ValidationError("policy values must lie in {0,1}")
        if self.kind == "incremental_policy" and not np.all((pi >= -1.0) & (pi <= 1.0)):
            raise ValidationError("incremental policy values must lie in [-1,1]")
        return pi

    def linearization(self, t, x) -> list[tuple[np.ndarray, np.ndarray]]:
        """Points and weights with m(W; f) = sum_k coeff_k * f(t_k, x).

        This is the finite-difference plan for the derivative kinds and
        is exact for the level kinds.
        """
        t, x = _as_batch(t, x)
        n = t.shape[0]
        ones = np.ones(n)
        if self.kind == "ate":
            return [(ones, ones), (np.zeros(n), -ones)]
        if self.kind == "policy":
            pi = self._policy_values(x)
            return [(ones, pi), (np.zeros(n), 1.0 - pi)]
        h = self.fd_step
        scale = ones if self.kind == "avg_derivative" else self._policy_values(x)
        return [(t + h, scale / (2.0 * h)), (t - h, -scale / (2.0 * h))]

    def derivative_linearization(self, t, x) -> list[tuple[np.ndarray, np.ndarray]] | None:
        """Points and weights with m(W; f) = sum_k coeff_k * (df/dt)(t_k, x).

        None for the level kinds, which have no derivative part.
        """
        if not self.is_derivative:
            return None
        t, x = _as_batch(t, x)
        scale = np.ones(t.shape[0]) if self.kind == "avg_derivative" else self._policy_values(x)
        return [(t, scale)]

    def apply(self, oracle, y, t, x) -> np.ndarray:
        """Per-sample m(W_i; oracle) over aligned sample vectors."""
        t, x = _as_batch(t, x)
        if self.is_derivative and self.derivative_mode == "exact_if_available" \
                and hasattr(oracle, "d_dt"):
            total = np.zeros(t.shape[0])
            for t_k, coeff in self.derivative_linearization(t, x):
                total = total + coeff * _check_finite(oracle.d_dt(t_k, x), "oracle derivative")
            return total
        total = np.zeros(t.shape[0])
        for t_k, coeff in self.linearization(t, x):
            total = total + coeff * _check_finite(oracle(t_k, x), "oracle output")
        return total


def make_moment(kind: str, policy=None, fd_step: float = 1e-4,
                derivative_mode: str = "finite_difference") -> MomentFunctional:
    return MomentFunctional(kind, policy, fd_step, derivative_mode)


def threshold_policy(column: int, threshold: float, above: float = 1.0,
                     below: float = 0.0) -> Callable[[np.ndarray], np.ndarray]:
    """Policy map x -> above if x[:, column] > threshold else below."""
    def policy(x: np.ndarray) -> np.ndarray:
        return np.where(x[:, column] > threshold, above, below)
    return policy


def ate_moment(oracle, y, t, x) -> np.ndarray:
    """oracle(1, x) - oracle(0, x), per sample."""
    return make_moment("ate").apply(oracle, y, t, x)


def policy_moment(oracle, policy, y, t, x) -> np.ndarray:
    """pi(x) (oracle(1,x) - oracle(0,x)) + oracle(0,x), per sample."""
    return make_moment("policy", policy=policy).apply(oracle, y, t, x)


def avg_derivative_moment(oracle, y, t, x, h: float = 1e-4,
                          derivative_mode: str = "finite_difference") -> np.ndarray:
    """Central difference (oracle(t+h,x) - oracle(t-h,x)) / 2h, per sample."""
    return make_moment("avg_derivative", fd_step=h,
                       derivative_mode=derivative_mode).apply(oracle, y, t, x)


def incremental_policy_moment(oracle, policy, y, t, x, h: float = 1e-4,
                              derivative_mode: str = "finite_difference") -> np.ndarray:
    """policy(x) times the average-derivative moment, per sample."""
    return make_moment("incremental_policy", policy=policy, fd_step=h,
                       derivative_mode=derivative_mode).apply(oracle, y, t, x)


def empirical_riesz_loss(alpha_oracle, moment: MomentFunctional,
                         data: Dataset) -> float:
    """E_n[alpha(Z)^2 - 2 m(W; alpha)] on the given sample."""
    if data.n < 1:
        raise ArgumentError("empty dataset")
    alpha = _check_finite(alpha_oracle(data.t, data.x), "alpha values")
    m_vals = moment.apply(alpha_oracle, data.y, data.t, data.x)
    return float(np.mean(alpha * alpha) - 2.0 * np.mean(m_vals))


def clip_propensity(p_hat, lo: float = PROPENSITY_CLIP[0],
                    hi: float = PROPENSITY_CLIP[1]) -> np.ndarray:
    """Clip estimated propensities into [lo, hi]."""
    return np.clip(np.asarray(p_hat, dtype=np.float64), lo, hi)


def plugin_rr_binary(p_hat, t) -> np.ndarray:
    """t/p_hat - (1-t)/(1-p_hat); caller clips p_hat first."""
    p_hat = np.asarray(p_hat, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(p_hat <= 0.0) or np.any(p_hat >= 1.0):
        raise NumericError("propensity outside (0,1) after clipping")
    return t / p_hat - (1.0 - t) / (1.0 - p_hat)


def plugin_rr_stein(mu_hat, sigma2_hat, t) -> np.ndarray:
    """(t - mu_hat) / sigma2_hat with a positivity floor on sigma2_hat."""
    mu_hat = np.asarray(mu_hat, dtype=np.float64)
    sigma2_hat = np.asarray(sigma2_hat, dtype=np.float64)
    t = np.asarray(t, dtype=np.float64)
    if np.any(sigma2_hat <= SIGMA2_FLOOR):
        raise NumericError(f"conditional variance at or below floor {SIGMA2_FLOOR}")
    return (t - mu_hat) / sigma2_hat


class PluginBinaryRR:
    """Plug-in binary Riesz representer built from a propensity oracle."""

    def __init__(self, propensity_oracle):
        self._propensity = propensity_oracle

    def __call__(self, t, x) -> np.ndarray:
        p = clip_propensity(self._propensity(t, x))
        return plugin_rr_binary(p, t)


class PluginSteinRR:
    """Plug-in Stein representer from conditional mean/variance oracles."""

    def __init__(self, mean_oracle, variance_oracle):
        self._mean = mean_oracle
        self._variance = variance_oracle

    def __call__(self, t, x) -> np.ndarray:
        mu = np.asarray(self._mean(t, x), dtype=np.float64)
        sigma2 = np.asarray(self._variance(t, x), dtype=np.float64)
        return plugin_rr_stein(mu, np.maximum(sigma2, 2.0 * SIGMA2_FLOOR), t)
