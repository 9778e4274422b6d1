"""Shared test oracles: enumerable populations and quadrature expectations.

These are independent brute-force implementations used to freeze expected
values; they deliberately avoid calling package internals beyond the
plain data types.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


@dataclass
class BinaryPopulation:
    """Finite-support population over (t, x) with deterministic y = g0(t, x).

    x_points: (K, d) support of X; x_probs: (K,) masses; p: (K,) propensities.
    States enumerate (x_k, t) pairs, so expectations are exact weighted sums.
    """

    x_points: np.ndarray
    x_probs: np.ndarray
    p: np.ndarray
    g0: callable

    def states(self):
        rows = []
        for k in range(self.x_points.shape[0]):
            for t_val, w in ((1.0, self.x_probs[k] * self.p[k]),
                             (0.0, self.x_probs[k] * (1.0 - self.p[k]))):
                rows.append((w, float(t_val), self.x_points[k]))
        return rows

    def expectation(self, fn) -> float:
        """E[fn(y, t, x)] with y = g0(t, x), by exact enumeration."""
        terms = []
        for w, t_val, x_vec in self.states():
            t_arr = np.array([t_val])
            x_arr = x_vec.reshape(1, -1)
            y_val = float(self.g0(t_arr, x_arr)[0])
            terms.append(w * float(fn(np.array([y_val]), t_arr, x_arr)[0]))
        return math.fsum(terms)

    def alpha0(self, t, x) -> np.ndarray:
        """True binary Riesz representer t/p(x) - (1-t)/(1-p(x))."""
        t = np.atleast_1d(np.asarray(t, dtype=float))
        x = np.atleast_2d(np.asarray(x, dtype=float))
        p_vals = np.array([self._p_of(xi) for xi in x])
        return t / p_vals - (1.0 - t) / (1.0 - p_vals)

    def _p_of(self, x_vec) -> float:
        for k in range(self.x_points.shape[0]):
            if np.array_equal(self.x_points[k], x_vec):
                return float(self.p[k])
        raise KeyError("x not in support")

    def theta_ate(self) -> float:
        terms = []
        for k in range(self.x_points.shape[0]):
            x_arr = self.x_points[k].reshape(1, -1)
            terms.append(self.x_probs[k] * float(self.g0(np.array([1.0]), x_arr)[0]
                                                 - self.g0(np.array([0.0]), x_arr)[0]))
        return math.fsum(terms)

    def as_dataset_rows(self, copies: int = 1):
        """Rows whose empirical measure equals the population (requires
        rational masses w * copies integral)."""
        y, t, x = [], [], []
        for w, t_val, x_vec in self.states():
            count = w * copies
            n_rows = int(round(count))
            assert abs(count - n_rows) < 1e-9, "population masses must tile the sample"
            for _ in range(n_rows):
                y.append(float(self.g0(np.array([t_val]), x_vec.reshape(1, -1))[0]))
                t.append(t_val)
                x.append(x_vec)
        return np.array(y), np.array(t), np.array(x)


def gauss_hermite_expectation(fn, mu: float, sigma: float, n_nodes: int = 80) -> float:
    """E[fn(T)] for T ~ N(mu, sigma^2) by Gauss-Hermite quadrature."""
    nodes, weights = np.polynomial.hermite.hermgauss(n_nodes)
    vals = fn(mu + sigma * math.sqrt(2.0) * nodes)
    return float(np.sum(weights * vals) / math.sqrt(math.pi))


def rel_err(approx: np.ndarray, exact: np.ndarray) -> float:
    """max_i |approx - exact| / (1 + |exact|)."""
    approx = np.asarray(approx, dtype=float)
    exact = np.asarray(exact, dtype=float)
    return float(np.max(np.abs(approx - exact) / (1.0 + np.abs(exact))))


def dict_rel_err(approx: dict, exact: dict) -> float:
    return max(rel_err(approx[k], exact[k]) for k in exact)
