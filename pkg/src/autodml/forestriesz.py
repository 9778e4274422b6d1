"""Honest random forest learning a locally linear Riesz representer.

Each tree splits on covariates X only.  Within a node the representer is
``alpha(t, x) = <phi(t, x), beta>`` for a fixed feature map ``phi``; the
local coefficients solve the ridge system ``(J + l2 I) beta = M`` with
``J = mean phi phi'`` and ``M = mean m(W; phi_j)``.  Splits maximize the
count-weighted sum of ``beta' J beta`` over the two children, which is
equivalent to minimizing the empirical Riesz loss of the piecewise
solution.  Honest trees choose structure on one half of each tree's
subsample and populate leaf statistics on the other half.

A multitask forest additionally carries a local least-squares block of Y
on ``phi(T, X)``, giving a regression prediction ``g(t, x)`` from the
same partition.  A pure-regression forest (constant feature map, no
Riesz block) serves as a generic conditional-mean learner.

Prediction aggregates per-leaf ``(J, M)`` statistics across trees with
equal weight and solves once at the query point.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Any, Callable, Sequence

import numpy as np

from . import modelio
from .dataset import Dataset
from .errors import (ArgumentError, ConfigError, DegenerateLeafError,
                     EmptyTreeError, NumericError, ShapeError,
                     ValidationError)
from .moments import MomentFunctional

FEATURE_MAP_KINDS = ("binary_indicators", "polynomial")

# A regularized node system whose eigenvalue ratio exceeds this is
# treated as degenerate (candidate discarded / prediction error).
CONDITION_LIMIT = 1e12

_MODEL_KIND = "riesz_forest"


# --------------------------------------------------------------------------
# feature maps


@dataclass(frozen=True)
class FeatureMap:
    """Treatment basis ``phi(t, x)`` used by the locally linear forms.

    Parameters
    ----------
    kind : {"binary_indicators", "polynomial"}
        ``binary_indicators`` is ``phi(t) = (1 - t, t)``; ``polynomial``
        is ``phi(t) = (1, t, ..., t**degree)``.
    degree : int
        Polynomial degree; ignored for indicator maps.  Degree 0 gives
        the constant map ``phi = (1,)``.
    """

    kind: str
    degree: int = 1

    def __post_init__(self) -> None:
        if self.kind not in FEATURE_MAP_KINDS:
            raise ArgumentError(f"unknown feature map kind {self.kind!r}")
        if self.kind == "polynomial" and self.degree < 0:
            raise ArgumentError("polynomial degree must be >= 0")

    @property
    def d_phi(self) -> int:
        return 2 if self.kind == "binary_indicators" else self.degree + 1

    @property
    def smooth(self) -> bool:
        """Whether an analytic d/dt channel exists."""
        return self.kind == "polynomial"

    def evaluate(self, t) -> np.ndarray:
        """Basis values, shape ``(n, d_phi)``."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        if t.ndim != 1:
            raise ShapeError("treatment must be a vector")
        if self.kind == "binary_indicators":
            return np.column_stack([1.0 - t, t])
        return np.power(t[:, None], np.arange(self.degree + 1)[None, :])

    def derivative(self, t) -> np.ndarray:
        """Basis t-derivatives, shape ``(n, d_phi)``; polynomial only."""
        if not self.smooth:
            raise ArgumentError(
                "indicator feature maps have no derivative channel")
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        cols = [np.zeros(t.shape[0])]
        for j in range(1, self.degree + 1):
            cols.append(j * np.power(t, j - 1))
        return np.column_stack(cols)

    def describe(self) -> dict[str, Any]:
        return {"kind": self.kind, "degree": int(self.degree)}

    @staticmethod
    def from_description(desc: dict[str, Any]) -> "FeatureMap":
        return FeatureMap(desc["kind"], int(desc.get("degree", 1)))


def default_feature_map(moment: MomentFunctional) -> FeatureMap:
    """Indicators for level moments on binary T, cubic otherwise."""
    if moment.treatment_kind == "binary":
        return FeatureMap("binary_indicators")
    return FeatureMap("polynomial", degree=3)


# --------------------------------------------------------------------------
# configuration


@dataclass(frozen=True)
class RieszForestConfig:
    """Forest hyperparameters.

    ``feature_map=None`` resolves from the moment at fit time.
    ``max_features=None`` draws ``ceil(sqrt(d_x))`` candidate features
    per node.  ``normalize_criterion`` measures split gains relative to
    the root node's criterion value per block, making
    ``min_impurity_decrease`` a scale-free relative threshold; with
    ``False`` gains stay in raw count-weighted units.
    """

    n_trees: int = 100
    min_samples_leaf: int = 50
    max_samples: float = 0.65
    honest: bool = True
    min_impurity_decrease: float = 1e-3
    l2: float = 1e-3
    multitask: bool = True
    feature_map: FeatureMap | None = None
    seed: int = 0
    max_depth: int | None = None
    max_features: int | None = None
    normalize_criterion: bool = True
    n_jobs: int = 1

    def __post_init__(self) -> None:
        if self.n_trees < 1:
            raise ConfigError("n_trees must be >= 1")
        if self.min_samples_leaf < 1:
            raise ConfigError("min_samples_leaf must be >= 1")
        if not 0.0 < self.max_samples <= 1.0:
            raise ConfigError("max_samples must lie in (0, 1]")
        if self.min_impurity_decrease < 0.0:
            raise ConfigError("min_impurity_decrease must be >= 0")
        if self.l2 < 0.0:
            raise ConfigError("l2 must be >= 0")
        if self.max_depth is not None and self.max_depth < 0:
            raise ConfigError("max_depth must be >= 0 or None")
        if self.max_features is not None and self.max_features < 1:
            raise ConfigError("max_features must be >= 1 or None")
        if self.n_jobs == 0:
            raise ConfigError("n_jobs must be a positive count or -1")


# --------------------------------------------------------------------------
# node algebra


def _phi_moment_matrix(moment: MomentFunctional, fmap: FeatureMap,
                       t: np.ndarray, x: np.ndarray) -> np.ndarray:
    """Per-sample ``m(W_i; phi_j)``, shape ``(n, d_phi)``.

    Mirrors the arithmetic of applying the moment to each basis column
    as an oracle, so componentwise results agree bitwise with
    ``moment.apply``.
    """
    total = np.zeros((t.shape[0], fmap.d_phi))
    if moment.is_derivative and fmap.smooth \
            and moment.derivative_mode == "exact_if_available":
        for t_k, coeff in moment.derivative_linearization(t, x):
            total = total + coeff[:, None] * fmap.derivative(t_k)
        return total
    for t_k, coeff in moment.linearization(t, x):
        total = total + coeff[:, None] * fmap.evaluate(t_k)
    return total


def _ok_systems(a_batch: np.ndarray) -> np.ndarray:
    """Well-posedness mask for a batch of symmetric systems.

    True where the regularized matrix is positive definite with
    eigenvalue ratio at most ``CONDITION_LIMIT``.
    """
    w = np.linalg.eigvalsh(a_batch)
    lo = w[..., 0]
    hi = w[..., -1]
    return (lo > 0.0) & (hi <= CONDITION_LIMIT * lo)


def _batched_block_values(l2: float, counts: np.ndarray,
                          outer_sums: np.ndarray,
                          m_sums: Sequence[np.ndarray],
                          d_phi: int) -> tuple[np.ndarray, np.ndarray]:
    """Criterion values ``count * beta' J beta`` per block for a batch
    of candidate nodes given summed statistics.

    Returns ``(ok, values)`` with ``values`` of shape
    ``(n_blocks, n_candidates)``; entries where ``ok`` is False are 0.
    """
    counts = np.asarray(counts, dtype=np.float64)
    c = counts.shape[0]
    j = (outer_sums / counts[:, None]).reshape(c, d_phi, d_phi)
    a = j + l2 * np.eye(d_phi)
    ok = _ok_systems(a)
    values = np.zeros((len(m_sums), c))
    idx = np.nonzero(ok)[0]
    if idx.size:
        a_ok = a[idx]
        j_ok = j[idx]
        for b, m_sum in enumerate(m_sums):
            m = m_sum[idx] / counts[idx, None]
            beta = np.linalg.solve(a_ok, m[..., None])[..., 0]
            quad = np.einsum("ci,cij,cj->c", beta, j_ok, beta)
            values[b, idx] = counts[idx] * quad
    return ok, values


@dataclass(frozen=True)
class NodeStats:
    """Sufficient statistics of one node: count, J, and M."""

    count: int
    j: np.ndarray
    m: np.ndarray

    def __post_init__(self) -> None:
        if self.count < 1:
            raise ArgumentError("node count must be >= 1")
        d = self.m.shape[0]
        if self.j.shape != (d, d):
            raise ShapeError("J and M dimensions disagree")


def node_stats(t, x, moment: MomentFunctional,
               feature_map: FeatureMap) -> NodeStats:
    """Compute ``NodeStats`` for the given samples."""
    t = np.asarray(t, dtype=np.float64)
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if t.shape[0] != x.shape[0] or t.shape[0] < 1:
        raise ShapeError("treatment and covariates must align, n >= 1")
    phi = feature_map.evaluate(t)
    j = np.mean(phi[:, :, None] * phi[:, None, :], axis=0)
    m = np.mean(_phi_moment_matrix(moment, feature_map, t, x), axis=0)
    return NodeStats(t.shape[0], j, m)


def leaf_solve(t, x, moment: MomentFunctional, feature_map: FeatureMap,
               l2: float) -> np.ndarray:
    """Local ridge solution ``beta = (J + l2 I)^{-1} M`` on one node.

    Raises
    ------
    DegenerateLeafError
        If the regularized system has condition number above 1e12.
    """
    stats = node_stats(t, x, moment, feature_map)
    a = stats.j + l2 * np.eye(stats.j.shape[0])
    if not _ok_systems(a[None, :, :])[0]:
        raise DegenerateLeafError(
            "leaf system condition number exceeds 1e12")
    return np.linalg.solve(a, stats.m)


def split_criterion(left: NodeStats, right: NodeStats,
                    l2: float = 0.0) -> float:
    """Count-weighted explained Riesz mass of a candidate split.

    Returns ``sum_child count(child) * beta(child)' J(child) beta(child)``
    with ridge-regularized solves; higher is better.  Maximizing this is
    equivalent to minimizing the empirical Riesz loss of the piecewise
    solution.

    Raises
    ------
    DegenerateLeafError
        If either child system is degenerate (caller discards the
        candidate).
    """
    total = 0.0
    for child in (left, right):
        a = child.j + l2 * np.eye(child.j.shape[0])
        if not _ok_systems(a[None, :, :])[0]:
            raise DegenerateLeafError(
                "child system condition number exceeds 1e12")
        beta = np.linalg.solve(a, child.m)
        total += child.count * float(beta @ child.j @ beta)
    return total


# --------------------------------------------------------------------------
# trees


@dataclass
class Tree:
    """Flat-array decision tree over X with per-leaf statistics.

    ``feature[i] == -1`` marks a leaf; ``leaf_id`` maps node index to a
    row of the leaf statistic arrays.  ``leaf_m`` holds Riesz moments
    (zeros for pure-regression forests); ``leaf_m_reg`` holds the
    regression block when present.  ``split_indices`` / ``est_indices``
    are fit-time diagnostics and are not serialized.
    """

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    leaf_id: np.ndarray
    leaf_count: np.ndarray
    leaf_j: np.ndarray
    leaf_m: np.ndarray
    leaf_m_reg: np.ndarray | None
    split_indices: np.ndarray | None = None
    est_indices: np.ndarray | None = None

    @property
    def n_nodes(self) -> int:
        return self.feature.shape[0]

    @property
    def n_leaves(self) -> int:
        return self.leaf_count.shape[0]


@dataclass(frozen=True)
class _GrowContext:
    """Precomputed per-sample statistics shared across trees."""

    x: np.ndarray                   # (n, d_x)
    outer: np.ndarray               # (n, d_phi**2) rows of phi phi'
    mvec: np.ndarray | None         # (n, d_phi) rows of m(W; phi_j)
    phiy: np.ndarray | None         # (n, d_phi) rows of phi * y
    d_phi: int

    @property
    def m_blocks(self) -> tuple[np.ndarray, ...]:
        blocks = []
        if self.mvec is not None:
            blocks.append(self.mvec)
        if self.phiy is not None:
            blocks.append(self.phiy)
        return tuple(blocks)


def _build_context(data: Dataset, moment: MomentFunctional | None,
                   fmap: FeatureMap, with_regression: bool) -> _GrowContext:
    phi = fmap.evaluate(data.t)
    n = data.n
    d = fmap.d_phi
    outer = (phi[:, :, None] * phi[:, None, :]).reshape(n, d * d)
    mvec = None
    if moment is not None:
        mvec = _phi_moment_matrix(moment, fmap, data.t, data.x)
    phiy = phi * data.y[:, None] if with_regression else None
    return _GrowContext(data.x, outer, mvec, phiy, d)


def _node_score(ctx: _GrowContext, ids: np.ndarray, l2: float,
                norms: np.ndarray) -> float:
    """Normalized criterion value of a single unsplit node."""
    count = np.array([float(ids.shape[0])])
    outer_sum = np.sum(ctx.outer[ids], axis=0)[None, :]
    m_sums = [np.sum(block[ids], axis=0)[None, :] for block in ctx.m_blocks]
    ok, values = _batched_block_values(l2, count, outer_sum, m_sums,
                                       ctx.d_phi)
    if not ok[0]:
        return 0.0
    return float(np.sum(values[:, 0] / norms))


def _root_norms(ctx: _GrowContext, ids: np.ndarray, l2: float,
                normalize: bool) -> np.ndarray:
    """Per-block normalizers: |root criterion value| (or all ones)."""
    n_blocks = len(ctx.m_blocks)
    if not normalize:
        return np.ones(n_blocks)
    count = np.array([float(ids.shape[0])])
    outer_sum = np.sum(ctx.outer[ids], axis=0)[None, :]
    m_sums = [np.sum(block[ids], axis=0)[None, :] for block in ctx.m_blocks]
    ok, values = _batched_block_values(l2, count, outer_sum, m_sums,
                                       ctx.d_phi)
    norms = np.ones(n_blocks)
    if ok[0]:
        norms = np.maximum(np.abs(values[:, 0]), 1e-12)
    return norms


def _scan_feature(ctx: _GrowContext, s_ids: np.ndarray, e_ids: np.ndarray,
                  f: int, config: RieszForestConfig,
                  norms: np.ndarray) -> tuple[float, float] | None:
    """Best (score, threshold) for one feature, or None."""
    msl = config.min_samples_leaf
    xs = ctx.x[s_ids, f]
    order = np.argsort(xs, kind="stable")
    xs_sorted = xs[order]
    n_s = xs_sorted.shape[0]
    bounds = np.nonzero(xs_sorted[:-1] < xs_sorted[1:])[0]
    if bounds.size == 0:
        return None
    k = bounds + 1
    keep = (k >= msl) & (n_s - k >= msl)
    thr = 0.5 * (xs_sorted[bounds] + xs_sorted[bounds + 1])
    if e_ids is not s_ids:
        es = np.sort(ctx.x[e_ids, f])
        le = np.searchsorted(es, thr, side="right")
        keep &= (le >= msl) & (e_ids.shape[0] - le >= msl)
    if not np.any(keep):
        return None
    bounds, k, thr = bounds[keep], k[keep], thr[keep]

    rows = s_ids[order]
    cum_outer = np.cumsum(ctx.outer[rows], axis=0)
    total_outer = cum_outer[-1]
    left_outer = cum_outer[bounds]
    right_outer = total_outer[None, :] - left_outer
    left_m, right_m = [], []
    for block in ctx.m_blocks:
        cum = np.cumsum(block[rows], axis=0)
        left_m.append(cum[bounds])
        right_m.append(cum[-1][None, :] - cum[bounds])

    ok_l, vals_l = _batched_block_values(config.l2, k, left_outer, left_m,
                                         ctx.d_phi)
    ok_r, vals_r = _batched_block_values(config.l2, n_s - k, right_outer,
                                         right_m, ctx.d_phi)
    ok = ok_l & ok_r
    if not np.any(ok):
        return None
    score = np.sum((vals_l + vals_r) / norms[:, None], axis=0)
    score[~ok] = -np.inf
    best = int(np.argmax(score))        # first max: lowest threshold
    return float(score[best]), float(thr[best])


def _grow(ctx: _GrowContext, sub_split: np.ndarray, sub_est: np.ndarray,
          config: RieszForestConfig, rng: np.random.Generator) -> Tree:
    d_x = ctx.x.shape[1]
    msl = config.min_samples_leaf
    m_try = config.max_features or math.ceil(math.sqrt(d_x))
    m_try = min(m_try, d_x)
    norms = _root_norms(ctx, sub_split, config.l2,
                        config.normalize_criterion)

    feature: list[int] = []
    threshold: list[float] = []
    left: list[int] = []
    right: list[int] = []
    leaf_id: list[int] = []
    leaf_count: list[int] = []
    leaf_j: list[np.ndarray] = []
    leaf_m: list[np.ndarray] = []
    leaf_m_reg: list[np.ndarray] = []
    has_riesz = ctx.mvec is not None
    has_reg = ctx.phiy is not None

    def make_leaf(node: int, e_ids: np.ndarray) -> None:
        feature[node] = -1
        threshold[node] = math.nan
        leaf_id[node] = len(leaf_count)
        leaf_count.append(int(e_ids.shape[0]))
        leaf_j.append(np.mean(ctx.outer[e_ids], axis=0)
                      .reshape(ctx.d_phi, ctx.d_phi))
        if has_riesz:
            leaf_m.append(np.mean(ctx.mvec[e_ids], axis=0))
        else:
            leaf_m.append(np.zeros(ctx.d_phi))
        if has_reg:
            leaf_m_reg.append(np.mean(ctx.phiy[e_ids], axis=0))

    def build(s_ids: np.ndarray, e_ids: np.ndarray, depth: int) -> int:
        node = len(feature)
        feature.append(-2)              # placeholder until resolved
        threshold.append(math.nan)
        left.append(-1)
        right.append(-1)
        leaf_id.append(-1)

        depth_ok = config.max_depth is None or depth < config.max_depth
        if (not depth_ok or s_ids.shape[0] < 2 * msl
                or e_ids.shape[0] < 2 * msl):
            make_leaf(node, e_ids)
            return node

        feats = np.sort(rng.choice(d_x, size=m_try, replace=False))
        best_score = -np.inf
        best_feature = -1
        best_thr = math.nan
        for f in feats:
            found = _scan_feature(ctx, s_ids, e_ids, int(f), config, norms)
            if found is not None and found[0] > best_score:
                best_score, best_thr = found
                best_feature = int(f)

        if best_feature < 0:
            make_leaf(node, e_ids)
            return node
        parent_score = _node_score(ctx, s_ids, config.l2, norms)
        if best_score - parent_score <= config.min_impurity_decrease:
            make_leaf(node, e_ids)
            return node

        mask_s = ctx.x[s_ids, best_feature] <= best_thr
        mask_e = ctx.x[e_ids, best_feature] <= best_thr
        feature[node] = best_feature
        threshold[node] = best_thr
        left[node] = build(s_ids[mask_s], e_ids[mask_e], depth + 1)
        right[node] = build(s_ids[~mask_s], e_ids[~mask_e], depth + 1)
        return node

    build(sub_split, sub_est, 0)
    return Tree(
        feature=np.asarray(feature, dtype=np.int64),
        threshold=np.asarray(threshold, dtype=np.float64),
        left=np.asarray(left, dtype=np.int64),
        right=np.asarray(right, dtype=np.int64),
        leaf_id=np.asarray(leaf_id, dtype=np.int64),
        leaf_count=np.asarray(leaf_count, dtype=np.int64),
        leaf_j=np.stack(leaf_j),
        leaf_m=np.stack(leaf_m),
        leaf_m_reg=np.stack(leaf_m_reg) if has_reg else None,
        split_indices=sub_split,
        est_indices=sub_est,
    )


def _grow_from_pool(ctx: _GrowContext, pool: np.ndarray,
                    config: RieszForestConfig,
                    rng: np.random.Generator) -> Tree:
    """Subsample the index pool, form honest halves, grow one tree."""
    n_pool = pool.shape[0]
    n_sub = max(1, int(round(config.max_samples * n_pool)))
    sub = rng.choice(pool, size=n_sub, replace=False)
    if config.honest:
        n_half = n_sub // 2
        sub_split, sub_est = sub[:n_half], sub[n_half:]
    else:
        sub_split = sub_est = sub
    if sub_split.shape[0] < 1 or sub_est.shape[0] < config.min_samples_leaf:
        raise EmptyTreeError(
            f"subsample of {n_sub} cannot form a root leaf with "
            f"min_samples_leaf={config.min_samples_leaf}")
    return _grow(ctx, sub_split, sub_est, config, rng)


def _generator(seed) -> np.random.Generator:
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.PCG64(seed))


def _resolve_feature_map(config: RieszForestConfig,
                         moment: MomentFunctional) -> FeatureMap:
    fmap = config.feature_map or default_feature_map(moment)
    if fmap.kind == "binary_indicators" \
            and moment.treatment_kind != "binary":
        raise ValidationError(
            "binary_indicators feature map requires a binary treatment")
    return fmap


def grow_tree(data: Dataset, indices, config: RieszForestConfig,
              moment: MomentFunctional, seed) -> Tree:
    """Grow one honest tree on a subsample of ``indices``.

    Deterministic in ``seed`` (an int or a ``SeedSequence``).

    Raises
    ------
    EmptyTreeError
        If too few samples remain to form a valid root leaf.
    """
    indices = np.asarray(indices, dtype=np.int64)
    if config.honest and indices.shape[0] < 2 * config.min_samples_leaf:
        raise EmptyTreeError(
            "honest trees need at least 2*min_samples_leaf samples")
    fmap = _resolve_feature_map(config, moment)
    ctx = _build_context(data, moment, fmap, config.multitask)
    return _grow_from_pool(ctx, indices, config, _generator(seed))


# --------------------------------------------------------------------------
# forests


@dataclass(frozen=True)
class RieszForest:
    """Fitted forest; immutable after fit."""

    trees: tuple[Tree, ...]
    config: RieszForestConfig
    feature_map: FeatureMap
    n_features: int
    multitask: bool
    regression_only: bool = False

    def alpha_oracle(self) -> "ForestOracle":
        """Callable ``(t, x) -> alpha`` for the Riesz channel."""
        if self.regression_only:
            raise ArgumentError(
                "pure-regression forest has no Riesz channel")
        return _make_oracle(self, "riesz")

    def g_oracle(self) -> "ForestOracle":
        """Callable ``(t, x) -> g`` for the regression channel."""
        if not (self.multitask or self.regression_only):
            raise ArgumentError(
                "regression channel requires a multitask forest")
        return _make_oracle(self, "reg")

    def save(self, path: str) -> None:
        save_forest(self, path)

    @staticmethod
    def load(path: str) -> "RieszForest":
        return load_forest(path)


def fit_forest(data: Dataset, moment: MomentFunctional,
               config: RieszForestConfig) -> RieszForest:
    """Fit ``config.n_trees`` honest trees with seed-split RNG streams.

    Parallel and serial builds agree bit-for-bit because each tree owns
    an independent spawned RNG stream.
    """
    if moment.treatment_kind != data.treatment_kind:
        raise ValidationError(
            f"moment kind expects {moment.treatment_kind} treatment, "
            f"dataset is {data.treatment_kind}")
    fmap = _resolve_feature_map(config, moment)
    ctx = _build_context(data, moment, fmap, config.multitask)
    pool = np.arange(data.n, dtype=np.int64)
    if config.honest and data.n < 2 * config.min_samples_leaf:
        raise EmptyTreeError(
            "honest trees need at least 2*min_samples_leaf samples")
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees = _run_tree_builds(
        [lambda s=s: _grow_from_pool(ctx, pool, config, _generator(s))
         for s in seeds], config.n_jobs)
    resolved = dataclasses.replace(config, feature_map=fmap)
    return RieszForest(tuple(trees), resolved, fmap, data.d,
                       config.multitask, regression_only=False)


def fit_regression_forest(x, y, config: RieszForestConfig | None = None
                          ) -> RieszForest:
    """Fit a conditional-mean forest of ``y`` on ``x``.

    Uses the constant feature map, so leaves carry local means and the
    split criterion reduces to variance reduction.  Defaults to ``l2=0``
    (the local system is perfectly conditioned) unless a config is
    given.
    """
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    y = np.asarray(y, dtype=np.float64)
    if y.shape[0] != x.shape[0]:
        raise ShapeError("x and y must have equal length")
    if config is None:
        config = RieszForestConfig(l2=0.0)
    fmap = FeatureMap("polynomial", degree=0)
    data = Dataset(y=y, t=np.zeros(y.shape[0]), x=x,
                   treatment_kind="continuous")
    ctx = _build_context(data, None, fmap, with_regression=True)
    pool = np.arange(data.n, dtype=np.int64)
    if config.honest and data.n < 2 * config.min_samples_leaf:
        raise EmptyTreeError(
            "honest trees need at least 2*min_samples_leaf samples")
    seeds = np.random.SeedSequence(config.seed).spawn(config.n_trees)
    trees = _run_tree_builds(
        [lambda s=s: _grow_from_pool(ctx, pool, config, _generator(s))
         for s in seeds], config.n_jobs)
    resolved = dataclasses.replace(config, feature_map=fmap)
    return RieszForest(tuple(trees), resolved, fmap, data.d,
                       multitask=True, regression_only=True)


def _run_tree_builds(builders: list[Callable[[], Tree]],
                     n_jobs: int) -> list[Tree]:
    if n_jobs == 1 or len(builders) == 1:
        return [build() for build in builders]
    from joblib import Parallel, delayed
    return Parallel(n_jobs=n_jobs, prefer="threads")(
        delayed(build)() for build in builders)


# --------------------------------------------------------------------------
# prediction


def _tree_leaves(tree: Tree, x: np.ndarray) -> np.ndarray:
    """Leaf statistic row index for each query point."""
    node = np.zeros(x.shape[0], dtype=np.int64)
    while True:
        feat = tree.feature[node]
        rows = np.nonzero(feat >= 0)[0]
        if rows.size == 0:
            return tree.leaf_id[node]
        at = node[rows]
        go_left = x[rows, feat[rows]] <= tree.threshold[at]
        node[rows] = np.where(go_left, tree.left[at], tree.right[at])


def _check_query(forest: RieszForest, x) -> np.ndarray:
    x = np.atleast_2d(np.asarray(x, dtype=np.float64))
    if x.ndim != 2 or x.shape[1] != forest.n_features:
        raise ShapeError(
            f"query needs {forest.n_features} covariate columns")
    return x


def _aggregate(forest: RieszForest, x: np.ndarray,
               channel: str) -> np.ndarray:
    """Equal-weight leaf-statistic averages solved at each query point.

    Returns local coefficients of shape ``(m, d_phi)``.
    """
    d = forest.feature_map.d_phi
    m = x.shape[0]
    acc_j = np.zeros((m, d, d))
    acc_m = np.zeros((m, d))
    for tree in forest.trees:
        leaves = _tree_leaves(tree, x)
        acc_j += tree.leaf_j[leaves]
        acc_m += (tree.leaf_m if channel == "riesz"
                  else tree.leaf_m_reg)[leaves]
    n_trees = float(len(forest.trees))
    j_bar = acc_j / n_trees
    m_bar = acc_m / n_trees
    a = j_bar + forest.config.l2 * np.eye(d)
    ok = _ok_systems(a)
    if not np.all(ok):
        raise NumericError(
            f"aggregated leaf statistics are degenerate at "
            f"{int(np.sum(~ok))} of {m} query points")
    return np.linalg.solve(a, m_bar[..., None])[..., 0]


def predict_beta(forest: RieszForest, x) -> np.ndarray:
    """Local Riesz coefficients ``beta(x)``, shape ``(m, d_phi)``."""
    if forest.regression_only:
        raise ArgumentError("pure-regression forest has no Riesz channel")
    return _aggregate(forest, _check_query(forest, x), "riesz")


def _linear_value(forest: RieszForest, t, x, channel: str,
                  derivative: bool) -> np.ndarray:
    x = _check_query(forest, x)
    t = np.broadcast_to(np.asarray(t, dtype=np.float64),
                        (x.shape[0],)).astype(np.float64)
    coef = _aggregate(forest, x, channel)
    basis = (forest.feature_map.derivative(t) if derivative
             else forest.feature_map.evaluate(t))
    return np.sum(basis * coef, axis=1)


def predict_alpha(forest: RieszForest, t, x) -> np.ndarray:
    """Riesz representer ``<phi(t, x), beta(x)>`` at query points."""
    if forest.regression_only:
        raise ArgumentError("pure-regression forest has no Riesz channel")
    return _linear_value(forest, t, x, "riesz", derivative=False)


def predict_g(forest: RieszForest, t, x) -> np.ndarray:
    """Regression value ``<phi(t, x), gamma(x)>``; multitask only."""
    if not (forest.multitask or forest.regression_only):
        raise ArgumentError(
            "regression channel requires a multitask forest")
    return _linear_value(forest, t, x, "reg", derivative=False)


def predict_regression(forest: RieszForest, x) -> np.ndarray:
    """Conditional-mean prediction of a pure-regression forest."""
    if not forest.regression_only:
        raise ArgumentError("forest was not fit in pure-regression mode")
    x = _check_query(forest, x)
    return predict_g(forest, np.zeros(x.shape[0]), x)


class ForestOracle:
    """Function oracle ``(t, x) -> value`` over a fitted forest.

    Smooth (polynomial) feature maps also expose ``d_dt`` with the
    analytic derivative ``<phi'(t), coef(x)>``; consumers without it
    fall back to finite differences through ``__call__``.
    """

    def __init__(self, forest: RieszForest, channel: str) -> None:
        self._forest = forest
        self._channel = channel

    def __call__(self, t, x) -> np.ndarray:
        return _linear_value(self._forest, t, x, self._channel,
                             derivative=False)


class SmoothForestOracle(ForestOracle):
    def d_dt(self, t, x) -> np.ndarray:
        return _linear_value(self._forest, t, x, self._channel,
                             derivative=True)


def _make_oracle(forest: RieszForest, channel: str) -> ForestOracle:
    if forest.feature_map.smooth:
        return SmoothForestOracle(forest, channel)
    return ForestOracle(forest, channel)


# --------------------------------------------------------------------------
# serialization


def save_forest(forest: RieszForest, path: str) -> None:
    """Write the forest to the versioned binary container."""
    config = dataclasses.asdict(forest.config)
    config["feature_map"] = forest.feature_map.describe()
    meta = {
        "config": config,
        "n_features": int(forest.n_features),
        "multitask": bool(forest.multitask),
        "regression_only": bool(forest.regression_only),
        "n_trees": len(forest.trees),
    }
    arrays: dict[str, np.ndarray] = {}
    for i, tree in enumerate(forest.trees):
        arrays[f"t{i}.feature"] = tree.feature
        arrays[f"t{i}.threshold"] = tree.threshold
        arrays[f"t{i}.left"] = tree.left
        arrays[f"t{i}.right"] = tree.right
        arrays[f"t{i}.leaf_id"] = tree.leaf_id
        arrays[f"t{i}.leaf_count"] = tree.leaf_count
        arrays[f"t{i}.leaf_j"] = tree.leaf_j
        arrays[f"t{i}.leaf_m"] = tree.leaf_m
        if tree.leaf_m_reg is not None:
            arrays[f"t{i}.leaf_m_reg"] = tree.leaf_m_reg
    modelio.write_model(path, _MODEL_KIND, meta, arrays)


def load_forest(path: str) -> RieszForest:
    """Read a forest written by :func:`save_forest`."""
    kind, meta, arrays = modelio.read_model(path)
    if kind != _MODEL_KIND:
        raise ValidationError(f"expected a {_MODEL_KIND} file, got {kind!r}")
    config_dict = dict(meta["config"])
    fmap = FeatureMap.from_description(config_dict["feature_map"])
    config_dict["feature_map"] = fmap
    config = RieszForestConfig(**config_dict)
    trees = []
    for i in range(int(meta["n_trees"])):
        trees.append(Tree(
            feature=arrays[f"t{i}.feature"],
            threshold=arrays[f"t{i}.threshold"],
            left=arrays[f"t{i}.left"],
            right=arrays[f"t{i}.right"],
            leaf_id=arrays[f"t{i}.leaf_id"],
            leaf_count=arrays[f"t{i}.leaf_count"],
            leaf_j=arrays[f"t{i}.leaf_j"],
            leaf_m=arrays[f"t{i}.leaf_m"],
            leaf_m_reg=arrays.get(f"t{i}.leaf_m_reg"),
        ))
    return RieszForest(tuple(trees), config, fmap,
                       int(meta["n_features"]), bool(meta["multitask"]),
                       regression_only=bool(meta["regression_only"]))
