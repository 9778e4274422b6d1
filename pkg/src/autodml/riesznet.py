"""Multitask neural learner for the regression and its Riesz representer.

A shared ELU trunk consumes z = (t, x); the Riesz head is a pure inner
product of the trunk features with a coefficient vector (no bias), and
the regression path stacks a small MLP on the same features. For binary
treatments the regression path is bi-headed: one head per treatment arm,
selected by t. A scalar unpenalized coefficient eps implements targeted
regularization.

Training minimizes

    reg_loss + lambda1 * rr_loss + lambda2 * tmle_loss

by minibatch Adam in two stages (fast, then fine with warm start),
monitoring the combined loss, including the L2 penalty, on a held-out
test fold and returning the best-on-test weights. Weight matrices decay;
biases and eps do not.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import neuralcore as nc
from .dataset import Dataset, train_test_split
from .errors import (ArgumentError, NumericError, TrainingError,
                     ValidationError)
from .modelio import read_model, write_model
from .moments import MomentFunctional, empirical_riesz_loss

TRUNK_NAME = "shared"


@dataclass(frozen=True)
class StageConfig:
    lr: float
    max_epochs: int
    patience: int
    tol: float

    def __post_init__(self) -> None:
        if self.lr <= 0 or self.max_epochs < 1 or self.patience < 1 or self.tol < 0:
            raise ArgumentError("invalid stage configuration")


@dataclass(frozen=True)
class RieszNetConfig:
    """Architecture and schedule knobs; defaults follow the reference runs."""

    shared_widths: tuple[int, ...] = (200, 200, 200)
    reg_widths: tuple[int, ...] = (100, 100)
    bi_headed: bool | None = None
    riesz_weight: float = 0.1
    tmle_weight: float = 1.0
    l2_penalty: float = 1e-3
    fast: StageConfig = field(default_factory=lambda: StageConfig(1e-4, 100, 2, 1e-4))
    fine: StageConfig = field(default_factory=lambda: StageConfig(1e-5, 600, 40, 1e-4))
    batch_size: int = 64
    test_fraction: float = 0.2
    seed: int = 0

    def __post_init__(self) -> None:
        if len(self.shared_widths) < 1 or len(self.reg_widths) < 1:
            raise ArgumentError("need at least one shared and one regression layer")
        if min(self.shared_widths) < 1 or min(self.reg_widths) < 1:
            raise ArgumentError("layer widths must be positive")
        if self.riesz_weight < 0 or self.tmle_weight < 0:
            raise ArgumentError("loss weights must be nonnegative")
        if self.l2_penalty < 0 or self.batch_size < 1:
            raise ArgumentError("invalid penalty or batch size")
        if not 0.0 < self.test_fraction < 1.0:
            raise ArgumentError("test_fraction must lie in (0,1)")


@dataclass(frozen=True)
class Standardization:
    """Train-fold input standardization, applied inside the learner."""

    x_mean: np.ndarray
    x_scale: np.ndarray
    t_mean: float
    t_scale: float

    @staticmethod
    def fit(t: np.ndarray, x: np.ndarray, standardize_t: bool) -> "Standardization":
        x_mean = x.mean(axis=0)
        x_scale = x.std(axis=0)
        x_scale = np.where(x_scale > 0.0, x_scale, 1.0)
        if standardize_t:
            t_scale = float(t.std())
            return Standardization(x_mean, x_scale, float(t.mean()),
                                   t_scale if t_scale > 0.0 else 1.0)
        return Standardization(x_mean, x_scale, 0.0, 1.0)

    def z(self, t: np.ndarray, x: np.ndarray) -> np.ndarray:
        t = np.asarray(t, dtype=np.float64).reshape(-1, 1)
        x = np.asarray(x, dtype=np.float64)
        return np.hstack([(t - self.t_mean) / self.t_scale,
                          (x - self.x_mean) / self.x_scale])


def _head_names(bi_headed: bool) -> list[str]:
    return ["reg0", "reg1"] if bi_headed else ["reg"]


def _mlp_to_dict(prefix: str, mlp: nc.MlpParams, out: dict[str, np.ndarray]) -> None:
    for i, (w, b) in enumerate(zip(mlp.weights, mlp.biases)):
        out[f"{prefix}.W{i}"] = w
        out[f"{prefix}.b{i}"] = b


def _mlp_from_dict(prefix: str, activations: Sequence[str],
                   params: dict[str, np.ndarray]) -> nc.MlpParams:
    n = len(activations)
    return nc.MlpParams([params[f"{prefix}.W{i}"] for i in range(n)],
                        [params[f"{prefix}.b{i}"] for i in range(n)],
                        list(activations))


def _tensors(prefix: str, n_layers: int, leaves: dict) -> tuple[list, list]:
    return ([leaves[f"{prefix}.W{i}"] for i in range(n_layers)],
            [leaves[f"{prefix}.b{i}"] for i in range(n_layers)])


@dataclass(frozen=True)
class _Arch:
    """Static architecture facts shared by training and prediction."""

    trunk_acts: tuple[str, ...]
    head_acts: tuple[str, ...]
    bi_headed: bool

    @staticmethod
    def from_config(config: RieszNetConfig, bi_headed: bool) -> "_Arch":
        return _Arch(("elu",) * len(config.shared_widths),
                     ("elu",) * len(config.reg_widths) + ("identity",),
                     bi_headed)


def _init_params(config: RieszNetConfig, arch: _Arch, d_in: int,
                 rng: np.random.Generator) -> dict[str, np.ndarray]:
    trunk_widths = [d_in, *config.shared_widths]
    params: dict[str, np.ndarray] = {}
    _mlp_to_dict(TRUNK_NAME, nc.init_mlp(trunk_widths, arch.trunk_acts, rng), params)
    feat = config.shared_widths[-1]
    bound = 1.0 / np.sqrt(feat)
    params["beta"] = rng.uniform(-bound, bound, size=(feat, 1))
    head_widths = [feat, *config.reg_widths, 1]
    for name in _head_names(arch.bi_headed):
        _mlp_to_dict(name, nc.init_mlp(head_widths, arch.head_acts, rng), params)
    params["eps"] = np.zeros((1, 1))
    return params


def _decay_exempt_keys(params: dict[str, np.ndarray]) -> frozenset[str]:
    return frozenset(k for k in params if ".b" in k or k == "eps")


def _losses_tape(leaves: dict, arch: _Arch, std: Standardization,
                 moment: MomentFunctional, y: np.ndarray, t: np.ndarray,
                 x: np.ndarray) -> dict[str, nc.Tensor]:
    """Tape graph of the three loss terms on one batch."""
    b = y.shape[0]
    n_trunk = len(arch.trunk_acts)
    n_head = len(arch.head_acts)
    trunk_w, trunk_b = _tensors(TRUNK_NAME, n_trunk, leaves)
    z_obs = std.z(t, x)
    exact = (moment.is_derivative
             and moment.derivative_mode == "exact_if_available")
    if exact:
        direction = np.zeros_like(z_obs)
        direction[:, 0] = 1.0
        feats, dfeats = nc.mlp_tangent_tape(trunk_w, trunk_b, arch.trunk_acts,
                                            z_obs, direction)
        alpha_obs = nc.t_matmul(feats, leaves["beta"])
        dalpha = nc.t_matmul(dfeats, leaves["beta"])
        (_, scale), = moment.derivative_linearization(t, x)
        m_vec = nc.t_mul((scale / std.t_scale).reshape(b, 1), dalpha)
        feats_obs = feats
    else:
        plan = moment.linearization(t, x)
        z_all = np.vstack([z_obs] + [std.z(t_k, x) for t_k, _ in plan])
        feats = nc.mlp_forward_tape(trunk_w, trunk_b, arch.trunk_acts, z_all)
        alpha_all = nc.t_matmul(feats, leaves["beta"])
        alpha_obs = nc.t_gather_rows(alpha_all, np.arange(b))
        m_vec = None
        for k, (_, coeff) in enumerate(plan):
            rows = np.arange((k + 1) * b, (k + 2) * b)
            term = nc.t_mul(np.asarray(coeff).reshape(b, 1),
                            nc.t_gather_rows(alpha_all, rows))
            m_vec = term if m_vec is None else nc.t_add(m_vec, term)
        feats_obs = nc.t_gather_rows(feats, np.arange(b))
    rr = nc.t_sub(nc.t_mean(nc.t_square(alpha_obs)),
                  nc.t_mul(2.0, nc.t_mean(m_vec)))

    y_col = y.reshape(b, 1)
    eps = leaves["eps"]
    if arch.bi_headed:
        reg_terms = []
        tmle_terms = []
        for arm, name in ((0.0, "reg0"), (1.0, "reg1")):
            idx = np.flatnonzero(t == arm)
            head_w, head_b = _tensors(name, n_head, leaves)
            g_arm = nc.mlp_forward_tape(head_w, head_b, arch.head_acts,
                                        nc.t_gather_rows(feats_obs, idx), name=name)
            resid = nc.t_sub(y_col[idx], g_arm)
            reg_terms.append(nc.t_sum(nc.t_square(resid)))
            alpha_arm = nc.t_gather_rows(alpha_obs, idx)
            tmle_resid = nc.t_sub(resid, nc.t_mul(eps, alpha_arm))
            tmle_terms.append(nc.t_sum(nc.t_square(tmle_resid)))
        reg = nc.t_mul(1.0 / b, nc.t_add(reg_terms[0], reg_terms[1]))
        tmle = nc.t_mul(1.0 / b, nc.t_add(tmle_terms[0], tmle_terms[1]))
    else:
        head_w, head_b = _tensors("reg", n_head, leaves)
        g_obs = nc.mlp_forward_tape(head_w, head_b, arch.head_acts, feats_obs,
                                    name="reg")
        resid = nc.t_sub(y_col, g_obs)
        reg = nc.t_mean(nc.t_square(resid))
        tmle = nc.t_mean(nc.t_square(nc.t_sub(resid, nc.t_mul(eps, alpha_obs))))
    return {"reg": reg, "rr": rr, "tmle": tmle}


def _penalty_tape(leaves: dict, exempt: frozenset[str]) -> nc.Tensor:
    total = None
    for key in sorted(leaves):
        if key in exempt:
            continue
        term = nc.t_sum(nc.t_square(leaves[key]))
        total = term if total is None else nc.t_add(total, term)
    return total


class RieszNetObjective:
    """Differentiable view of the training losses for one fixed batch.

    Instances are callables compatible with neuralcore.grad: they take
    (leaves, batch) and return a scalar Tensor. ``include_penalty``
    selects the full combined loss of the optimization problem; training
    steps leave it off and let Adam apply decoupled decay instead.
    """

    def __init__(self, arch: _Arch, std: Standardization, config: RieszNetConfig,
                 moment: MomentFunctional, include_penalty: bool):
        self.arch = arch
        self.std = std
        self.config = config
        self.moment = moment
        self.include_penalty = include_penalty

    def __call__(self, leaves: dict, batch) -> nc.Tensor:
        y, t, x = batch
        losses = _losses_tape(leaves, self.arch, self.std, self.moment, y, t, x)
        total = nc.t_add(losses["reg"],
                         nc.t_add(nc.t_mul(self.config.riesz_weight, losses["rr"]),
                                  nc.t_mul(self.config.tmle_weight, losses["tmle"])))
        if self.include_penalty and self.config.l2_penalty > 0.0:
            total = nc.t_add(total, nc.t_mul(self.config.l2_penalty,
                                             _penalty_tape(leaves, _decay_exempt_keys(leaves))))
        return total


class _AlphaOracle:
    """alpha(z) = <f1(z), beta>, with an exact d/dt channel."""

    def __init__(self, shared: nc.MlpParams, beta: np.ndarray, std: Standardization):
        self._shared = shared
        self._beta = beta
        self._std = std

    def __call__(self, t, x) -> np.ndarray:
        feats = nc.mlp_forward(self._shared, self._std.z(t, x))
        return feats @ self._beta

    def d_dt(self, t, x) -> np.ndarray:
        z = self._std.z(t, x)
        direction = np.zeros_like(z)
        direction[:, 0] = 1.0
        _, dfeats = nc.tangent_forward(self._shared, z, direction)
        return (dfeats @ self._beta) / self._std.t_scale


class _GOracle:
    """Regression path; bi-headed nets select the head by t."""

    def __init__(self, shared: nc.MlpParams, heads: dict[str, nc.MlpParams],
                 std: Standardization, bi_headed: bool):
        self._shared = shared
        self._heads = heads
        self._std = std
        self._bi_headed = bi_headed
        if not bi_headed:
            # single-head nets are smooth in t, so expose the exact channel
            self.d_dt = self._d_dt

    def __call__(self, t, x) -> np.ndarray:
        t_arr = np.atleast_1d(np.asarray(t, dtype=np.float64))
        feats = nc.mlp_forward(self._shared, self._std.z(t_arr, x))
        if not self._bi_headed:
            return nc.mlp_forward(self._heads["reg"], feats)[:, 0]
        if not np.all((t_arr == 0.0) | (t_arr == 1.0)):
            raise ValidationError("bi-headed regression is defined for t in {0,1}")
        g0 = nc.mlp_forward(self._heads["reg0"], feats)[:, 0]
        g1 = nc.mlp_forward(self._heads["reg1"], feats)[:, 0]
        return np.where(t_arr == 1.0, g1, g0)

    def _d_dt(self, t, x) -> np.ndarray:
        z = self._std.z(t, x)
        direction = np.zeros_like(z)
        direction[:, 0] = 1.0
        feats, dfeats = nc.tangent_forward(self._shared, z, direction)
        _, dg = nc.tangent_forward(self._heads["reg"], feats, dfeats)
        return dg[:, 0] / self._std.t_scale


@dataclass
class FittedRieszNet:
    """Trained trunk, Riesz head, regression head(s), and TMLE scalar."""

    shared: nc.MlpParams
    beta: np.ndarray
    heads: dict[str, nc.MlpParams]
    eps: float
    std: Standardization
    config: RieszNetConfig
    treatment_kind: str
    history: list[dict] = field(default_factory=list)

    def __post_init__(self) -> None:
        if not np.isfinite(self.eps):
            raise NumericError("non-finite targeting coefficient")

    @property
    def bi_headed(self) -> bool:
        return "reg1" in self.heads

    def alpha_oracle(self) -> _AlphaOracle:
        return _AlphaOracle(self.shared, self.beta, self.std)

    def g_oracle(self) -> _GOracle:
        return _GOracle(self.shared, self.heads, self.std, self.bi_headed)

    def predict(self, t, x) -> tuple[np.ndarray, np.ndarray]:
        return self.g_oracle()(t, x), self.alpha_oracle()(t, x)

    def _arch(self) -> _Arch:
        return _Arch.from_config(self.config, self.bi_headed)

    def as_param_dict(self) -> dict[str, np.ndarray]:
        params: dict[str, np.ndarray] = {}
        _mlp_to_dict(TRUNK_NAME, self.shared, params)
        params["beta"] = self.beta.reshape(-1, 1)
        for name, mlp in self.heads.items():
            _mlp_to_dict(name, mlp, params)
        params["eps"] = np.array([[self.eps]])
        return params

    def objective(self, moment: MomentFunctional,
                  include_penalty: bool = True) -> tuple[RieszNetObjective, dict]:
        """(objective, params) pair ready for neuralcore.grad."""
        return (RieszNetObjective(self._arch(), self.std, self.config, moment,
                                  include_penalty),
                self.as_param_dict())

    def save(self, path: str) -> None:
        arrays = dict(self.as_param_dict())
        arrays["x_mean"] = self.std.x_mean
        arrays["x_scale"] = self.std.x_scale
        header = {
            "shared_widths": list(self.config.shared_widths),
            "reg_widths": list(self.config.reg_widths),
            "bi_headed": self.bi_headed,
            "t_mean": self.std.t_mean,
            "t_scale": self.std.t_scale,
            "treatment_kind": self.treatment_kind,
            "l2_penalty": self.config.l2_penalty,
            "riesz_weight": self.config.riesz_weight,
            "tmle_weight": self.config.tmle_weight,
        }
        write_model(path, "riesznet", header, arrays)

    @staticmethod
    def load(path: str) -> "FittedRieszNet":
        kind, meta, arrays = read_model(path)
        if kind != "riesznet":
            raise ValidationError(f"{path}: expected a riesznet model, found {kind!r}")
        config = RieszNetConfig(shared_widths=tuple(meta["shared_widths"]),
                                reg_widths=tuple(meta["reg_widths"]),
                                bi_headed=meta["bi_headed"],
                                riesz_weight=meta["riesz_weight"],
                                tmle_weight=meta["tmle_weight"],
                                l2_penalty=meta["l2_penalty"])
        arch = _Arch.from_config(config, meta["bi_headed"])
        shared = _mlp_from_dict(TRUNK_NAME, arch.trunk_acts, arrays)
        heads = {name: _mlp_from_dict(name, arch.head_acts, arrays)
                 for name in _head_names(meta["bi_headed"])}
        std = Standardization(arrays["x_mean"], arrays["x_scale"],
                              meta["t_mean"], meta["t_scale"])
        return FittedRieszNet(shared, arrays["beta"][:, 0], heads,
                              float(arrays["eps"][0, 0]), std, config,
                              meta["treatment_kind"])


# ---------------------------------------------------------------------------
# Public loss views (oracle path, usable for monitoring and tests)
# ---------------------------------------------------------------------------

def rr_loss(net: FittedRieszNet, batch: Dataset, moment: MomentFunctional) -> float:
    """E_n[alpha^2 - 2 m(W; alpha)]; identical to the oracle-view loss."""
    return empirical_riesz_loss(net.alpha_oracle(), moment, batch)


def reg_loss(net: FittedRieszNet, batch: Dataset) -> float:
    g = net.g_oracle()(batch.t, batch.x)
    return float(np.mean((batch.y - g) ** 2))


def tmle_loss(net: FittedRieszNet, batch: Dataset) -> float:
    g = net.g_oracle()(batch.t, batch.x)
    alpha = net.alpha_oracle()(batch.t, batch.x)
    return float(np.mean((batch.y - g - net.eps * alpha) ** 2))


def penalty_value(params: dict[str, np.ndarray], l2_penalty: float) -> float:
    exempt = _decay_exempt_keys(params)
    return l2_penalty * float(sum(np.sum(v * v) for k, v in sorted(params.items())
                                  if k not in exempt))


def combined_loss(net: FittedRieszNet, batch: Dataset, config: RieszNetConfig,
                  moment: MomentFunctional) -> float:
    """reg + lambda1 rr + lambda2 tmle + l2 |weights without eps|^2."""
    return (reg_loss(net, batch)
            + config.riesz_weight * rr_loss(net, batch, moment)
            + config.tmle_weight * tmle_loss(net, batch)
            + penalty_value(net.as_param_dict(), config.l2_penalty))


# ---------------------------------------------------------------------------
# Training
# ---------------------------------------------------------------------------

def _evaluate_combined(params: dict, arch: _Arch, std: Standardization,
                       config: RieszNetConfig, moment: MomentFunctional,
                       y, t, x) -> float:
    objective = RieszNetObjective(arch, std, config, moment, include_penalty=True)
    leaves = {k: nc.Tensor(v) for k, v in params.items()}
    return float(objective(leaves, (y, t, x)).data)


def train(data: Dataset, config: RieszNetConfig,
          moment: MomentFunctional) -> FittedRieszNet:
    """Two-stage Adam training; deterministic in config.seed."""
    if moment.treatment_kind != data.treatment_kind:
        raise ValidationError(
            f"moment kind expects {moment.treatment_kind} treatment, "
            f"dataset is {data.treatment_kind}")
    bi_headed = config.bi_headed
    if bi_headed is None:
        bi_headed = data.treatment_kind == "binary"
    if bi_headed and data.treatment_kind != "binary":
        raise ValidationError("bi-headed heads require a binary treatment")
    arch = _Arch.from_config(config, bi_headed)

    split_seed, init_seed, shuffle_seed = (
        int(s) for s in np.random.SeedSequence(config.seed).generate_state(3))
    train_idx, test_idx = train_test_split(data.n, config.test_fraction,
                                           seed=split_seed)
    y_tr, t_tr, x_tr = data.y[train_idx], data.t[train_idx], data.x[train_idx]
    y_te, t_te, x_te = data.y[test_idx], data.t[test_idx], data.x[test_idx]

    std = Standardization.fit(t_tr, x_tr, standardize_t=data.treatment_kind == "continuous")
    params = _init_params(config, arch, 1 + data.d,
                          np.random.Generator(np.random.PCG64(init_seed)))
    no_decay = _decay_exempt_keys(params)
    shuffle_rng = np.random.Generator(np.random.PCG64(shuffle_seed))
    objective = RieszNetObjective(arch, std, config, moment, include_penalty=False)

    best_loss = np.inf
    best_params = {k: v.copy() for k, v in params.items()}
    history: list[dict] = []

    for stage_name, stage in (("fast", config.fast), ("fine", config.fine)):
        state = nc.init_adam(params, lr=stage.lr)
        epochs_since_improvement = 0
        for epoch in range(stage.max_epochs):
            order = shuffle_rng.permutation(y_tr.shape[0])
            for start in range(0, order.shape[0], config.batch_size):
                rows = order[start:start + config.batch_size]
                batch = (y_tr[rows], t_tr[rows], x_tr[rows])
                try:
                    grads = nc.grad(objective, params, batch)
                except NumericError as exc:
                    raise TrainingError(
                        f"divergence in {stage_name} stage, epoch {epoch}: {exc}") from exc
                params, state = nc.adam_step(state, grads, config.l2_penalty,
                                             params, no_decay=no_decay)
            test_loss = _evaluate_combined(params, arch, std, config, moment,
                                           y_te, t_te, x_te)
            if not np.isfinite(test_loss):
                raise TrainingError(
                    f"divergence in {stage_name} stage, epoch {epoch}: "
                    "non-finite test loss")
            if test_loss < best_loss - stage.tol:
                epochs_since_improvement = 0
            else:
                epochs_since_improvement += 1
            if test_loss < best_loss:
                best_loss = test_loss
                best_params = {k: v.copy() for k, v in params.items()}
            history.append({"stage": stage_name, "epoch": epoch,
                            "test_combined": test_loss, "best_test": best_loss})
            if epochs_since_improvement >= stage.patience:
                break
        # warm start the next stage from the best weights seen so far
        params = {k: v.copy() for k, v in best_params.items()}

    shared = _mlp_from_dict(TRUNK_NAME, arch.trunk_acts, best_params)
    heads = {name: _mlp_from_dict(name, arch.head_acts, best_params)
             for name in _head_names(bi_headed)}
    resolved = RieszNetConfig(config.shared_widths, config.reg_widths, bi_headed,
                              config.riesz_weight, config.tmle_weight,
                              config.l2_penalty, config.fast, config.fine,
                              config.batch_size, config.test_fraction, config.seed)
    return FittedRieszNet(shared, best_params["beta"][:, 0], heads,
                          float(best_params["eps"][0, 0]), std, resolved,
                          data.treatment_kind, history)
