"""Dense feed-forward network engine on float64 numpy arrays.

Three layers of machinery:

* a small reverse-mode tape (:class:`Tensor` plus the ``t_*`` ops) that
  differentiates scalar objectives with respect to named parameter
  arrays;
* plain-numpy fast paths (:func:`mlp_forward`, :func:`tangent_forward`)
  for prediction, running the identical operation sequence so a frozen
  net's outputs can be reproduced bit-for-bit outside the tape;
* a bias-corrected Adam optimizer with decoupled L2 weight decay.

Everything is float64 and deterministic given a seed.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Iterable, Sequence

import numpy as np

from .errors import NumericError, ShapeError, ValidationError
from .modelio import read_model, write_model

ACTIVATIONS = ("elu", "relu", "identity")


# ---------------------------------------------------------------------------
# Reverse-mode tape
# ---------------------------------------------------------------------------

class Tensor:
    """Node in the backward tape wrapping one float64 ndarray."""

    __slots__ = ("data", "grad", "needs_grad", "label", "_parents", "_backward")

    def __init__(self, data, needs_grad: bool = False, label: str = "",
                 parents: tuple = (), backward=None):
        self.data = np.asarray(data, dtype=np.float64)
        self.grad: np.ndarray | None = None
        self.needs_grad = needs_grad
        self.label = label
        self._parents = parents
        self._backward = backward


def _wrap(value) -> Tensor:
    return value if isinstance(value, Tensor) else Tensor(value)


def _accumulate(node: Tensor, grad: np.ndarray) -> None:
    if not node.needs_grad:
        return
    if node.grad is None:
        node.grad = np.zeros_like(node.data)
    node.grad += grad


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, size in enumerate(shape):
        if size == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad.reshape(shape)


def _make(data, parents: Iterable[Tensor], backward, label: str) -> Tensor:
    parents = tuple(parents)
    if any(p.needs_grad for p in parents):
        return Tensor(data, needs_grad=True, label=label, parents=parents,
                      backward=backward)
    return Tensor(data, label=label)


def t_add(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data + b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(g, b.data.shape))
    return _make(out_data, (a, b), backward, "add")


def t_sub(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data - b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g, a.data.shape))
        _accumulate(b, _unbroadcast(-g, b.data.shape))
    return _make(out_data, (a, b), backward, "sub")


def t_mul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    out_data = a.data * b.data

    def backward(g):
        _accumulate(a, _unbroadcast(g * b.data, a.data.shape))
        _accumulate(b, _unbroadcast(g * a.data, b.data.shape))
    return _make(out_data, (a, b), backward, "mul")


def t_matmul(a, b) -> Tensor:
    a, b = _wrap(a), _wrap(b)
    if a.data.ndim != 2 or b.data.ndim != 2:
        raise ShapeError("t_matmul expects 2-d operands")
    out_data = a.data @ b.data

    def backward(g):
        _accumulate(a, g @ b.data.T)
        _accumulate(b, a.data.T @ g)
    return _make(out_data, (a, b), backward, "matmul")


def t_square(a) -> Tensor:
    a = _wrap(a)
    out_data = a.data * a.data

    def backward(g):
        _accumulate(a, 2.0 * g * a.data)
    return _make(out_data, (a,), backward, "square")


def t_elu(a) -> Tensor:
    a = _wrap(a)
    neg = a.data < 0.0
    exp_neg = np.exp(np.where(neg, a.data, 0.0))
    out_data = np.where(neg, exp_neg - 1.0, a.data)

    def backward(g):
        _accumulate(a, g * np.where(neg, exp_neg, 1.0))
    return _make(out_data, (a,), backward, "elu")


def t_elu_prime(a) -> Tensor:
    """ELU'(x) as a differentiable quantity: 1 for x>=0, e^x below."""
    a = _wrap(a)
    neg = a.data < 0.0
    exp_neg = np.exp(np.where(neg, a.data, 0.0))
    out_data = np.where(neg, exp_neg, 1.0)

    def backward(g):
        _accumulate(a, g * np.where(neg, exp_neg, 0.0))
    return _make(out_data, (a,), backward, "elu_prime")


def t_relu(a) -> Tensor:
    a = _wrap(a)
    pos = a.data > 0.0
    out_data = np.where(pos, a.data, 0.0)

    def backward(g):
        _accumulate(a, g * pos)
    return _make(out_data, (a,), backward, "relu")


def t_relu_prime(a) -> Tensor:
    """ReLU'(x); its own derivative is zero almost everywhere."""
    a = _wrap(a)
    out_data = (a.data > 0.0).astype(np.float64)

    def backward(g):
        _accumulate(a, np.zeros_like(a.data))
    return _make(out_data, (a,), backward, "relu_prime")


def t_sum(a) -> Tensor:
    a = _wrap(a)
    out_data = np.asarray(a.data.sum())

    def backward(g):
        _accumulate(a, np.broadcast_to(g, a.data.shape).copy())
    return _make(out_data, (a,), backward, "sum")


def t_mean(a) -> Tensor:
    a = _wrap(a)
    out_data = np.asarray(a.data.mean())
    size = a.data.size

    def backward(g):
        _accumulate(a, np.broadcast_to(g / size, a.data.shape).copy())
    return _make(out_data, (a,), backward, "mean")


def t_gather_rows(a, idx: np.ndarray) -> Tensor:
    a = _wrap(a)
    idx = np.asarray(idx, dtype=np.intp)
    out_data = a.data[idx]

    def backward(g):
        if a.needs_grad:
            acc = np.zeros_like(a.data)
            np.add.at(acc, idx, g)
            _accumulate(a, acc)
    return _make(out_data, (a,), backward, "gather_rows")


_ACT_OPS: dict[str, Callable[[Tensor], Tensor]] = {
    "elu": t_elu, "relu": t_relu, "identity": lambda t: t}
_ACT_PRIME_OPS: dict[str, Callable[[Tensor], Tensor]] = {
    "elu": t_elu_prime, "relu": t_relu_prime}


def backward(root: Tensor) -> None:
    """Reverse-mode sweep seeding d(root)/d(root) = 1. Root must be scalar."""
    if root.data.size != 1:
        raise ShapeError("backward root must be a scalar")
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen or not node.needs_grad:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    root.grad = np.ones_like(root.data)
    for node in reversed(order):
        if node._backward is not None and node.grad is not None:
            node._backward(node.grad)


def _first_nonfinite_label(root: Tensor) -> str:
    """Earliest tape node with a non-finite value, for error messages."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            stack.append((parent, False))
    for node in order:
        if not np.all(np.isfinite(node.data)):
            return node.label or "unlabeled op"
    return "objective"


# ---------------------------------------------------------------------------
# MLP parameters and forward passes
# ---------------------------------------------------------------------------

@dataclass
class MlpParams:
    """Weights (fan_in, fan_out), biases (fan_out,), one activation per layer."""

    weights: list[np.ndarray]
    biases: list[np.ndarray]
    activations: list[str]

    def __post_init__(self) -> None:
        if not (len(self.weights) == len(self.biases) == len(self.activations)):
            raise ValidationError("layer lists must have equal length")
        for i, (w, b, act) in enumerate(zip(self.weights, self.biases, self.activations)):
            if act not in ACTIVATIONS:
                raise ValidationError(f"layer {i}: unknown activation {act!r}")
            if w.ndim != 2 or b.ndim != 1 or w.shape[1] != b.shape[0]:
                raise ShapeError(f"layer {i}: weight {w.shape} and bias {b.shape} mismatch")
            if i > 0 and self.weights[i - 1].shape[1] != w.shape[0]:
                raise ShapeError(f"layers {i - 1} and {i} do not compose")
            if not (np.all(np.isfinite(w)) and np.all(np.isfinite(b))):
                raise NumericError(f"non-finite parameter entries in layer {i}")

    @property
    def widths(self) -> list[int]:
        return [self.weights[0].shape[0]] + [w.shape[1] for w in self.weights]

    def copy(self) -> "MlpParams":
        return MlpParams([w.copy() for w in self.weights],
                         [b.copy() for b in self.biases],
                         list(self.activations))


def init_mlp(widths: Sequence[int], activations: Sequence[str],
             rng: np.random.Generator) -> MlpParams:
    """Uniform fan-in init: W, b ~ U(-1/sqrt(fan_in), 1/sqrt(fan_in))."""
    if len(widths) < 2 or len(activations) != len(widths) - 1:
        raise ValidationError("need one activation per layer")
    weights, biases = [], []
    for fan_in, fan_out in zip(widths[:-1], widths[1:]):
        bound = 1.0 / np.sqrt(fan_in)
        weights.append(rng.uniform(-bound, bound, size=(fan_in, fan_out)))
        biases.append(rng.uniform(-bound, bound, size=fan_out))
    return MlpParams(weights, biases, list(activations))


def _check_input(params: MlpParams, x: np.ndarray) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x.reshape(1, -1)
    if x.shape[1] != params.weights[0].shape[0]:
        raise ShapeError(
            f"input width {x.shape[1]} does not match first layer {params.weights[0].shape[0]}")
    return x


def _apply_activation(act: str, s: np.ndarray) -> np.ndarray:
    if act == "elu":
        return np.where(s < 0.0, np.exp(np.where(s < 0.0, s, 0.0)) - 1.0, s)
    if act == "relu":
        return np.maximum(s, 0.0)
    return s


def mlp_forward(params: MlpParams, x: np.ndarray) -> np.ndarray:
    """Plain-numpy forward pass over a batch, (n, d_in) -> (n, d_out)."""
    a = _check_input(params, x)
    for w, b, act in zip(params.weights, params.biases, params.activations):
        a = _apply_activation(act, a @ w + b)
    return a


def tangent_forward(params: MlpParams, x: np.ndarray,
                    direction: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Forward pass carrying an input-space tangent (JVP).

    The primal computation is the same operation sequence as
    mlp_forward, so the first return value is bit-identical to it.
    """
    a = _check_input(params, x)
    da = np.asarray(direction, dtype=np.float64)
    if da.ndim == 1:
        da = np.broadcast_to(da, a.shape)
    if da.shape != a.shape:
        raise ShapeError(f"direction shape {da.shape} does not match input {a.shape}")
    da = da.astype(np.float64)
    for w, b, act in zip(params.weights, params.biases, params.activations):
        s = a @ w + b
        ds = da @ w
        if act == "elu":
            neg = s < 0.0
            exp_neg = np.exp(np.where(neg, s, 0.0))
            a = np.where(neg, exp_neg - 1.0, s)
            da = ds * np.where(neg, exp_neg, 1.0)
        elif act == "relu":
            a = np.maximum(s, 0.0)
            da = ds * (s > 0.0)
        else:
            a, da = s, ds
    return a, da


def mlp_forward_tape(weight_tensors: Sequence[Tensor], bias_tensors: Sequence[Tensor],
                     activations: Sequence[str], x, name: str = "mlp") -> Tensor:
    """Tape version of mlp_forward with labeled layer outputs."""
    a = _wrap(x)
    for i, (w, b, act) in enumerate(zip(weight_tensors, bias_tensors, activations)):
        prod = t_matmul(a, w)
        prod.label = f"{name}.layer{i}.affine"
        s = t_add(prod, b)
        s.label = f"{name}.layer{i}.affine"
        a = _ACT_OPS[act](s)
        a.label = f"{name}.layer{i}.{act}"
    return a


def mlp_tangent_tape(weight_tensors: Sequence[Tensor], bias_tensors: Sequence[Tensor],
                     activations: Sequence[str], x, direction,
                     name: str = "mlp") -> tuple[Tensor, Tensor]:
    """Tape version of tangent_forward; gradients flow through both outputs."""
    a = _wrap(x)
    da = _wrap(direction)
    for i, (w, b, act) in enumerate(zip(weight_tensors, bias_tensors, activations)):
        prod = t_matmul(a, w)
        prod.label = f"{name}.layer{i}.affine"
        s = t_add(prod, b)
        s.label = f"{name}.layer{i}.affine"
        ds = t_matmul(da, w)
        if act == "identity":
            a, da = s, ds
        else:
            a = _ACT_OPS[act](s)
            da = t_mul(ds, _ACT_PRIME_OPS[act](s))
        a.label = f"{name}.layer{i}.{act}"
    return a, da


# ---------------------------------------------------------------------------
# Objectives and gradients
# ---------------------------------------------------------------------------

def value_and_grad(objective, params: dict[str, np.ndarray],
                   batch) -> tuple[float, dict[str, np.ndarray]]:
    """Evaluate objective(leaves, batch) and differentiate it.

    ``objective`` receives a dict of leaf Tensors keyed like ``params``
    and must return a scalar Tensor built from tape ops.
    """
    leaves = {k: Tensor(v, needs_grad=True, label=k) for k, v in params.items()}
    out = objective(leaves, batch)
    if not isinstance(out, Tensor):
        raise ValidationError("objective must return a tape Tensor")
    if not np.all(np.isfinite(out.data)):
        raise NumericError(f"non-finite value at {_first_nonfinite_label(out)}")
    backward(out)
    grads: dict[str, np.ndarray] = {}
    for key, leaf in leaves.items():
        g = leaf.grad if leaf.grad is not None else np.zeros_like(leaf.data)
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {key!r}")
        grads[key] = g
    return float(out.data), grads


def grad(objective, params: dict[str, np.ndarray], batch) -> dict[str, np.ndarray]:
    """Reverse-mode gradient of a scalar objective; see value_and_grad."""
    return value_and_grad(objective, params, batch)[1]


def finite_difference_grad(objective, params: dict[str, np.ndarray], batch,
                           h: float = 1e-5) -> dict[str, np.ndarray]:
    """Central-difference gradient oracle (testing utility, O(p) evals)."""
    def evaluate(p: dict[str, np.ndarray]) -> float:
        leaves = {k: Tensor(v) for k, v in p.items()}
        return float(objective(leaves, batch).data)

    grads = {}
    for key, base in params.items():
        g = np.zeros_like(base)
        flat = base.reshape(-1)
        gflat = g.reshape(-1)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            hi = evaluate(params)
            flat[i] = orig - h
            lo = evaluate(params)
            flat[i] = orig
            gflat[i] = (hi - lo) / (2.0 * h)
        grads[key] = g
    return grads


# ---------------------------------------------------------------------------
# Adam
# ---------------------------------------------------------------------------

@dataclass
class AdamState:
    """Moment accumulators and hyperparameters for Adam."""

    lr: float
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(params: dict[str, np.ndarray], lr: float) -> AdamState:
    return AdamState(lr=lr,
                     m={k: np.zeros_like(v) for k, v in params.items()},
                     v={k: np.zeros_like(v) for k, v in params.items()})


def adam_step(state: AdamState, gradient: dict[str, np.ndarray], l2_penalty: float,
              params: dict[str, np.ndarray],
              no_decay: frozenset[str] | set[str] = frozenset(),
              ) -> tuple[dict[str, np.ndarray], AdamState]:
    """One bias-corrected Adam update with decoupled L2 decay.

    Effective gradient is gradient + l2 * param except for keys in
    ``no_decay`` (the unpenalized targeting coefficient).
    """
    step = state.step + 1
    new_params: dict[str, np.ndarray] = {}
    new_m: dict[str, np.ndarray] = {}
    new_v: dict[str, np.ndarray] = {}
    bc1 = 1.0 - state.beta1 ** step
    bc2 = 1.0 - state.beta2 ** step
    for key, p in params.items():
        g = gradient[key]
        if not np.all(np.isfinite(g)):
            raise NumericError(f"non-finite gradient for parameter {key!r}")
        if l2_penalty != 0.0 and key not in no_decay:
            g = g + l2_penalty * p
        m = state.beta1 * state.m[key] + (1.0 - state.beta1) * g
        v = state.beta2 * state.v[key] + (1.0 - state.beta2) * (g * g)
        new_params[key] = p - state.lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
        new_m[key] = m
        new_v[key] = v
    return new_params, replace(state, m=new_m, v=new_v, step=step)


# ---------------------------------------------------------------------------
# Serialization
# ---------------------------------------------------------------------------

def save_mlp(path: str, params: MlpParams, meta: dict | None = None) -> None:
    """Write an MLP to the binary container with an architecture header."""
    header = {"widths": params.widths, "activations": list(params.activations),
              **(meta or {})}
    arrays: dict[str, np.ndarray] = {}
    for i, (w, b) in enumerate(zip(params.weights, params.biases)):
        arrays[f"W{i}"] = w
        arrays[f"b{i}"] = b
    write_model(path, "mlp", header, arrays)


def load_mlp(path: str) -> tuple[MlpParams, dict]:
    kind, meta, arrays = read_model(path)
    if kind != "mlp":
        raise ValidationError(f"{path}: expected an mlp model file, found {kind!r}")
    n_layers = len(meta["activations"])
    params = MlpParams([arrays[f"W{i}"] for i in range(n_layers)],
                       [arrays[f"b{i}"] for i in range(n_layers)],
                       list(meta["activations"]))
    extra = {k: v for k, v in meta.items() if k not in ("widths", "activations")}
    return params, extra
