"""Dense float64 primitives for small feedforward networks.

Architectures in this package are fixed MLPs, so there is no autodiff tape:
every backward pass is hand-derived per layer. All arithmetic is 64-bit and
every operation is deterministic given identical inputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractViolation, DimensionError, TrainingDiverged

Array = np.ndarray

SOFTLABEL_ATOL = 1e-9


def as_f64(x) -> Array:
    return np.asarray(x, dtype=np.float64)


# ---------------------------------------------------------------------------
# layer forward / backward
# ---------------------------------------------------------------------------

def affine_forward(x: Array, weights: Array, bias: Array) -> Array:
    """out[b, j] = sum_k x[b, k] * weights[k, j] + bias[j]."""
    x, weights, bias = as_f64(x), as_f64(weights), as_f64(bias)
    if x.ndim != 2:
        raise DimensionError(f"input must be 2-d (batch x features), got shape {x.shape}")
    if weights.ndim != 2:
        raise DimensionError(f"weights must be 2-d, got shape {weights.shape}")
    if x.shape[1] != weights.shape[0]:
        raise DimensionError(
            f"input has {x.shape[1]} features but weights expect {weights.shape[0]}")
    if bias.shape != (weights.shape[1],):
        raise DimensionError(
            f"bias has shape {bias.shape}, expected ({weights.shape[1]},) to match weights")
    return x @ weights + bias


def affine_backward(dout: Array, x: Array, weights: Array):
    """Gradients of an affine layer: returns (dx, dweights, dbias)."""
    dx = dout @ weights.T
    dw = x.T @ dout
    db = dout.sum(axis=0)
    return dx, dw, db


def relu_forward(x: Array) -> Array:
    return np.maximum(as_f64(x), 0.0)


def relu_backward(dout: Array, x: Array) -> Array:
    return dout * (x > 0)


def sigmoid_forward(x: Array) -> Array:
    """1 / (1 + exp(-x)), evaluated through exp(-|x|) so neither branch
    overflows for large |x|."""
    x = as_f64(x)
    e = np.exp(-np.abs(x))
    return np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))


def sigmoid_backward(dout: Array, out: Array) -> Array:
    return dout * out * (1.0 - out)


def softmax_forward(logits: Array) -> Array:
    """Row-wise softmax with max subtraction; rows sum to 1 within 1e-12."""
    logits = as_f64(logits)
    if logits.shape[-1] < 2:
        raise DimensionError(f"softmax needs at least 2 classes, got {logits.shape[-1]}")
    shifted = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=-1, keepdims=True)


def log_softmax(logits: Array) -> Array:
    logits = as_f64(logits)
    shifted = logits - logits.max(axis=-1, keepdims=True)
    return shifted - np.log(np.exp(shifted).sum(axis=-1, keepdims=True))


def check_soft_labels(targets: Array, atol: float = SOFTLABEL_ATOL) -> None:
    """Raise ContractViolation unless every row is a probability vector."""
    targets = as_f64(targets)
    if targets.size == 0:
        return
    if targets.min() < 0.0:
        raise ContractViolation(f"target entries must be >= 0, min is {targets.min()}")
    sums = targets.sum(axis=-1)
    worst = np.abs(sums - 1.0).max()
    if worst > atol:
        raise ContractViolation(f"target rows must sum to 1 within {atol}, worst deviation {worst}")


def cross_entropy_soft(logits: Array, targets: Array):
    """Mean soft-target cross entropy and its gradient w.r.t. the logits.

    loss = -(1/batch) sum_b sum_c targets[b, c] * log softmax(logits)[b, c]
    grad = (softmax(logits) - targets) / batch
    """
    logits, targets = as_f64(logits), as_f64(targets)
    if logits.shape != targets.shape:
        raise DimensionError(
            f"targets shape {targets.shape} does not match logits shape {logits.shape}")
    check_soft_labels(targets)
    batch = logits.shape[0]
    if batch == 0:
        return 0.0, np.zeros_like(logits)
    logp = log_softmax(logits)
    loss = -(targets * logp).sum() / batch
    grad = (softmax_forward(logits) - targets) / batch
    return loss, grad


# ---------------------------------------------------------------------------
# flat parameter vectors
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ParamLayout:
    """Ordered (name, offset, shape) segments of one flat parameter array.

    Offsets are contiguous and non-overlapping by construction.
    """
    entries: tuple[tuple[str, int, tuple[int, ...]], ...]
    size: int

    @staticmethod
    def from_shapes(named_shapes) -> "ParamLayout":
        entries = []
        offset = 0
        for name, shape in named_shapes:
            shape = tuple(int(s) for s in shape)
            entries.append((name, offset, shape))
            offset += int(np.prod(shape)) if shape else 1
        return ParamLayout(tuple(entries), offset)

    def entry(self, name: str):
        for n, off, shape in self.entries:
            if n == name:
                return off, shape
        raise KeyError(name)


@dataclass
class ParamVector:
    """Flat float64 parameter array plus the layout to reshape it."""
    values: Array
    layout: ParamLayout

    def __post_init__(self):
        self.values = as_f64(self.values)
        if self.values.shape != (self.layout.size,):
            raise DimensionError(
                f"param values have length {self.values.shape}, layout expects {self.layout.size}")

    @staticmethod
    def zeros(layout: ParamLayout) -> "ParamVector":
        return ParamVector(np.zeros(layout.size), layout)

    def view(self, name: str) -> Array:
        off, shape = self.layout.entry(name)
        n = int(np.prod(shape)) if shape else 1
        return self.values[off:off + n].reshape(shape)

    def views(self) -> dict:
        return {name: self.view(name) for name, _, _ in self.layout.entries}

    def copy(self) -> "ParamVector":
        return ParamVector(self.values.copy(), self.layout)

    def __len__(self) -> int:
        return self.layout.size


def flatten_params(arrays: dict, layout: ParamLayout) -> Array:
    flat = np.empty(layout.size)
    for name, off, shape in layout.entries:
        a = as_f64(arrays[name])
        if a.shape != shape:
            raise DimensionError(f"segment {name} has shape {a.shape}, layout expects {shape}")
        n = a.size
        flat[off:off + n] = a.reshape(-1)
    return flat


def unflatten_params(flat: Array, layout: ParamLayout) -> dict:
    flat = as_f64(flat)
    if flat.shape != (layout.size,):
        raise DimensionError(f"flat array has shape {flat.shape}, layout expects ({layout.size},)")
    out = {}
    for name, off, shape in layout.entries:
        n = int(np.prod(shape)) if shape else 1
        out[name] = flat[off:off + n].reshape(shape)
    return out


# ---------------------------------------------------------------------------
# optimizers
# ---------------------------------------------------------------------------

@dataclass
class SgdMomentum:
    """SGD with classical momentum and coupled weight decay:
    v <- mu*v + g + wd*p ; p <- p - lr*v
    """
    lr: float
    momentum: float = 0.9
    weight_decay: float = 0.0
    velocity: Array | None = None
    step_count: int = 0


@dataclass
class Adam:
    """Bias-corrected Adam."""
    lr: float
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    m: Array | None = None
    v: Array | None = None
    step_count: int = 0


def _check_grad(state, grad: Array) -> None:
    if not np.all(np.isfinite(grad)):
        raise TrainingDiverged(
            f"non-finite gradient at optimizer step {state.step_count}",
            step_index=state.step_count)


def optimizer_step(state, params, grad: Array):
    """Apply one optimizer step in place; returns the updated parameters.

    `params` may be a ParamVector or a flat float64 array.
    """
    values = params.values if isinstance(params, ParamVector) else params
    grad = as_f64(grad)
    if grad.shape != values.shape:
        raise DimensionError(f"gradient shape {grad.shape} does not match params {values.shape}")
    _check_grad(state, grad)

    if isinstance(state, SgdMomentum):
        if state.velocity is None:
            state.velocity = np.zeros_like(values)
        elif state.velocity.shape != values.shape:
            raise DimensionError("momentum buffer length does not match params")
        g = grad
        if state.weight_decay != 0.0:
            g = g + state.weight_decay * values
        state.velocity *= state.momentum
        state.velocity += g
        values -= state.lr * state.velocity
    elif isinstance(state, Adam):
        if state.m is None:
            state.m = np.zeros_like(values)
            state.v = np.zeros_like(values)
        elif state.m.shape != values.shape:
            raise DimensionError("adam moment buffers do not match params")
        state.m *= state.beta1
        state.m += (1.0 - state.beta1) * grad
        state.v *= state.beta2
        state.v += (1.0 - state.beta2) * grad * grad
        t = state.step_count + 1
        m_hat = state.m / (1.0 - state.beta1 ** t)
        v_hat = state.v / (1.0 - state.beta2 ** t)
        values -= state.lr * m_hat / (np.sqrt(v_hat) + state.eps)
    else:
        raise TypeError(f"unknown optimizer state {type(state).__name__}")

    state.step_count += 1
    return params
