"""Classifier and coefficient networks, with the per-sample gradient
facilities the bi-level update needs."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import nn
from .errors import DimensionError
from .nn import Array, ParamLayout, ParamVector

# Coefficient outputs are clamped into the open interval so that the blend
# coefficients never reach 0 or 1 even when the sigmoid saturates in float64.
COEF_MIN = 1e-12
COEF_MAX = 1.0 - 1e-12


def mlp_layout(layer_sizes) -> ParamLayout:
    shapes = []
    for i in range(len(layer_sizes) - 1):
        shapes.append((f"w{i}", (layer_sizes[i], layer_sizes[i + 1])))
        shapes.append((f"b{i}", (layer_sizes[i + 1],)))
    return ParamLayout.from_shapes(shapes)


def he_uniform_init(layer_sizes, seed: int) -> ParamVector:
    """He-uniform fan-in weights, zero biases; a pure function of
    (seed, layer_sizes)."""
    layout = mlp_layout(layer_sizes)
    rng = np.random.default_rng(seed)
    arrays = {}
    for i in range(len(layer_sizes) - 1):
        fan_in = layer_sizes[i]
        limit = np.sqrt(6.0 / fan_in)
        arrays[f"w{i}"] = rng.uniform(-limit, limit, size=(layer_sizes[i], layer_sizes[i + 1]))
        arrays[f"b{i}"] = np.zeros(layer_sizes[i + 1])
    return ParamVector(nn.flatten_params(arrays, layout), layout)


def _forward_cached(layer_sizes, params: ParamVector, x: Array, params_flat: Array | None = None):
    """Forward pass keeping the per-layer inputs and pre-activations needed
    by the hand-written backward. `params_flat` optionally evaluates the same
    architecture at different parameter values."""
    p = params if params_flat is None else ParamVector(params_flat, params.layout)
    n_layers = len(layer_sizes) - 1
    acts = [np.asarray(x, dtype=np.float64)]
    pre = []
    for i in range(n_layers):
        z = nn.affine_forward(acts[-1], p.view(f"w{i}"), p.view(f"b{i}"))
        pre.append(z)
        acts.append(nn.relu_forward(z) if i < n_layers - 1 else z)
    return acts[-1], acts, pre, p


def _backward_from_dlogits(layer_sizes, p: ParamVector, acts, pre, dlogits: Array) -> Array:
    """Accumulate the flat parameter gradient from d(loss)/d(logits)."""
    n_layers = len(layer_sizes) - 1
    grad = np.empty(p.layout.size)
    gview = ParamVector(grad, p.layout)
    dz = dlogits
    for i in reversed(range(n_layers)):
        dx, dw, db = nn.affine_backward(dz, acts[i], p.view(f"w{i}"))
        gview.view(f"w{i}")[...] = dw
        gview.view(f"b{i}")[...] = db
        if i > 0:
            dz = nn.relu_backward(dx, pre[i - 1])
    return grad


@dataclass
class ClassifierMLP:
    """Feedforward classifier f(x; w): relu hidden layers, logit output."""
    layer_sizes: tuple
    params: ParamVector
    init_seed: int

    @staticmethod
    def build(layer_sizes, seed: int) -> "ClassifierMLP":
        layer_sizes = tuple(int(s) for s in layer_sizes)
        if len(layer_sizes) < 2:
            raise DimensionError("classifier needs at least input and output sizes")
        return ClassifierMLP(layer_sizes, he_uniform_init(layer_sizes, seed), seed)

    @property
    def n_classes(self) -> int:
        return self.layer_sizes[-1]

    @property
    def n_features(self) -> int:
        return self.layer_sizes[0]

    def forward(self, x: Array, params_flat: Array | None = None) -> Array:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 2 or x.shape[1] != self.n_features:
            raise DimensionError(
                f"input has shape {x.shape}, classifier expects (batch, {self.n_features})")
        logits, _, _, _ = _forward_cached(self.layer_sizes, self.params, x, params_flat)
        return logits


def classifier_predict(model: ClassifierMLP, x: Array, params_flat: Array | None = None):
    """Logits and their softmax probabilities."""
    logits = model.forward(x, params_flat)
    return logits, nn.softmax_forward(logits)


def ce_loss_and_grad(model: ClassifierMLP, x: Array, targets: Array,
                     params_flat: Array | None = None):
    """Mean soft-target CE over the batch and its flat gradient w.r.t. w."""
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.n_features:
        raise DimensionError(
            f"input has shape {x.shape}, classifier expects (batch, {model.n_features})")
    logits, acts, pre, p = _forward_cached(model.layer_sizes, model.params, x, params_flat)
    loss, dlogits = nn.cross_entropy_soft(logits, targets)
    if x.shape[0] == 0:
        return loss, np.zeros(p.layout.size)
    return loss, _backward_from_dlogits(model.layer_sizes, p, acts, pre, dlogits)


def logprob_grads_batch(model: ClassifierMLP, x: Array) -> Array:
    """Per-sample, per-class gradients of log softmax(f(x; w)) w.r.t. w.

    Returns an array of shape (batch, classes, n_params). The seed for class
    k is d(log p_k)/d(logits) = e_k - p, and the backward pass keeps the
    (sample, class) axes separate so each gradient stays per sample.
    """
    x = np.asarray(x, dtype=np.float64)
    logits, acts, pre, p = _forward_cached(model.layer_sizes, model.params, x)
    n, c = logits.shape
    probs = nn.softmax_forward(logits)
    out = np.empty((n, c, p.layout.size))
    oview = {}
    for name, off, shape in p.layout.entries:
        size = int(np.prod(shape))
        oview[name] = out[:, :, off:off + size].reshape((n, c) + shape)

    dz = np.eye(c)[np.newaxis, :, :] - probs[:, np.newaxis, :]  # (n, c, c)
    n_layers = len(model.layer_sizes) - 1
    for i in reversed(range(n_layers)):
        w = p.view(f"w{i}")
        oview[f"w{i}"][...] = np.einsum("nd,nkh->nkdh", acts[i], dz)
        oview[f"b{i}"][...] = dz
        if i > 0:
            da = np.einsum("nkh,dh->nkd", dz, w)
            dz = da * (pre[i - 1] > 0)[:, np.newaxis, :]
    return out


def per_sample_logprob_grads(model: ClassifierMLP, x_single: Array) -> Array:
    """For one sample, the c gradients of log p_c w.r.t. w, shape (c, n_params)."""
    x_single = np.asarray(x_single, dtype=np.float64)
    if x_single.ndim != 1:
        raise DimensionError(f"expected a single feature vector, got shape {x_single.shape}")
    return logprob_grads_batch(model, x_single[np.newaxis, :])[0]


@dataclass
class CoefficientNet:
    """Scalar-in, scalar-out net producing a blend coefficient in (0, 1):
    one relu hidden layer, sigmoid output."""
    params: ParamVector
    hidden: int
    init_seed: int

    @staticmethod
    def build(seed: int, hidden: int = 100) -> "CoefficientNet":
        return CoefficientNet(he_uniform_init((1, hidden, 1), seed), hidden, seed)

    def _pre(self, losses: Array):
        x = np.asarray(losses, dtype=np.float64).reshape(-1, 1)
        zh = nn.affine_forward(x, self.params.view("w0"), self.params.view("b0"))
        h = nn.relu_forward(zh)
        zo = nn.affine_forward(h, self.params.view("w1"), self.params.view("b1"))
        return x, zh, h, zo[:, 0]

    def forward(self, losses: Array) -> Array:
        """Coefficient values for a vector of loss inputs, clamped to (0, 1)."""
        _, _, _, zo = self._pre(losses)
        return np.clip(nn.sigmoid_forward(zo), COEF_MIN, COEF_MAX)

    def param_grads(self, losses: Array) -> Array:
        """d(output_i) / d(params) for each input, shape (n, n_params)."""
        x, zh, h, zo = self._pre(losses)
        n = x.shape[0]
        s = nn.sigmoid_forward(zo)
        dzo = s * (1.0 - s)  # (n,)
        out = np.empty((n, self.params.layout.size))
        w1 = self.params.view("w1")  # (hidden, 1)
        dw1 = h * dzo[:, np.newaxis]                      # (n, hidden)
        dh = dzo[:, np.newaxis] * w1[:, 0][np.newaxis, :]  # (n, hidden)
        dzh = dh * (zh > 0)                               # (n, hidden)
        dw0 = x * dzh                                     # (n, hidden): x is (n, 1)
        for name, off, shape in self.params.layout.entries:
            size = int(np.prod(shape))
            seg = out[:, off:off + size]
            if name == "w0":
                seg[...] = dw0
            elif name == "b0":
                seg[...] = dzh
            elif name == "w1":
                seg[...] = dw1
            elif name == "b1":
                seg[...] = dzo[:, np.newaxis]
        return out


def coefficient_forward(net: CoefficientNet, loss_scalar: float) -> float:
    """Evaluate the coefficient net on one loss value; result in (0, 1)."""
    return float(net.forward(np.array([loss_scalar]))[0])


def coefficient_param_grad(net: CoefficientNet, loss_scalar: float) -> Array:
    """Exact gradient of the scalar output w.r.t. every net parameter."""
    return net.param_grads(np.array([loss_scalar]))[0]


# ---------------------------------------------------------------------------
# checkpoints
# ---------------------------------------------------------------------------

def save_checkpoint(model, path) -> None:
    """Self-describing container: kind, layer sizes, seed and the flat
    float64 parameter array stored little-endian ('<f8')."""
    if isinstance(model, ClassifierMLP):
        np.savez(path, kind="classifier",
                 layer_sizes=np.asarray(model.layer_sizes, dtype=np.int64),
                 seed=np.int64(model.init_seed),
                 params=model.params.values.astype("<f8"))
    elif isinstance(model, CoefficientNet):
        np.savez(path, kind="coefficient",
                 layer_sizes=np.asarray((1, model.hidden, 1), dtype=np.int64),
                 seed=np.int64(model.init_seed),
                 params=model.params.values.astype("<f8"))
    else:
        raise TypeError(f"cannot checkpoint {type(model).__name__}")


def load_checkpoint(path):
    with np.load(path) as data:
        kind = str(data["kind"])
        layer_sizes = tuple(int(s) for s in data["layer_sizes"])
        seed = int(data["seed"])
        params = np.asarray(data["params"], dtype=np.float64)
    layout = mlp_layout(layer_sizes)
    if params.shape != (layout.size,):
        raise DimensionError(
            f"checkpoint param length {params.shape} does not match layer sizes {layer_sizes}")
    pv = ParamVector(params, layout)
    if kind == "classifier":
        return ClassifierMLP(layer_sizes, pv, seed)
    if kind == "coefficient":
        return CoefficientNet(pv, layer_sizes[1], seed)
    raise ValueError(f"unknown checkpoint kind {kind!r}")
