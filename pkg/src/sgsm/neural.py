"""A small hand-written network layer set with exact reverse-mode gradients.

Layers cache what they need on ``forward`` and consume it in ``backward``.
Parameters are float32 by default; ``Network.astype(np.float64)`` gives a
double-precision copy for finite-difference checks.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import kernels
from .errors import ConfigError, DataError
from .tensorio import read_tensors, write_tensors

COS_EPS = 1e-8


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 50
    learning_rate: float = 1e-3
    batch_size: int = 64
    seed: int = 0

    def __post_init__(self):
        if self.epochs < 0 or self.learning_rate <= 0 or self.batch_size < 1 or self.seed < 0:
            raise ConfigError(f"invalid training config {self}")


def _uniform(rng, shape, fan_in, dtype):
    a = np.sqrt(1.0 / fan_in)
    return rng.uniform(-a, a, size=shape).astype(dtype)


class Linear:
    kind = "Linear"

    def __init__(self, in_features, out_features, rng=None, dtype=np.float32):
        self.in_features, self.out_features = in_features, out_features
        rng = rng if rng is not None else np.random.default_rng(0)
        self.weight = _uniform(rng, (out_features, in_features), in_features, dtype)
        self.bias = _uniform(rng, (out_features,), in_features, dtype)
        self._x = None

    @property
    def params(self):
        return [self.weight, self.bias]

    def config(self):
        return {"kind": self.kind, "in": self.in_features, "out": self.out_features}

    def output_shape(self, shape):
        if shape[-1] != self.in_features:
            raise DataError(f"Linear expects {self.in_features} features, got {shape[-1]}")
        return (*shape[:-1], self.out_features)

    def forward(self, x):
        self.output_shape(x.shape)
        self._x = x
        return x @ self.weight.T + self.bias

    def backward(self, grad):
        x = self._x
        self.grads = [grad.T @ x, grad.sum(axis=0)]
        return grad @ self.weight


class Conv1d:
    """Valid (unpadded) strided convolution over (batch, channels, length)."""

    kind = "Conv1d"

    def __init__(self, in_channels, out_channels, kernel, stride=1, rng=None, dtype=np.float32):
        self.in_channels, self.out_channels = in_channels, out_channels
        self.kernel, self.stride = kernel, stride
        rng = rng if rng is not None else np.random.default_rng(0)
        fan_in = in_channels * kernel
        self.weight = _uniform(rng, (out_channels, in_channels, kernel), fan_in, dtype)
        self.bias = _uniform(rng, (out_channels,), fan_in, dtype)
        self._x = None

    @property
    def params(self):
        return [self.weight, self.bias]

    def config(self):
        return {"kind": self.kind, "in_channels": self.in_channels,
                "out_channels": self.out_channels, "kernel": self.kernel, "stride": self.stride}

    def output_shape(self, shape):
        if len(shape) != 3 or shape[1] != self.in_channels:
            raise DataError(f"Conv1d expects (B, {self.in_channels}, L), got {shape}")
        length = (shape[2] - self.kernel) // self.stride + 1
        if length < 1:
            raise DataError(f"Conv1d input length {shape[2]} too short for kernel {self.kernel}")
        return (shape[0], self.out_channels, length)

    def forward(self, x):
        self.output_shape(x.shape)
        self._x = x
        if x.dtype == np.float32:
            return kernels.conv1d_forward(x, self.weight, self.bias, self.stride)
        # double-precision path for gradient checks
        cols = _patches64(x, self.kernel, self.stride)
        return np.einsum("nlck,ock->nol", cols, self.weight) + self.bias[None, :, None]

    def backward(self, grad):
        x = self._x
        if x.dtype == np.float32:
            dx, dw, db = kernels.conv1d_backward(x, self.weight, grad.astype(np.float32), self.stride)
        else:
            cols = _patches64(x, self.kernel, self.stride)
            dw = np.einsum("nol,nlck->ock", grad, cols)
            db = grad.sum(axis=(0, 2))
            dx = np.zeros_like(x)
            span = self.stride * (grad.shape[2] - 1) + 1
            for k in range(self.kernel):
                dx[:, :, k:k + span:self.stride] += np.einsum("nol,oc->ncl", grad, self.weight[:, :, k])
        self.grads = [dw, db]
        return dx


def _patches64(x, kernel, stride):
    from numpy.lib.stride_tricks import sliding_window_view

    return sliding_window_view(x, kernel, axis=2)[:, :, ::stride, :].transpose(0, 2, 1, 3)


class Relu:
    kind = "Relu"
    params: list = []

    def config(self):
        return {"kind": self.kind}

    def output_shape(self, shape):
        return tuple(shape)

    def forward(self, x):
        self._mask = x > 0
        return np.where(self._mask, x, 0).astype(x.dtype)

    def backward(self, grad):
        self.grads = []
        return np.where(self._mask, grad, 0).astype(grad.dtype)


class Flatten:
    kind = "Flatten"
    params: list = []

    def config(self):
        return {"kind": self.kind}

    def output_shape(self, shape):
        return (shape[0], int(np.prod(shape[1:])))

    def forward(self, x):
        self._shape = x.shape
        return x.reshape(x.shape[0], -1)

    def backward(self, grad):
        self.grads = []
        return grad.reshape(self._shape)


class Unsqueeze:
    """(B, L) -> (B, 1, L), the single-channel view a Conv1d stack expects."""

    kind = "Unsqueeze"
    params: list = []

    def config(self):
        return {"kind": self.kind}

    def output_shape(self, shape):
        return (shape[0], 1, *shape[1:])

    def forward(self, x):
        return x[:, None, :]

    def backward(self, grad):
        self.grads = []
        return grad[:, 0, :]


_LAYERS = {cls.kind: cls for cls in (Linear, Conv1d, Relu, Flatten, Unsqueeze)}


class Network:
    def __init__(self, layers):
        self.layers = list(layers)

    @property
    def params(self):
        return [p for layer in self.layers for p in layer.params]

    @property
    def grads(self):
        return [g for layer in self.layers for g in getattr(layer, "grads", [np.zeros_like(p) for p in layer.params])]

    def n_params(self):
        return sum(p.size for p in self.params)

    def output_shape(self, shape):
        shape = tuple(shape)
        for layer in self.layers:
            shape = layer.output_shape(shape)
        return shape

    def forward(self, x):
        for layer in self.layers:
            x = layer.forward(x)
        return x

    def backward(self, grad):
        """Backpropagate ``grad`` (dLoss/dOutput) through the cached forward pass.

        Returns dLoss/dInput; per-parameter gradients land in ``self.grads``.
        """
        for layer in reversed(self.layers):
            grad = layer.backward(grad)
        return grad

    def config(self):
        return [layer.config() for layer in self.layers]

    def astype(self, dtype):
        clone = Network.from_config(self.config(), dtype=dtype)
        for dst, src in zip(clone.params, self.params):
            dst[...] = src.astype(dtype)
        return clone

    @classmethod
    def from_config(cls, config, rng=None, dtype=np.float32):
        layers = []
        for c in config:
            kind = c["kind"]
            if kind == "Linear":
                layers.append(Linear(c["in"], c["out"], rng=rng, dtype=dtype))
            elif kind == "Conv1d":
                layers.append(Conv1d(c["in_channels"], c["out_channels"], c["kernel"],
                                     c["stride"], rng=rng, dtype=dtype))
            elif kind in _LAYERS:
                layers.append(_LAYERS[kind]())
            else:
                raise ConfigError(f"unknown layer kind {kind!r}")
        return cls(layers)


def forward(net, x):
    return net.forward(x)


def backward(net, x, loss_grad):
    """Run forward on ``x`` then backpropagate ``loss_grad``; returns parameter gradients."""
    net.forward(x)
    net.backward(loss_grad)
    return net.grads


# ---------------------------------------------------------------- losses

def mse_cosine_loss(y, t):
    """Batch mean of ``mean((y - t)^2) + 1 - cos(y, t)`` and its gradient wrt ``y``.

    Rows are samples; a 1-D input is one sample. The cosine denominator is
    clamped at 1e-8.
    """
    y = np.asarray(y)
    t = np.asarray(t)
    if y.shape != t.shape:
        raise DataError(f"loss shape mismatch {y.shape} vs {t.shape}")
    rows = 1 if y.ndim == 1 else y.shape[0]
    y64 = y.astype(np.float64).reshape(rows, -1)
    t64 = t.astype(np.float64).reshape(rows, -1)
    n, length = y64.shape
    diff = y64 - t64
    mse = np.mean(diff ** 2, axis=1)
    ny = np.linalg.norm(y64, axis=1)
    nt = np.linalg.norm(t64, axis=1)
    dot = np.sum(y64 * t64, axis=1)
    raw = ny * nt
    denom = np.maximum(raw, COS_EPS)
    cos = dot / denom
    loss = float(np.mean(mse + 1.0 - cos))

    dcos = t64 / denom[:, None]
    live = raw > COS_EPS
    dcos[live] -= (cos[live] / ny[live] ** 2)[:, None] * y64[live]
    grad = (2.0 * diff / length - dcos) / n
    return loss, grad.reshape(y.shape).astype(y.dtype if y.dtype.kind == "f" else np.float64)


def softmax_cross_entropy(logits, labels):
    z = logits.astype(np.float64)
    z = z - z.max(axis=1, keepdims=True)
    logp = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    n = logits.shape[0]
    loss = -float(np.mean(logp[np.arange(n), labels]))
    grad = np.exp(logp)
    grad[np.arange(n), labels] -= 1.0
    return loss, (grad / n).astype(logits.dtype)


# ---------------------------------------------------------------- optimizer

class Adam:
    def __init__(self, params, lr=1e-3, betas=(0.9, 0.999), eps=1e-8):
        self.params = params
        self.lr, self.betas, self.eps = lr, betas, eps
        self.m = [np.zeros_like(p) for p in params]
        self.v = [np.zeros_like(p) for p in params]
        self.t = 0

    def step(self, grads):
        adam_step(self.params, grads, self, self.lr)


def adam_step(params, grads, state, lr):
    """In-place Adam update of ``params``; ``state`` holds m, v, t, betas and eps."""
    b1, b2 = state.betas
    state.t += 1
    c1 = 1.0 - b1 ** state.t
    c2 = 1.0 - b2 ** state.t
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape:
            raise DataError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        p -= (lr * (m / c1) / (np.sqrt(v / c2) + state.eps)).astype(p.dtype)


# ---------------------------------------------------------------- checks

def gradcheck(net, x, target, h=1e-4, loss=mse_cosine_loss):
    """Largest relative disagreement between backprop and central differences.

    Runs on a float64 copy of ``net``. Entries where both gradients are
    below 1e-7 in magnitude count as agreeing.
    """
    net64 = net.astype(np.float64)
    # keep any overridden backward behaviour of the original layers
    for src, dst in zip(net.layers, net64.layers):
        if type(src) is not type(dst):
            dst.__class__ = type(src)
    x = np.asarray(x, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)

    out = net64.forward(x)
    _, g = loss(out, target)
    net64.backward(g)
    analytic = [ag.copy() for ag in net64.grads]

    worst = 0.0
    for p, ag in zip(net64.params, analytic):
        flat = p.reshape(-1)
        agf = ag.reshape(-1)
        for i in range(flat.shape[0]):
            orig = flat[i]
            flat[i] = orig + h
            lp = loss(net64.forward(x), target)[0]
            flat[i] = orig - h
            lm = loss(net64.forward(x), target)[0]
            flat[i] = orig
            num = (lp - lm) / (2 * h)
            scale = max(abs(num), abs(agf[i]))
            if scale < 1e-7:
                continue
            worst = max(worst, abs(num - agf[i]) / scale)
    return worst


# ---------------------------------------------------------------- checkpoints

def save_networks(stem, networks, meta):
    """Write ``<stem>.sgtf`` (all parameters in order) and ``<stem>.sgtf.json``."""
    stem = Path(stem)
    tensors, manifest_nets = [], {}
    for name, net in networks.items():
        manifest_nets[name] = {"layers": net.config(),
                               "shapes": [list(p.shape) for p in net.params]}
        tensors.extend(net.params)
    write_tensors(stem.with_name(stem.name + ".sgtf"), tensors)
    manifest = {"format": "sgtf-checkpoint", "version": 1, "networks": manifest_nets,
                "order": list(networks), **meta}
    stem.with_name(stem.name + ".sgtf.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_networks(stem):
    stem = Path(stem)
    manifest_path = stem.with_name(stem.name + ".sgtf.json")
    if not manifest_path.exists():
        raise DataError(f"missing checkpoint manifest {manifest_path}")
    manifest = json.loads(manifest_path.read_text())
    tensors = iter(read_tensors(stem.with_name(stem.name + ".sgtf")))
    nets = {}
    for name in manifest["order"]:
        spec = manifest["networks"][name]
        net = Network.from_config(spec["layers"])
        for p, shape in zip(net.params, spec["shapes"]):
            arr = next(tensors)
            if list(arr.shape) != shape:
                raise DataError(f"checkpoint {stem}: shape {arr.shape} != {shape}")
            p[...] = arr
        nets[name] = net
    return nets, manifest
