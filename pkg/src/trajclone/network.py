"""Small fully-connected network with fused output heads, written directly in numpy.

The trunk is a stack of rectifier layers shared by all heads; each head is one
linear layer. Backpropagation is hand-derived and exact, which lets the test
suite hold it against central finite differences. Optimization is Adam on the
flat parameter vector with global-norm gradient clipping.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np


@dataclass(frozen=True)
class GmmHead:
    k_modes: int = 2
    d_target: int = 10

    @property
    def out_dim(self) -> int:
        # mixture logits + means + log variances
        return self.k_modes * (1 + 2 * self.d_target)


@dataclass(frozen=True)
class LinearHead:
    d_target: int

    @property
    def out_dim(self) -> int:
        return self.d_target


@dataclass(frozen=True)
class NetSpec:
    input_dim: int
    fusion_layers: tuple[int, ...] = (128, 128, 64)
    heads: dict = field(default_factory=dict)  # name -> GmmHead | LinearHead

    def __post_init__(self):
        object.__setattr__(self, "fusion_layers", tuple(self.fusion_layers))
        object.__setattr__(self, "heads", dict(self.heads))
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        # conventional head names: gmm / trajectory_l2 / affordance / actuation
        if not {"gmm", "trajectory_l2"} & set(self.heads):
            raise ValueError("spec needs a trajectory head (gmm or trajectory_l2)")

    @property
    def trunk_out(self) -> int:
        return self.fusion_layers[-1] if self.fusion_layers else self.input_dim


def _layer_dims(spec: NetSpec):
    """(name, in_dim, out_dim) for every weight matrix, trunk first then heads by name."""
    dims = []
    prev = spec.input_dim
    for i, width in enumerate(spec.fusion_layers):
        dims.append((f"fusion{i}", prev, width))
        prev = width
    for name in sorted(spec.heads):
        dims.append((f"head:{name}", prev, spec.heads[name].out_dim))
    return dims


class Params:
    """Flat parameter vector with per-layer weight/bias views plus Adam state."""

    def __init__(self, spec: NetSpec, values: np.ndarray):
        self.spec = spec
        self.values = values
        self.slices = {}
        offset = 0
        for name, din, dout in _layer_dims(spec):
            self.slices[name + "/W"] = (slice(offset, offset + din * dout), (din, dout))
            offset += din * dout
            self.slices[name + "/b"] = (slice(offset, offset + dout), (dout,))
            offset += dout
        if values.shape != (offset,):
            raise ValueError(f"expected {offset} parameters, got {values.shape}")
        self.adam_m = np.zeros(offset)
        self.adam_v = np.zeros(offset)
        self.adam_t = 0

    @property
    def size(self) -> int:
        return self.values.size

    def view(self, key: str, values: np.ndarray | None = None) -> np.ndarray:
        sl, shape = self.slices[key]
        return (self.values if values is None else values)[sl].reshape(shape)

    def copy(self) -> "Params":
        p = Params(self.spec, self.values.copy())
        p.adam_m = self.adam_m.copy()
        p.adam_v = self.adam_v.copy()
        p.adam_t = self.adam_t
        return p


def init_params(spec: NetSpec, rng: np.random.Generator) -> Params:
    """Fan-in scaled uniform weights (rectifier-friendly), zero biases."""
    chunks = []
    for name, din, dout in _layer_dims(spec):
        limit = math.sqrt(6.0 / din)
        chunks.append(rng.uniform(-limit, limit, size=din * dout))
        chunks.append(np.zeros(dout))
    return Params(spec, np.concatenate(chunks))


def zero_params(spec: NetSpec) -> Params:
    n = sum(din * dout + dout for _, din, dout in _layer_dims(spec))
    return Params(spec, np.zeros(n))


@dataclass
class ForwardCache:
    spec: NetSpec
    params: Params
    x: np.ndarray               # (N, input_dim)
    pre: list                    # pre-activations per fusion layer
    post: list                   # post-rectifier activations per fusion layer
    squeeze: bool


def forward(params: Params, spec: NetSpec, x) -> tuple[dict, ForwardCache]:
    """Raw head outputs and the cache backward() needs.

    Accepts a single input vector or a batch (N, input_dim); outputs follow the
    same convention.
    """
    x = np.asarray(x, dtype=np.float64)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[None, :]
    if x.shape[1] != spec.input_dim:
        raise ValueError(f"input dim {x.shape[1]} != {spec.input_dim}")
    if not np.all(np.isfinite(x)):
        raise ValueError("non-finite network input")

    h = x
    pre, post = [], []
    for i in range(len(spec.fusion_layers)):
        z = h @ params.view(f"fusion{i}/W") + params.view(f"fusion{i}/b")
        h = np.maximum(z, 0.0)
        pre.append(z)
        post.append(h)
    outputs = {}
    for name in spec.heads:
        out = h @ params.view(f"head:{name}/W") + params.view(f"head:{name}/b")
        outputs[name] = out[0] if squeeze else out
    return outputs, ForwardCache(spec, params, x, pre, post, squeeze)


def backward(cache: ForwardCache, head_grads: dict) -> np.ndarray:
    """Exact reverse-mode gradient of sum_heads <grad_h, output_h> w.r.t. the flat params.

    head_grads maps head name to dLoss/d(raw output); heads absent from the
    dict contribute nothing. Gradients from multiple heads add.
    """
    spec, params = cache.spec, cache.params
    grad = np.zeros_like(params.values)
    trunk = cache.post[-1] if cache.post else cache.x
    g_trunk = np.zeros_like(trunk)
    for name, g in head_grads.items():
        if name not in spec.heads:
            raise KeyError(f"unknown head {name!r}")
        g = np.asarray(g, dtype=np.float64)
        if g.ndim == 1:
            g = g[None, :]
        if g.shape != (trunk.shape[0], spec.heads[name].out_dim):
            raise ValueError(f"bad gradient shape for head {name!r}: {g.shape}")
        params.view(f"head:{name}/W", grad)[...] = trunk.T @ g
        params.view(f"head:{name}/b", grad)[...] = g.sum(axis=0)
        g_trunk = g_trunk + g @ params.view(f"head:{name}/W").T
    for i in range(len(spec.fusion_layers) - 1, -1, -1):
        g_pre = g_trunk * (cache.pre[i] > 0.0)
        below = cache.post[i - 1] if i > 0 else cache.x
        params.view(f"fusion{i}/W", grad)[...] = below.T @ g_pre
        params.view(f"fusion{i}/b", grad)[...] = g_pre.sum(axis=0)
        g_trunk = g_pre @ params.view(f"fusion{i}/W").T
    return grad


def clip_gradient_norm(grads: np.ndarray, max_norm: float) -> np.ndarray:
    """Scale the gradient down to max_norm (L2) when it exceeds it."""
    if max_norm <= 0.0:
        raise ValueError("max_norm must be positive")
    norm = float(np.linalg.norm(grads))
    if norm > max_norm:
        return grads * (max_norm / norm)
    return grads


def adam_step(params: Params, grads: np.ndarray, lr: float = 1e-3,
              beta1: float = 0.9, beta2: float = 0.999, eps: float = 1e-8):
    """In-place Adam update with bias correction; no weight decay."""
    if not np.all(np.isfinite(grads)):
        raise ValueError("non-finite gradient")
    params.adam_t += 1
    t = params.adam_t
    params.adam_m = beta1 * params.adam_m + (1.0 - beta1) * grads
    params.adam_v = beta2 * params.adam_v + (1.0 - beta2) * grads * grads
    m_hat = params.adam_m / (1.0 - beta1 ** t)
    v_hat = params.adam_v / (1.0 - beta2 ** t)
    params.values -= lr * m_hat / (np.sqrt(v_hat) + eps)
    return params


class Normalizer:
    """Per-dimension affine map to zero mean, unit variance; invertible."""

    def __init__(self, mean: np.ndarray, std: np.ndarray):
        self.mean = np.asarray(mean, dtype=np.float64)
        self.std = np.asarray(std, dtype=np.float64)
        if np.any(self.std <= 0.0):
            raise ValueError("std must be positive in every dimension")

    def apply(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def invert(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @staticmethod
    def from_dict(d: dict) -> "Normalizer":
        return Normalizer(np.asarray(d["mean"]), np.asarray(d["std"]))


def fit_normalizer(targets) -> Normalizer:
    """Fit mean/std to a (N, D) target matrix; zero-variance dimensions are an error."""
    t = np.asarray(targets, dtype=np.float64)
    if t.ndim != 2 or t.shape[0] < 2:
        raise ValueError("need a (N>=2, D) target matrix")
    mean = t.mean(axis=0)
    std = t.std(axis=0)
    dead = np.flatnonzero(std == 0.0)
    if dead.size:
        raise ValueError(f"zero variance in target dimension(s) {dead.tolist()}")
    return Normalizer(mean, std)
