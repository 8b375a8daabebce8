"""Minimal dense neural network: forward, backprop, SGD with momentum.

Small enough to verify exhaustively: gradients are analytic and checked
against central finite differences in the test suite.  Weights are stored as
(out, in) matrices; inputs may be single vectors or (batch, dim) matrices.
Serialization is JSON with full-precision floats so that save/load round-trips
are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from enum import Enum

import numpy as np

from .geometry import DimensionMismatch

MODEL_VERSION = 1

ACT_RELU = "relu"
ACT_SIGMOID = "sigmoid"
ACT_ID = "id"
ACTIVATIONS = (ACT_RELU, ACT_SIGMOID, ACT_ID)

_BCE_CLIP = 1e-12


class BadSpec(ValueError):
    """Layer specification is malformed."""


class ShapeMismatch(ValueError):
    """Gradient or velocity shapes do not match the network parameters."""


class ParseError(ValueError):
    """Model document is malformed or truncated."""


class VersionMismatch(ValueError):
    """Model document was written by an incompatible format version."""


class Loss(Enum):
    MSE = "mse"
    BCE = "bce"


@dataclass(frozen=True)
class LayerSpec:
    in_dim: int
    out_dim: int
    activation: str = ACT_RELU

    def __post_init__(self) -> None:
        if self.in_dim < 1 or self.out_dim < 1:
            raise BadSpec(f"layer dims must be >= 1, got {self.in_dim}->{self.out_dim}")
        if self.activation not in ACTIVATIONS:
            raise BadSpec(f"unknown activation {self.activation!r}")


class Network:
    """Dense feed-forward network: ordered layers with weights and biases."""

    def __init__(self, specs: tuple[LayerSpec, ...], weights: list[np.ndarray],
                 biases: list[np.ndarray], seed: int = 0) -> None:
        specs = tuple(specs)
        for a, b in zip(specs, specs[1:]):
            if a.out_dim != b.in_dim:
                raise BadSpec(f"layer dims do not chain: {a.out_dim} != {b.in_dim}")
        if len(weights) != len(specs) or len(biases) != len(specs):
            raise ShapeMismatch("one weight matrix and bias vector per layer")
        for spec, w, b in zip(specs, weights, biases):
            if w.shape != (spec.out_dim, spec.in_dim) or b.shape != (spec.out_dim,):
                raise ShapeMismatch(f"bad parameter shapes for {spec}")
        self.specs = specs
        self.weights = weights
        self.biases = biases
        self.seed = seed

    @property
    def in_dim(self) -> int:
        return self.specs[0].in_dim

    @property
    def out_dim(self) -> int:
        return self.specs[-1].out_dim

    def n_params(self) -> int:
        return sum(w.size + b.size for w, b in zip(self.weights, self.biases))

    def copy(self) -> "Network":
        return Network(self.specs, [w.copy() for w in self.weights],
                       [b.copy() for b in self.biases], self.seed)


def net_init(specs: tuple[LayerSpec, ...] | list[LayerSpec], seed: int) -> Network:
    """Glorot-uniform weights in +-sqrt(6/(in+out)), zero biases."""
    specs = tuple(specs)
    if not specs:
        raise BadSpec("need at least one layer")
    rng = np.random.default_rng(seed)
    weights, biases = [], []
    for spec in specs:
        limit = np.sqrt(6.0 / (spec.in_dim + spec.out_dim))
        weights.append(rng.uniform(-limit, limit, size=(spec.out_dim, spec.in_dim)))
        biases.append(np.zeros(spec.out_dim))
    return Network(specs, weights, biases, seed)


def _activate(z: np.ndarray, kind: str) -> np.ndarray:
    if kind == ACT_RELU:
        return np.maximum(z, 0.0)
    if kind == ACT_SIGMOID:
        return 1.0 / (1.0 + np.exp(-z))
    return z


def _activation_grad(post: np.ndarray, kind: str) -> np.ndarray:
    if kind == ACT_RELU:
        return (post > 0.0).astype(post.dtype)
    if kind == ACT_SIGMOID:
        return post * (1.0 - post)
    return np.ones_like(post)


def forward(net: Network, x: np.ndarray) -> tuple[np.ndarray, list[np.ndarray]]:
    """Return (output, cache); cache holds the input of every layer plus the
    final activation, in order."""
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    a = x[None, :] if single else x
    if a.ndim != 2 or a.shape[1] != net.in_dim:
        raise DimensionMismatch(f"input dim {a.shape} vs network {net.in_dim}")
    cache = [a]
    for spec, w, b in zip(net.specs, net.weights, net.biases):
        a = _activate(a @ w.T + b, spec.activation)
        cache.append(a)
    return (a[0] if single else a), cache


def loss_value(loss: Loss, y: np.ndarray, target: np.ndarray) -> float:
    """Per-sample mean over output dims, then mean over the batch."""
    y = np.atleast_2d(np.asarray(y, dtype=np.float64))
    t = np.atleast_2d(np.asarray(target, dtype=np.float64))
    if y.shape != t.shape:
        raise DimensionMismatch(f"output {y.shape} vs target {t.shape}")
    if loss is Loss.MSE:
        return float(np.mean((y - t) ** 2))
    yc = np.clip(y, _BCE_CLIP, 1.0 - _BCE_CLIP)
    return float(np.mean(-t * np.log(yc) - (1.0 - t) * np.log1p(-yc)))


def _loss_output_grad(loss: Loss, y: np.ndarray, t: np.ndarray) -> np.ndarray:
    n = y.size
    if loss is Loss.MSE:
        return 2.0 * (y - t) / n
    yc = np.clip(y, _BCE_CLIP, 1.0 - _BCE_CLIP)
    return (-t / yc + (1.0 - t) / (1.0 - yc)) / n


def backward_from_output_grad(net: Network, cache: list[np.ndarray],
                              d_out: np.ndarray
                              ) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Backpropagate an arbitrary gradient w.r.t. the network output."""
    d_out = np.atleast_2d(np.asarray(d_out, dtype=np.float64))
    if d_out.shape != cache[-1].shape:
        raise DimensionMismatch(f"output grad {d_out.shape} vs {cache[-1].shape}")
    d_weights: list[np.ndarray] = [None] * len(net.specs)  # type: ignore[list-item]
    d_biases: list[np.ndarray] = [None] * len(net.specs)  # type: ignore[list-item]
    delta = d_out
    for li in reversed(range(len(net.specs))):
        post, inp = cache[li + 1], cache[li]
        delta = delta * _activation_grad(post, net.specs[li].activation)
        d_weights[li] = delta.T @ inp
        d_biases[li] = delta.sum(axis=0)
        if li > 0:
            delta = delta @ net.weights[li]
    return d_weights, d_biases


def backward(net: Network, cache: list[np.ndarray], loss: Loss,
             target: np.ndarray) -> tuple[list[np.ndarray], list[np.ndarray]]:
    """Exact gradients of the batch loss w.r.t. every weight and bias."""
    y = cache[-1]
    t = np.asarray(target, dtype=np.float64)
    if t.ndim == 1:
        t = t[None, :]
    if t.shape != y.shape:
        raise DimensionMismatch(f"target {t.shape} vs output {y.shape}")
    return backward_from_output_grad(net, cache, _loss_output_grad(loss, y, t))


@dataclass
class OptimizerState:
    """SGD with momentum; velocity buffers are allocated on first use."""

    learning_rate: float = 1e-3
    momentum: float = 0.9
    velocity_w: list[np.ndarray] | None = None
    velocity_b: list[np.ndarray] | None = None

    def __post_init__(self) -> None:
        if self.learning_rate <= 0 or not (0.0 <= self.momentum < 1.0):
            raise ValueError("need learning_rate > 0 and 0 <= momentum < 1")


def optimizer_step(net: Network, grads: tuple[list[np.ndarray], list[np.ndarray]],
                   opt: OptimizerState) -> tuple[Network, OptimizerState]:
    """velocity = momentum * velocity - lr * grad; weight += velocity."""
    d_weights, d_biases = grads
    if opt.velocity_w is None:
        opt.velocity_w = [np.zeros_like(w) for w in net.weights]
        opt.velocity_b = [np.zeros_like(b) for b in net.biases]
    if len(d_weights) != len(net.weights):
        raise ShapeMismatch("gradient list length mismatch")
    for w, b, dw, db, vw, vb in zip(net.weights, net.biases, d_weights, d_biases,
                                    opt.velocity_w, opt.velocity_b):
        if dw.shape != w.shape or db.shape != b.shape:
            raise ShapeMismatch(f"gradient shape {dw.shape} vs weight {w.shape}")
        vw *= opt.momentum
        vw -= opt.learning_rate * dw
        w += vw
        vb *= opt.momentum
        vb -= opt.learning_rate * db
        b += vb
    return net, opt


def grad_check(net: Network, loss: Loss,
               samples: list[tuple[np.ndarray, np.ndarray]],
               h: float = 1e-5) -> float:
    """Max relative error between analytic and central-difference gradients."""
    if not samples:
        raise ValueError("need at least one sample")
    X = np.stack([np.asarray(x, dtype=np.float64) for x, _ in samples])
    T = np.stack([np.asarray(t, dtype=np.float64) for _, t in samples])
    _, cache = forward(net, X)
    d_weights, d_biases = backward(net, cache, loss, T)

    def batch_loss() -> float:
        y, _ = forward(net, X)
        return loss_value(loss, y, T)

    worst = 0.0
    for params, grads in ((net.weights, d_weights), (net.biases, d_biases)):
        for p, g in zip(params, grads):
            flat_p = p.reshape(-1)
            flat_g = g.reshape(-1)
            for k in range(flat_p.size):
                orig = flat_p[k]
                flat_p[k] = orig + h
                up = batch_loss()
                flat_p[k] = orig - h
                down = batch_loss()
                flat_p[k] = orig
                numeric = (up - down) / (2.0 * h)
                denom = max(1e-12, abs(flat_g[k]) + abs(numeric))
                worst = max(worst, abs(flat_g[k] - numeric) / denom)
    return worst


def save_model(net: Network) -> str:
    """Serialize to a JSON document; floats keep full precision."""
    doc = {
        "version": MODEL_VERSION,
        "arch": [{"in": s.in_dim, "out": s.out_dim, "act": s.activation}
                 for s in net.specs],
        "weights": [w.reshape(-1).tolist() for w in net.weights],
        "biases": [b.tolist() for b in net.biases],
        "seed": net.seed,
    }
    return json.dumps(doc)


def load_model(document: str) -> Network:
    try:
        doc = json.loads(document)
        version = doc["version"]
        arch = doc["arch"]
        raw_w = doc["weights"]
        raw_b = doc["biases"]
        seed = doc["seed"]
    except (json.JSONDecodeError, KeyError, TypeError) as exc:
        raise ParseError(f"bad model document: {exc}") from exc
    if version != MODEL_VERSION:
        raise VersionMismatch(f"model version {version!r} != {MODEL_VERSION}")
    try:
        specs = tuple(LayerSpec(layer["in"], layer["out"], layer["act"])
                      for layer in arch)
        weights = [np.array(w, dtype=np.float64).reshape(s.out_dim, s.in_dim)
                   for w, s in zip(raw_w, specs)]
        biases = [np.array(b, dtype=np.float64) for b in raw_b]
        return Network(specs, weights, biases, seed)
    except (KeyError, TypeError, ValueError, BadSpec, ShapeMismatch) as exc:
        raise ParseError(f"inconsistent model document: {exc}") from exc
