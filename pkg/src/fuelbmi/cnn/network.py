"""Network parameters, initialisation, forward pass and exact gradients.

The stack is one convolution + ReLU + max-pool pair, two ReLU dense layers
and a softmax output. The objective minimised is the summed cross-entropy
plus ``weight_decay / 2`` times the squared norm of every kernel and dense
weight matrix (biases are not decayed).
"""

from __future__ import annotations

import copy
from dataclasses import asdict, dataclass, field

import numpy as np

from ..core import ApplianceClass
from .layers import (
    DimensionMismatch,
    conv1d_backward,
    conv1d_forward,
    cross_entropy,
    maxpool,
    maxpool_backward,
    relu,
    relu_backward,
    softmax,
)

# parameter name -> layer depth counted from the output (0) backwards
PARAM_DEPTH = {
    "out.W": 0, "out.b": 0,
    "dense2.W": 1, "dense2.b": 1,
    "dense1.W": 2, "dense1.b": 2,
    "conv.k": 3, "conv.b": 3,
}
PARAM_ORDER = tuple(PARAM_DEPTH)
DECAYED = ("conv.k", "dense1.W", "dense2.W", "out.W")


@dataclass
class Hyperparameters:
    learning_rate: float = 1e-3
    rate_annealing: float = 1e-6
    rate_decay: float = 1.0
    momentum_start: float = 0.5
    momentum_ramp: int = 10000
    momentum_stable: float = 0.9
    weight_decay: float = 1e-4
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    epochs: int = 30
    batch_size: int = 32
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValueError("learning_rate must be positive")
        if not 0 <= self.momentum_start <= self.momentum_stable < 1:
            raise ValueError("need 0 <= momentum_start <= momentum_stable < 1")
        if self.weight_decay < 0:
            raise ValueError("weight_decay must be >= 0")
        if self.momentum_ramp < 1:
            raise ValueError("momentum_ramp must be >= 1")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


@dataclass
class Architecture:
    input_len: int = 60
    kernels: int = 16
    kernel_len: int = 5
    pool: int = 2
    hidden: tuple[int, int] = (64, 32)

    @property
    def conv_len(self) -> int:
        return self.input_len - self.kernel_len + 1

    @property
    def pooled_len(self) -> int:
        return -(-self.conv_len // self.pool)

    @property
    def flat_len(self) -> int:
        return self.kernels * self.pooled_len


@dataclass
class OptimizerState:
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: int = 0
    samples_seen: int = 0
    beta1_prod: float = 1.0
    beta2_prod: float = 1.0


@dataclass
class NetworkModel:
    params: dict[str, np.ndarray]
    classes: list[ApplianceClass]
    arch: Architecture
    hp: Hyperparameters
    scale_w: float = 3000.0
    opt: OptimizerState = field(default_factory=OptimizerState)

    def __post_init__(self):
        if len(set(self.classes)) != len(self.classes):
            raise ValueError("class table must be one-to-one")
        if not self.opt.m:
            self.opt.m = {k: np.zeros_like(v) for k, v in self.params.items()}
            self.opt.v = {k: np.zeros_like(v) for k, v in self.params.items()}

    @property
    def n_classes(self) -> int:
        return len(self.classes)

    def copy(self) -> "NetworkModel":
        return copy.deepcopy(self)

    def config_dict(self) -> dict:
        return {
            "architecture": {**asdict(self.arch), "hidden": list(self.arch.hidden)},
            "hyperparameters": asdict(self.hp),
            "classes": [c.encode() for c in self.classes],
            "scale_w": self.scale_w,
        }


def he_init(shape, fan_in: int, seed=0) -> np.ndarray:
    """Zero-mean Gaussian weights with variance 2 / fan_in."""
    if fan_in < 1:
        raise ValueError("fan_in must be >= 1")
    rng = seed if isinstance(seed, np.random.Generator) else np.random.default_rng(seed)
    return rng.normal(0.0, np.sqrt(2.0 / fan_in), size=shape)


def param_shapes(arch: Architecture, n_classes: int) -> dict[str, tuple[int, ...]]:
    h1, h2 = arch.hidden
    return {
        "conv.k": (arch.kernels, 1, arch.kernel_len),
        "conv.b": (arch.kernels,),
        "dense1.W": (arch.flat_len, h1),
        "dense1.b": (h1,),
        "dense2.W": (h1, h2),
        "dense2.b": (h2,),
        "out.W": (h2, n_classes),
        "out.b": (n_classes,),
    }


def build_model(classes, arch: Architecture | None = None, hp: Hyperparameters | None = None,
                scale_w: float = 3000.0) -> NetworkModel:
    arch = arch or Architecture()
    hp = hp or Hyperparameters()
    if arch.input_len < arch.kernel_len:
        raise ValueError("kernel longer than input")
    rng = np.random.default_rng(hp.seed)
    shapes = param_shapes(arch, len(classes))
    fan_in = {"conv.k": arch.kernel_len, "dense1.W": arch.flat_len,
              "dense2.W": arch.hidden[0], "out.W": arch.hidden[1]}
    params = {}
    for name in PARAM_ORDER:
        if name.endswith(".b"):
            params[name] = np.zeros(shapes[name])
        else:
            params[name] = he_init(shapes[name], fan_in[name], rng)
    return NetworkModel(params, list(classes), arch, hp, float(scale_w))


@dataclass
class ForwardCache:
    """Intermediate maps of one forward pass, kept for backpropagation."""

    x: np.ndarray
    z: np.ndarray
    a: np.ndarray
    pooled: np.ndarray
    arg: np.ndarray
    flat: np.ndarray
    h1_pre: np.ndarray
    h1: np.ndarray
    h2_pre: np.ndarray
    h2: np.ndarray
    logits: np.ndarray
    probs: np.ndarray


def _as_batch(model: NetworkModel, X: np.ndarray) -> np.ndarray:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[None, :]
    if X.ndim == 2:
        X = X[:, None, :]
    if X.shape[-1] != model.arch.input_len:
        raise DimensionMismatch(f"input length {X.shape[-1]} != {model.arch.input_len}")
    return X


def dense_softmax_forward(flat: np.ndarray, params: dict[str, np.ndarray]):
    """Two affine+ReLU layers then affine+softmax. Returns (probs, intermediates)."""
    if flat.shape[-1] != params["dense1.W"].shape[0]:
        raise DimensionMismatch(
            f"flattened length {flat.shape[-1]} != dense input {params['dense1.W'].shape[0]}")
    h1_pre = flat @ params["dense1.W"] + params["dense1.b"]
    h1 = relu(h1_pre)
    h2_pre = h1 @ params["dense2.W"] + params["dense2.b"]
    h2 = relu(h2_pre)
    logits = h2 @ params["out.W"] + params["out.b"]
    return softmax(logits), (h1_pre, h1, h2_pre, h2, logits)


def forward(model: NetworkModel, X: np.ndarray) -> ForwardCache:
    p = model.params
    x = _as_batch(model, X)
    z = conv1d_forward(x, p["conv.k"], p["conv.b"])
    a = relu(z)
    pooled, arg = maxpool(a, model.arch.pool)
    flat = pooled.reshape(len(x), -1)
    probs, (h1_pre, h1, h2_pre, h2, logits) = dense_softmax_forward(flat, p)
    return ForwardCache(x, z, a, pooled, arg, flat, h1_pre, h1, h2_pre, h2, logits, probs)


def predict_proba(model: NetworkModel, X: np.ndarray) -> np.ndarray:
    return forward(model, X).probs


def objective(model: NetworkModel, X: np.ndarray, Y: np.ndarray) -> float:
    """Summed cross-entropy plus the L2 weight-decay term."""
    probs = forward(model, X).probs if len(X) else np.zeros((0, model.n_classes))
    return cross_entropy(Y, probs) + decay_penalty(model)


def decay_penalty(model: NetworkModel) -> float:
    lam = model.hp.weight_decay
    if lam == 0:
        return 0.0
    return 0.5 * lam * sum(float(np.sum(model.params[k] ** 2)) for k in DECAYED)


def backprop(model: NetworkModel, X: np.ndarray, Y: np.ndarray,
             cache: ForwardCache | None = None) -> tuple[dict[str, np.ndarray], float]:
    """Exact gradients of :func:`objective` for every parameter, and its value."""
    p = model.params
    lam = model.hp.weight_decay
    Y = np.asarray(Y, dtype=float)
    if len(Y) == 0:
        grads = {k: np.zeros_like(v) for k, v in p.items()}
        for k in DECAYED:
            grads[k] += lam * p[k]
        return grads, decay_penalty(model)
    c = cache if cache is not None else forward(model, X)
    loss = cross_entropy(Y, c.probs) + decay_penalty(model)
    # softmax + cross-entropy; rows of Y sum to one
    d_logits = c.probs * Y.sum(axis=1, keepdims=True) - Y
    grads = {
        "out.W": c.h2.T @ d_logits,
        "out.b": d_logits.sum(axis=0),
    }
    d_h2 = relu_backward(d_logits @ p["out.W"].T, c.h2_pre)
    grads["dense2.W"] = c.h1.T @ d_h2
    grads["dense2.b"] = d_h2.sum(axis=0)
    d_h1 = relu_backward(d_h2 @ p["dense2.W"].T, c.h1_pre)
    grads["dense1.W"] = c.flat.T @ d_h1
    grads["dense1.b"] = d_h1.sum(axis=0)
    d_flat = d_h1 @ p["dense1.W"].T
    d_pooled = d_flat.reshape(c.pooled.shape)
    d_a = maxpool_backward(d_pooled, c.arg, model.arch.pool, c.a.shape[-1])
    d_z = relu_backward(d_a, c.z)
    grads["conv.k"], grads["conv.b"], _ = conv1d_backward(d_z, c.x, p["conv.k"])
    for k in DECAYED:
        grads[k] = grads[k] + lam * p[k]
    return {k: grads[k] for k in PARAM_ORDER}, loss
