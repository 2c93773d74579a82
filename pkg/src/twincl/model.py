"""Two-headed MLP with hand-written reverse mode, SGD and the LR schedule.

A shared trunk of two ReLU layers feeds two heads of two dense layers each:
``f`` ends in an l2-normalised embedding, ``g`` in a softmax over classes.
Parameters are a flat ``dict`` of arrays keyed by layer name.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidArgumentError, NonFiniteLossError, ShapeMismatchError

NORM_EPS = 1e-12

# (weight, bias) names in forward order for each block
TRUNK = (("trunk0.W", "trunk0.b"), ("trunk1.W", "trunk1.b"))
HEAD_F = (("f0.W", "f0.b"), ("f1.W", "f1.b"))
HEAD_G = (("g0.W", "g0.b"), ("g1.W", "g1.b"))
PARAM_NAMES = tuple(n for block in (TRUNK, HEAD_F, HEAD_G) for pair in block for n in pair)


def init_params(d: int, K: int, hidden: int = 64, embedding_dim: int = 16,
                rng: np.random.Generator | int | None = 0, dtype=np.float64) -> dict:
    """He-initialised weights and zero biases."""
    if embedding_dim < 2 or K < 2:
        raise InvalidArgumentError("embedding_dim and K must both be at least 2")
    rng = np.random.default_rng(rng)
    shapes = {
        "trunk0": (d, hidden), "trunk1": (hidden, hidden),
        "f0": (hidden, hidden), "f1": (hidden, embedding_dim),
        "g0": (hidden, hidden), "g1": (hidden, K),
    }
    params = {}
    for name, (fan_in, fan_out) in shapes.items():
        params[f"{name}.W"] = (rng.normal(size=(fan_in, fan_out)) * math.sqrt(2.0 / fan_in)).astype(dtype)
        params[f"{name}.b"] = np.zeros(fan_out, dtype=dtype)
    return params


def model_dims(params: dict) -> dict:
    return {
        "d": params["trunk0.W"].shape[0],
        "hidden": params["trunk0.W"].shape[1],
        "embedding_dim": params["f1.W"].shape[1],
        "K": params["g1.W"].shape[1],
    }


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(p: np.ndarray, dp: np.ndarray) -> np.ndarray:
    """Vector-Jacobian product of softmax: gradient w.r.t. logits."""
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))


def l2_normalize(u: np.ndarray):
    """Row-wise ``u / ||u||``; returns the rows and the effective denominators.

    Rows are pre-scaled by their largest magnitude so tiny vectors do not
    underflow. An all-zero row has no direction; it maps to the first basis
    vector with an infinite denominator, so no gradient flows through it.
    """
    scale = np.max(np.abs(u), axis=-1, keepdims=True)
    zero = scale == 0
    scaled = u / np.where(zero, 1.0, scale)
    denom = np.maximum(np.linalg.norm(scaled, axis=-1, keepdims=True), NORM_EPS)
    v = scaled / denom
    if np.any(zero):
        v[zero[..., 0], 0] = 1.0
    return v, np.where(zero, np.inf, scale * denom)


def l2_normalize_backward(v: np.ndarray, denom: np.ndarray, dv: np.ndarray) -> np.ndarray:
    return (dv - v * np.sum(v * dv, axis=-1, keepdims=True)) / denom


@dataclass
class ForwardResult:
    embedding: np.ndarray
    class_probs: np.ndarray
    cache: dict = field(repr=False)

    @property
    def logits(self) -> np.ndarray:
        return self.cache["logits"]


def _dense_relu_stack(x, params, layers, cache, prefix, final_relu):
    h = x
    for i, (wn, bn) in enumerate(layers):
        z = h @ params[wn] + params[bn]
        cache[f"{prefix}{i}.in"] = h
        last = i == len(layers) - 1
        if last and not final_relu:
            h = z
        else:
            cache[f"{prefix}{i}.z"] = z
            h = np.maximum(z, 0.0)
    return h


def forward(params: dict, x: np.ndarray) -> ForwardResult:
    """Run the trunk and both heads on one vector or a batch of rows."""
    W0 = params["trunk0.W"]
    x = np.asarray(x, dtype=W0.dtype)
    single = x.ndim == 1
    xb = x[None, :] if single else x
    if xb.ndim != 2 or xb.shape[1] != W0.shape[0]:
        raise ShapeMismatchError(f"expected input dimension {W0.shape[0]}, got shape {x.shape}")
    cache: dict = {}
    h = _dense_relu_stack(xb, params, TRUNK, cache, "trunk", final_relu=True)
    u = _dense_relu_stack(h, params, HEAD_F, cache, "f", final_relu=False)
    logits = _dense_relu_stack(h, params, HEAD_G, cache, "g", final_relu=False)
    v, denom = l2_normalize(u)
    p = softmax(logits)
    cache.update(v=v, denom=denom, p=p, logits=logits, batch=len(xb))
    if single:
        return ForwardResult(v[0], p[0], cache)
    return ForwardResult(v, p, cache)


def _stack_backward(params, layers, cache, prefix, dout, grads, final_relu):
    for i in reversed(range(len(layers))):
        wn, bn = layers[i]
        last = i == len(layers) - 1
        if not (last and not final_relu):
            dout = dout * (cache[f"{prefix}{i}.z"] > 0)
        h_in = cache[f"{prefix}{i}.in"]
        grads[wn] = grads.get(wn, 0) + h_in.T @ dout
        grads[bn] = grads.get(bn, 0) + dout.sum(axis=0)
        dout = dout @ params[wn].T
    return dout


def backward(params: dict, fwd: ForwardResult, d_embedding=None, d_probs=None,
             grads: dict | None = None) -> dict:
    """Accumulate parameter gradients given upstream gradients on the two outputs.

    ``d_embedding`` and ``d_probs`` are the loss gradients w.r.t. the
    normalised embedding and the class probabilities; either may be ``None``.
    Passing ``grads`` accumulates into an existing gradient dict, which is how
    several forward passes share one parameter set.
    """
    c = fwd.cache
    n = c["batch"]
    grads = {k: np.zeros_like(v) for k, v in params.items()} if grads is None else grads
    dh = np.zeros_like(c["trunk1.z"])
    if d_embedding is not None:
        dv = np.asarray(d_embedding).reshape(n, -1)
        if not np.all(np.isfinite(dv)):
            raise NonFiniteLossError("non-finite upstream gradient on embedding")
        du = l2_normalize_backward(c["v"], c["denom"], dv)
        dh = dh + _stack_backward(params, HEAD_F, c, "f", du, grads, final_relu=False)
    if d_probs is not None:
        dp = np.asarray(d_probs).reshape(n, -1)
        if not np.all(np.isfinite(dp)):
            raise NonFiniteLossError("non-finite upstream gradient on class probabilities")
        dlogits = softmax_backward(c["p"], dp)
        dh = dh + _stack_backward(params, HEAD_G, c, "g", dlogits, grads, final_relu=False)
    _stack_backward(params, TRUNK, c, "trunk", dh, grads, final_relu=True)
    return grads


def l2_penalty(params: dict, names=None):
    """``0.5 * sum ||W||^2`` over the named arrays and its gradient."""
    names = PARAM_NAMES if names is None else names
    value = 0.5 * sum(float(np.sum(params[n] ** 2)) for n in names)
    grads = {k: (params[k].copy() if k in names else np.zeros_like(v)) for k, v in params.items()}
    return value, grads


@dataclass
class OptimizerState:
    base_lr: float
    momentum: float = 0.9
    weight_decay: float = 1e-3
    warmup_epochs: int = 0
    total_epochs: int = 1
    buffers: dict = field(default_factory=dict)

    def __post_init__(self):
        if not (0 <= self.momentum < 1 and 0 <= self.weight_decay < 1):
            raise InvalidArgumentError("momentum and weight decay must lie in [0, 1)")
        if self.base_lr < 0:
            raise InvalidArgumentError("learning rate must be nonnegative")


def sgd_step(params: dict, grads: dict, opt: OptimizerState, lr: float) -> dict:
    """In-place SGD with momentum and coupled weight decay.

    ``buf <- momentum * buf + grad + wd * param``; ``param <- param - lr * buf``.
    """
    for name, p in params.items():
        g = grads[name]
        if np.shape(g) != p.shape:
            raise ShapeMismatchError(f"gradient for {name} has shape {np.shape(g)}, expected {p.shape}")
        buf = opt.buffers.get(name)
        if buf is None:
            buf = np.zeros_like(p)
        buf = opt.momentum * buf + g + opt.weight_decay * p
        opt.buffers[name] = buf
        p -= lr * buf
    return params


def lr_schedule(epoch: int, opt: OptimizerState) -> float:
    """Linear warmup to ``base_lr`` followed by cosine decay.

    During warmup the rate is ``base * max(epoch, 1) / warmup`` so the first
    epoch already trains at ``base / warmup``.
    """
    if not 0 <= epoch < opt.total_epochs:
        raise InvalidArgumentError(f"epoch {epoch} outside [0, {opt.total_epochs})")
    base, warm, total = opt.base_lr, opt.warmup_epochs, opt.total_epochs
    if epoch < warm:
        return base * max(epoch, 1) / warm
    span = total - warm
    return base * 0.5 * (1.0 + math.cos(math.pi * (epoch - warm) / span))


def save_checkpoint(params: dict, path) -> None:
    """Write all arrays to an ``.npz`` archive (names, dtypes and shapes included)."""
    with open(path, "wb") as fh:
        np.savez(fh, **params)


def load_checkpoint(path) -> dict:
    with np.load(path, allow_pickle=False) as z:
        params = {k: z[k] for k in z.files}
    missing = set(PARAM_NAMES) - set(params)
    if missing:
        raise InvalidArgumentError(f"{path}: checkpoint lacks {sorted(missing)}")
    return params
