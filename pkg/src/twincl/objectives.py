"""Loss terms and the composite training objective.

Every loss takes batched arrays, averages over the batch, and with
``with_grad=True`` also returns its gradient w.r.t. each differentiable
input. :func:`twin_loss` wires them to the network for one mini-batch.
"""

from __future__ import annotations

import math
from dataclasses import astuple, dataclass, fields

import numpy as np

from . import model as nn
from .data import ViewTriple
from .errors import InvalidArgumentError, NonFiniteLossError
from .mixture import GmmState, posterior, posterior_backward

LOG_EPS = 1e-12
SIMPLEX_TOL = 1e-6
TERMS = ("cross", "reg", "ctr", "align")


def _check_simplex(name, p):
    if np.any(p < -SIMPLEX_TOL) or not np.allclose(p.sum(axis=-1), 1.0, atol=SIMPLEX_TOL, rtol=0):
        raise InvalidArgumentError(f"{name} is not on the probability simplex")


def _rows(a):
    return np.atleast_2d(np.asarray(a, dtype=np.float64))


@dataclass(frozen=True)
class SoftTarget:
    t1: np.ndarray
    t2: np.ndarray
    avg: np.ndarray


def correct_targets(y, w, g1, g2) -> SoftTarget:
    """Blend the noisy one-hot label with each view's prediction.

    ``t1 = w*y + (1-w)*g1`` and likewise for ``t2``. The predictions are
    copied, so the targets are constants for differentiation.
    """
    y, g1, g2 = _rows(y), _rows(g1).copy(), _rows(g2).copy()
    w = np.asarray(w, dtype=np.float64).reshape(-1, 1)
    if np.any(w < 0) or np.any(w > 1):
        raise InvalidArgumentError("clean weight must lie in [0, 1]")
    for name, p in (("y", y), ("g1", g1), ("g2", g2)):
        _check_simplex(name, p)
    t1 = w * y + (1.0 - w) * g1
    t2 = w * y + (1.0 - w) * g2
    return SoftTarget(t1, t2, 0.5 * (t1 + t2))


def cross_entropy(p, t):
    """Per-row ``-sum t log(p + eps)`` and its gradient w.r.t. ``p``."""
    return -np.sum(t * np.log(p + LOG_EPS), axis=-1), -t / (p + LOG_EPS)


def cross_loss(p1, p2, targets: SoftTarget, with_grad: bool = False):
    """Swapped-view cross-entropy: ``l(p1, t2) + l(p2, t1)``, batch mean."""
    p1, p2 = _rows(p1), _rows(p2)
    n = len(p1)
    ce1, d1 = cross_entropy(p1, targets.t2)
    ce2, d2 = cross_entropy(p2, targets.t1)
    value = float(np.mean(ce1 + ce2))
    if not with_grad:
        return value
    return value, (d1 / n, d2 / n)


def _entropy(q):
    return -np.sum(q * np.log(q + LOG_EPS), axis=-1)


def _entropy_grad(q):
    return -(np.log(q + LOG_EPS) + q / (q + LOG_EPS))


def reg_loss(preds, with_grad: bool = False):
    """``-H(mean prediction) + mean H(prediction)`` in nats."""
    p = _rows(preds)
    m = len(p)
    mean_p = p.mean(axis=0)
    value = float(-_entropy(mean_p) + np.mean(_entropy(p)))
    if not with_grad:
        return value
    grad = (-_entropy_grad(mean_p)[None, :] + _entropy_grad(p)) / m
    return value, grad


def ctr_loss(z1, z2, tau: float, with_grad: bool = False):
    """Symmetric in-batch InfoNCE.

    Each of the ``2N`` view embeddings is an anchor; its positive is the other
    view of the same sample and the denominator runs over the remaining
    ``2N - 1`` embeddings. The result is the mean over anchors.
    """
    z1, z2 = _rows(z1), _rows(z2)
    n = len(z1)
    if n < 2:
        raise InvalidArgumentError("contrastive loss needs a batch of at least two")
    if not tau > 0:
        raise InvalidArgumentError("temperature must be positive")
    z = np.concatenate([z1, z2])
    sim = z @ z.T / tau
    np.fill_diagonal(sim, -np.inf)
    pos = np.concatenate([np.arange(n, 2 * n), np.arange(n)])
    rows = np.arange(2 * n)
    row_max = sim.max(axis=1, keepdims=True)
    expd = np.exp(sim - row_max)
    denom = expd.sum(axis=1)
    lse = row_max[:, 0] + np.log(denom)
    value = float(np.mean(lse - sim[rows, pos]))
    if not with_grad:
        return value
    g = expd / denom[:, None]
    g[rows, pos] -= 1.0
    g /= 2 * n
    dz = (g + g.T) @ z / tau
    return value, (dz[:n], dz[n:])


def align_loss(g_mix, gmm_post, t_mix, with_grad: bool = False):
    """Cross-entropy of both the classifier and the GMM posterior against the mixed target."""
    g_mix, gmm_post, t_mix = _rows(g_mix), _rows(gmm_post), _rows(t_mix)
    for name, p in (("g_mix", g_mix), ("gmm_post", gmm_post), ("t_mix", t_mix)):
        _check_simplex(name, p)
    n = len(g_mix)
    ce1, d1 = cross_entropy(g_mix, t_mix)
    ce2, d2 = cross_entropy(gmm_post, t_mix)
    value = float(np.mean(ce1 + ce2))
    if not with_grad:
        return value
    return value, (d1 / n, d2 / n)


@dataclass(frozen=True)
class LossBreakdown:
    cross: float
    reg: float
    ctr: float
    align: float
    total: float

    def as_row(self) -> tuple:
        return astuple(self)

    @classmethod
    def columns(cls) -> tuple:
        return tuple(f.name for f in fields(cls))


def total_loss(cross: float, reg: float, ctr: float, align: float) -> LossBreakdown:
    """Unweighted sum of the four terms."""
    parts = dict(cross=cross, reg=reg, ctr=ctr, align=align)
    bad = {k: v for k, v in parts.items() if not math.isfinite(v)}
    if bad:
        raise NonFiniteLossError(f"non-finite loss terms: {bad}")
    return LossBreakdown(cross, reg, ctr, align, (cross + reg) + ctr + align)


def twin_loss(params: dict, views: ViewTriple, noisy_onehot: np.ndarray, w: np.ndarray,
              gmm: GmmState, tau: float, terms=TERMS, frozen_targets: SoftTarget | None = None,
              with_grad: bool = True):
    """Loss (and parameter gradients) for one mini-batch.

    Terms not listed in ``terms`` are reported as zero and contribute no
    gradient. ``frozen_targets`` replaces the bootstrapped targets, which is
    only useful for gradient checks: the targets never carry gradient anyway.

    Returns ``(LossBreakdown, grads)`` where ``grads`` is ``None`` when
    ``with_grad`` is false.
    """
    unknown = set(terms) - set(TERMS)
    if unknown:
        raise InvalidArgumentError(f"unknown loss terms {sorted(unknown)}")
    f1 = nn.forward(params, views.view1)
    f2 = nn.forward(params, views.view2)
    fm = nn.forward(params, views.mix_view)
    p1, p2, pm = f1.class_probs, f2.class_probs, fm.class_probs
    n = len(p1)

    targets = frozen_targets or correct_targets(noisy_onehot, w, p1, p2)
    lam = views.mix_lambda[:, None]
    t_mix = lam * targets.avg + (1.0 - lam) * targets.avg[views.partner_pos]

    zeros = np.zeros_like(p1)
    dp1, dp2, dpm = zeros, zeros.copy(), zeros.copy()
    dv1 = dv2 = dvm = None
    values = dict.fromkeys(TERMS, 0.0)

    if "cross" in terms:
        values["cross"], (a, b) = cross_loss(p1, p2, targets, with_grad=True)
        dp1, dp2 = dp1 + a, dp2 + b
    if "reg" in terms:
        values["reg"], g = reg_loss(np.concatenate([p1, p2]), with_grad=True)
        dp1, dp2 = dp1 + g[:n], dp2 + g[n:]
    if "ctr" in terms:
        values["ctr"], (dv1, dv2) = ctr_loss(f1.embedding, f2.embedding, tau, with_grad=True)
    if "align" in terms:
        gamma = posterior(gmm, fm.embedding)
        values["align"], (a, b) = align_loss(pm, gamma, t_mix, with_grad=True)
        dpm = dpm + a
        dvm = posterior_backward(gmm, gamma, b)

    breakdown = total_loss(**values)
    if not with_grad:
        return breakdown, None
    grads = nn.backward(params, f1, dv1, dp1)
    nn.backward(params, f2, dv2, dp2, grads=grads)
    nn.backward(params, fm, dvm, dpm, grads=grads)
    return breakdown, grads
