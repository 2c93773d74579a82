"""Mixture models over embeddings and over clean probabilities.

Two models live here:

* a spherical K-component GMM on the unit sphere whose responsibilities are
  not estimated but taken from the classifier's softmax outputs, so that
  component ``k`` is tied to class ``k``;
* a classical two-component 1-D GMM fit by EM to the per-sample clean
  probabilities, whose higher-mean component is read as "clean".
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.special import logsumexp

from .errors import DegenerateClassError, DegenerateInputError, InvalidArgumentError
from .model import softmax, softmax_backward

log = logging.getLogger(__name__)

SIGMA_FLOOR = 1e-8
MIN_CLASS_MASS = 1e-8
BINARY_VAR_FLOOR = 1e-6


@dataclass(frozen=True)
class GmmState:
    means: np.ndarray      # (K, e), unit rows
    variances: np.ndarray  # (K,), positive

    def __post_init__(self):
        norms = np.linalg.norm(self.means, axis=1)
        if not np.allclose(norms, 1.0, atol=1e-9, rtol=0):
            raise InvalidArgumentError("GMM means must be unit vectors")
        if np.any(self.variances <= 0):
            raise InvalidArgumentError("GMM variances must be positive")

    @property
    def num_components(self) -> int:
        return len(self.means)


def update_gmm(embeddings: np.ndarray, predictions: np.ndarray,
               previous: GmmState | None = None) -> GmmState:
    """M-step with responsibilities replaced by class predictions.

    ``mu_k`` is the prediction-weighted mean embedding, l2-normalised;
    ``sigma_k`` is the prediction-weighted mean squared distance to the
    normalised ``mu_k``, floored at ``SIGMA_FLOOR``.

    A class whose total predicted mass is below ``MIN_CLASS_MASS`` keeps its
    parameters from ``previous``; without a previous state this raises
    :class:`DegenerateClassError`.
    """
    V = np.asarray(embeddings, dtype=np.float64)
    P = np.asarray(predictions, dtype=np.float64)
    if V.ndim != 2 or P.ndim != 2 or len(V) != len(P) or len(V) == 0:
        raise InvalidArgumentError("need matching nonempty (n, e) embeddings and (n, K) predictions")
    mass = P.sum(axis=0)
    weighted = P.T @ V
    means = np.empty_like(weighted)
    variances = np.empty(P.shape[1])
    for k in range(P.shape[1]):
        if mass[k] < MIN_CLASS_MASS:
            if previous is None:
                raise DegenerateClassError(f"class {k} has total predicted mass {mass[k]:.3g}")
            log.warning("class %d has no predicted mass; keeping previous component", k)
            means[k], variances[k] = previous.means[k], previous.variances[k]
            continue
        mu = weighted[k] / mass[k]
        mu = mu / np.linalg.norm(mu)
        diff = V - mu
        sq = np.einsum("ij,ij->i", diff, diff)
        means[k] = mu
        variances[k] = max(float(P[:, k] @ sq) / mass[k], SIGMA_FLOOR)
    return GmmState(means, variances)


def posterior_logits(gmm: GmmState, v: np.ndarray) -> np.ndarray:
    return np.asarray(v) @ gmm.means.T / gmm.variances


def posterior(gmm: GmmState, v: np.ndarray) -> np.ndarray:
    """Cluster responsibilities ``softmax_k(v . mu_k / sigma_k)`` (uniform prior)."""
    return softmax(posterior_logits(gmm, v))


def posterior_backward(gmm: GmmState, gamma: np.ndarray, d_gamma: np.ndarray) -> np.ndarray:
    """Gradient w.r.t. the embedding; the GMM parameters are treated as constants."""
    d_logits = softmax_backward(gamma, d_gamma)
    return d_logits @ (gmm.means / gmm.variances[:, None])


def clean_prob(gmm: GmmState, v: np.ndarray, y) -> np.ndarray | float:
    """Responsibility of the component matching the given label."""
    y_arr = np.asarray(y)
    K = gmm.num_components
    if np.any(y_arr < 0) or np.any(y_arr >= K):
        raise InvalidArgumentError(f"class index out of range for K={K}")
    gamma = posterior(gmm, v)
    if gamma.ndim == 1:
        return float(gamma[int(y_arr)])
    return np.take_along_axis(gamma, y_arr.reshape(-1, 1), axis=1)[:, 0]


@dataclass(frozen=True)
class BinaryGmm:
    means: np.ndarray
    variances: np.ndarray
    weights: np.ndarray
    log_likelihoods: tuple = field(default=(), compare=False)
    n_iter: int = field(default=0, compare=False)

    @property
    def clean_component(self) -> int:
        return int(np.argmax(self.means))


def _component_log_density(x, means, variances, weights):
    return (np.log(weights) - 0.5 * np.log(2.0 * np.pi * variances)
            - 0.5 * (x[:, None] - means) ** 2 / variances)


def fit_binary_gmm(values, max_iter: int = 100, tol: float = 1e-6,
                   var_floor: float = BINARY_VAR_FLOOR) -> BinaryGmm:
    """Two-component 1-D Gaussian mixture by EM.

    Means start at the 10th and 90th percentiles, both variances at the
    overall variance and the weights at one half. Each iteration runs one
    E-step and one M-step and stops once no mean moves by ``tol`` or more.
    The log-likelihood before every M-step, plus that of the final
    parameters, is kept in ``log_likelihoods``.
    """
    x = np.asarray(values, dtype=np.float64).ravel()
    if len(x) < 2:
        raise InvalidArgumentError("need at least two values")
    if np.ptp(x) == 0:
        raise DegenerateInputError("all values are equal")
    means = np.percentile(x, [10.0, 90.0])
    variances = np.full(2, max(float(np.var(x)), var_floor))
    weights = np.array([0.5, 0.5])
    history = []
    it = 0
    for it in range(1, max_iter + 1):
        logp = _component_log_density(x, means, variances, weights)
        norm = logsumexp(logp, axis=1)
        history.append(float(norm.sum()))
        resp = np.exp(logp - norm[:, None])
        nk = np.maximum(resp.sum(axis=0), np.finfo(float).tiny)
        weights = nk / len(x)
        new_means = resp.T @ x / nk
        variances = np.maximum(np.einsum("ik,ik->k", resp, (x[:, None] - new_means) ** 2) / nk,
                               var_floor)
        change = float(np.max(np.abs(new_means - means)))
        means = new_means
        if change < tol:
            break
    final = logsumexp(_component_log_density(x, means, variances, weights), axis=1)
    history.append(float(final.sum()))
    return BinaryGmm(means, variances, weights, tuple(history), it)


def clean_posterior(bg: BinaryGmm, value) -> np.ndarray | float:
    """Posterior probability of the clean (higher-mean) component."""
    x = np.asarray(value, dtype=np.float64)
    logp = _component_log_density(np.atleast_1d(x), bg.means, bg.variances, bg.weights)
    w = np.exp(logp[:, bg.clean_component] - logsumexp(logp, axis=1))
    return float(w[0]) if x.ndim == 0 else w


def write_gmm(gmm: GmmState, path) -> None:
    """One line per component: ``k,sigma_k,mu_k[0],...,mu_k[e-1]``."""
    lines = []
    for k in range(gmm.num_components):
        vals = ",".join(repr(float(v)) for v in gmm.means[k])
        lines.append(f"{k},{float(gmm.variances[k])!r},{vals}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def read_gmm(path) -> GmmState:
    rows = [ln.split(",") for ln in Path(path).read_text(encoding="utf-8").splitlines() if ln.strip()]
    rows.sort(key=lambda r: int(r[0]))
    variances = np.array([float(r[1]) for r in rows])
    means = np.array([[float(v) for v in r[2:]] for r in rows])
    return GmmState(means, variances)
