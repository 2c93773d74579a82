"""Synthetic blobs, label noise, vector augmentations and mixup.

Class indices are 0-based throughout (``0 .. K-1``).
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .errors import InvalidArgumentError

NOISE_KINDS = ("none", "symmetric", "asymmetric")
_KIND_ALIASES = {"sym": "symmetric", "asym": "asymmetric"}


@dataclass(frozen=True)
class LabeledSample:
    features: np.ndarray
    noisy_label: int
    true_label: int
    sample_id: int


@dataclass
class Dataset:
    """Column-oriented labeled dataset.

    ``true_labels`` are kept for evaluation only; training code must read
    ``noisy_labels``.
    """

    features: np.ndarray
    noisy_labels: np.ndarray
    true_labels: np.ndarray
    sample_ids: np.ndarray
    num_classes: int
    noise_kind: str = "none"
    noise_ratio: float = 0.0

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        self.noisy_labels = np.asarray(self.noisy_labels, dtype=np.int64)
        self.true_labels = np.asarray(self.true_labels, dtype=np.int64)
        self.sample_ids = np.asarray(self.sample_ids, dtype=np.int64)
        n = len(self.features)
        if self.features.ndim != 2:
            raise InvalidArgumentError("features must be a 2-D array")
        if not (len(self.noisy_labels) == len(self.true_labels) == len(self.sample_ids) == n):
            raise InvalidArgumentError("column lengths differ")
        for labels in (self.noisy_labels, self.true_labels):
            if n and (labels.min() < 0 or labels.max() >= self.num_classes):
                raise InvalidArgumentError("class index out of range")
        if not np.all(np.isfinite(self.features)):
            raise InvalidArgumentError("features must be finite")
        if len(np.unique(self.sample_ids)) != n:
            raise InvalidArgumentError("sample ids must be unique")
        if self.noise_kind not in NOISE_KINDS:
            raise InvalidArgumentError(f"unknown noise kind {self.noise_kind!r}")

    def __len__(self) -> int:
        return len(self.features)

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    @property
    def is_clean(self) -> np.ndarray:
        return self.noisy_labels == self.true_labels

    @property
    def samples(self) -> list[LabeledSample]:
        return [
            LabeledSample(self.features[i], int(self.noisy_labels[i]),
                          int(self.true_labels[i]), int(self.sample_ids[i]))
            for i in range(len(self))
        ]

    def records_equal(self, other: "Dataset") -> bool:
        return (
            self.num_classes == other.num_classes
            and np.array_equal(self.sample_ids, other.sample_ids)
            and np.array_equal(self.true_labels, other.true_labels)
            and np.array_equal(self.noisy_labels, other.noisy_labels)
            and np.array_equal(self.features, other.features)
        )


def blob_centers(K: int, d: int, separation: float, rng: np.random.Generator) -> np.ndarray:
    """Draw ``K`` centers in ``R^d`` with pairwise distance at least ``separation``.

    When ``K <= d`` the centers are scaled orthonormal vectors, so every pair
    sits at exactly ``separation``. Otherwise they are placed by rejection
    sampling inside a cube that grows until a placement succeeds.
    """
    if K <= d:
        q, _ = np.linalg.qr(rng.normal(size=(d, K)))
        return q.T * (separation / math.sqrt(2.0))
    half = separation * K ** (1.0 / d)
    while True:
        centers = []
        for _ in range(1000 * K):
            c = rng.uniform(-half, half, size=d)
            if all(np.linalg.norm(c - o) >= separation for o in centers):
                centers.append(c)
                if len(centers) == K:
                    return np.array(centers)
        half *= 1.2


def _sample_blobs(centers, n, rng, cluster_std, id_offset=0):
    K = len(centers)
    labels = rng.permutation(np.arange(n) % K)
    feats = centers[labels] + cluster_std * rng.normal(size=(n, centers.shape[1]))
    return Dataset(feats, labels.copy(), labels.copy(), np.arange(id_offset, id_offset + n), K)


def _check_blob_args(n, K, d, separation):
    if K < 2:
        raise InvalidArgumentError("need at least two classes")
    if n < K:
        raise InvalidArgumentError(f"n={n} is smaller than K={K}")
    if d < 2:
        raise InvalidArgumentError("dimension must be at least 2")
    if not separation > 0:
        raise InvalidArgumentError("separation must be positive")


def generate_blobs(n: int, K: int, d: int, separation: float, seed: int,
                   cluster_std: float = 1.0) -> Dataset:
    """Balanced isotropic Gaussian blobs with clean labels."""
    _check_blob_args(n, K, d, separation)
    rng = np.random.default_rng(seed)
    centers = blob_centers(K, d, separation, rng)
    return _sample_blobs(centers, n, rng, cluster_std)


def generate_train_test(n_train: int, n_test: int, K: int, d: int, separation: float,
                        seed: int, cluster_std: float = 1.0) -> tuple[Dataset, Dataset]:
    """Train and test sets drawn around the same centers.

    The training split is identical to ``generate_blobs(n_train, ...)`` with
    the same seed; test ids continue after the training ids.
    """
    _check_blob_args(n_train, K, d, separation)
    if n_test < 1:
        raise InvalidArgumentError("n_test must be positive")
    rng = np.random.default_rng(seed)
    centers = blob_centers(K, d, separation, rng)
    train = _sample_blobs(centers, n_train, rng, cluster_std)
    test_rng = np.random.default_rng([seed, 1])
    test = _sample_blobs(centers, n_test, test_rng, cluster_std, id_offset=n_train)
    return train, test


def cyclic_class_map(K: int) -> np.ndarray:
    return (np.arange(K) + 1) % K


def inject_noise(ds: Dataset, kind: str, ratio: float, seed: int,
                 class_map: np.ndarray | None = None) -> Dataset:
    """Corrupt an exact fraction of labels.

    Exactly ``floor(ratio * n_eligible)`` samples receive a wrong label. They
    are drawn without replacement, stratified by true class so that every
    class loses the same share (up to rounding). Symmetric noise draws a uniformly
    random other class; asymmetric noise applies ``class_map`` (default: the
    cyclic map ``k -> k+1 mod K``). Under asymmetric noise only samples whose
    class is not a fixed point of the map are eligible, which for the cyclic
    map means all of them.

    Noise is applied to the true labels, so the result does not depend on any
    noise already present in ``ds``.
    """
    kind = _KIND_ALIASES.get(kind, kind)
    if kind not in ("symmetric", "asymmetric"):
        raise InvalidArgumentError(f"unknown noise kind {kind!r}")
    if not 0 <= ratio < 1:
        raise InvalidArgumentError("noise ratio must lie in [0, 1)")
    if ratio == 0:
        return ds
    K = ds.num_classes
    rng = np.random.default_rng(seed)
    true = ds.true_labels
    noisy = true.copy()
    if kind == "symmetric":
        eligible = np.arange(len(ds))
    else:
        cmap = cyclic_class_map(K) if class_map is None else np.asarray(class_map, dtype=np.int64)
        if cmap.shape != (K,) or cmap.min() < 0 or cmap.max() >= K:
            raise InvalidArgumentError("class_map must map every class to a class")
        eligible = np.flatnonzero(cmap[true] != true)
    chosen = _stratified_choice(eligible, true[eligible], ratio, rng)
    count = len(chosen)
    if kind == "symmetric":
        noisy[chosen] = (true[chosen] + rng.integers(1, K, size=count)) % K
    else:
        noisy[chosen] = cmap[true[chosen]]
    return replace(ds, noisy_labels=noisy, noise_kind=kind,
                   noise_ratio=count / len(ds))


def _stratified_choice(pool, pool_labels, ratio, rng):
    """Pick ``floor(ratio * len(pool))`` members, spread over classes as evenly as possible.

    Each class gives ``floor(ratio * n_k)`` members; the few left over go one
    each to randomly chosen classes with a fractional share.
    """
    total = math.floor(ratio * len(pool) + 1e-9)
    classes = np.unique(pool_labels)
    members = [pool[pool_labels == k] for k in classes]
    exact = np.array([ratio * len(m) for m in members])
    take = np.floor(exact + 1e-9).astype(np.int64)
    spare = np.flatnonzero(exact - take > 1e-9)
    extra = total - int(take.sum())
    if extra > 0:
        take[rng.choice(spare, size=extra, replace=False)] += 1
    picks = [rng.choice(m, size=t, replace=False) for m, t in zip(members, take)]
    return np.sort(np.concatenate(picks)) if picks else np.empty(0, dtype=np.int64)


def augment(x: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Random per-coordinate scaling in ``[1-s, 1+s]`` followed by Gaussian jitter of std ``s``.

    Works on a single vector or a batch of rows.
    """
    if strength < 0:
        raise InvalidArgumentError("augmentation strength must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    if strength == 0:
        return x.copy()
    scale = rng.uniform(1.0 - strength, 1.0 + strength, size=x.shape)
    return x * scale + rng.normal(0.0, strength, size=x.shape)


def weak_augment(x: np.ndarray, strength: float, rng: np.random.Generator) -> np.ndarray:
    """Jitter-only augmentation at half strength, used as the mixup base."""
    if strength < 0:
        raise InvalidArgumentError("augmentation strength must be nonnegative")
    x = np.asarray(x, dtype=np.float64)
    if strength == 0:
        return x.copy()
    return x + rng.normal(0.0, 0.5 * strength, size=x.shape)


def sample_beta(alpha: float, rng: np.random.Generator, size=None):
    """Draw mixup coefficients from the symmetric ``Beta(alpha, alpha)``."""
    if not alpha > 0:
        raise InvalidArgumentError("alpha must be positive")
    return rng.beta(alpha, alpha, size=size)


def mixup_pair(x_i, t_i, x_j, t_j, lam):
    """Convex combination of two inputs and their soft targets.

    ``lam`` may be a scalar or one coefficient per row of a batch.
    """
    lam = np.asarray(lam, dtype=np.float64)
    if np.any(lam < 0) or np.any(lam > 1) or np.any(np.isnan(lam)):
        raise InvalidArgumentError("mixup coefficient must lie in [0, 1]")
    x_i, x_j = np.asarray(x_i, dtype=np.float64), np.asarray(x_j, dtype=np.float64)
    t_i, t_j = np.asarray(t_i, dtype=np.float64), np.asarray(t_j, dtype=np.float64)
    lx = lam[..., None] if lam.ndim and x_i.ndim > lam.ndim else lam
    lt = lam[..., None] if lam.ndim and t_i.ndim > lam.ndim else lam
    return lx * x_i + (1.0 - lx) * x_j, lt * t_i + (1.0 - lt) * t_j


@dataclass
class ViewTriple:
    """Two augmented views and one mixup view for a batch.

    ``partner_pos`` indexes the mixup partner within the batch; ``mix_partner``
    holds the partner's sample id.
    """

    view1: np.ndarray
    view2: np.ndarray
    mix_view: np.ndarray
    mix_lambda: np.ndarray
    partner_pos: np.ndarray
    mix_partner: np.ndarray = field(default=None)


def make_views(x: np.ndarray, sample_ids: np.ndarray, strength: float, alpha: float,
               rng: np.random.Generator) -> ViewTriple:
    """Build the per-batch view triple.

    Mixup partners are drawn uniformly within the batch, with replacement.
    """
    n = len(x)
    v1 = augment(x, strength, rng)
    v2 = augment(x, strength, rng)
    base = weak_augment(x, strength, rng)
    lam = sample_beta(alpha, rng, size=n)
    partner = rng.integers(0, n, size=n)
    mixed = lam[:, None] * base + (1.0 - lam[:, None]) * base[partner]
    return ViewTriple(v1, v2, mixed, lam, partner, np.asarray(sample_ids)[partner])


def write_dataset(ds: Dataset, path) -> None:
    """Write the line-oriented text format.

    Header ``d=<int> K=<int> n=<int>``, then ``sample_id,true_label,noisy_label,f_1..f_d``.
    Floats use ``repr`` so reading back is bit-exact.
    """
    lines = [f"d={ds.dim} K={ds.num_classes} n={len(ds)}"]
    for i in range(len(ds)):
        feats = ",".join(repr(float(v)) for v in ds.features[i])
        lines.append(f"{ds.sample_ids[i]},{ds.true_labels[i]},{ds.noisy_labels[i]},{feats}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8", newline="\n")


def _infer_noise_kind(true, noisy, K):
    flipped = noisy != true
    if not flipped.any():
        return "none"
    if np.all(noisy[flipped] == (true[flipped] + 1) % K):
        return "asymmetric"
    return "symmetric"


def read_dataset(path) -> Dataset:
    """Read a file written by :func:`write_dataset`.

    The format does not store the noise kind; it is inferred (cyclic flips
    read back as asymmetric).
    """
    text = Path(path).read_text(encoding="utf-8")
    lines = text.splitlines()
    if not lines:
        raise InvalidArgumentError(f"{path}: empty dataset file")
    try:
        header = dict(tok.split("=", 1) for tok in lines[0].split())
        d, K, n = int(header["d"]), int(header["K"]), int(header["n"])
    except (KeyError, ValueError) as exc:
        raise InvalidArgumentError(f"{path}: malformed header {lines[0]!r}") from exc
    body = [ln for ln in lines[1:] if ln.strip()]
    if len(body) != n:
        raise InvalidArgumentError(f"{path}: header says n={n}, found {len(body)} records")
    ids = np.empty(n, dtype=np.int64)
    true = np.empty(n, dtype=np.int64)
    noisy = np.empty(n, dtype=np.int64)
    feats = np.empty((n, d), dtype=np.float64)
    for i, line in enumerate(body):
        parts = line.split(",")
        if len(parts) != 3 + d:
            raise InvalidArgumentError(f"{path}: record {i} has {len(parts)} fields, expected {3 + d}")
        ids[i], true[i], noisy[i] = int(parts[0]), int(parts[1]), int(parts[2])
        feats[i] = [float(p) for p in parts[3:]]
    kind = _infer_noise_kind(true, noisy, K)
    return Dataset(feats, noisy, true, ids, K, kind, float(np.mean(noisy != true)) if n else 0.0)
