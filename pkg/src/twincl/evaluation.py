"""Accuracy, noise-detection AUC, k-NN evaluation, imbalance and histograms."""

from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np
from scipy.stats import rankdata

from .errors import InvalidArgumentError


@dataclass(frozen=True)
class DetectionRecord:
    sample_id: int
    score: float
    is_clean: bool

    def __post_init__(self):
        if not 0.0 <= self.score <= 1.0:
            raise InvalidArgumentError(f"score {self.score} outside [0, 1]")


def detection_records(sample_ids, scores, is_clean) -> list[DetectionRecord]:
    return [DetectionRecord(int(i), float(s), bool(c)) for i, s, c in zip(sample_ids, scores, is_clean)]


def accuracy(predictions, truths) -> float:
    predictions, truths = np.asarray(predictions), np.asarray(truths)
    if predictions.shape != truths.shape:
        raise InvalidArgumentError("predictions and truths differ in length")
    if predictions.size == 0:
        raise InvalidArgumentError("accuracy of an empty set is undefined")
    return float(np.mean(predictions == truths))


def auc_from_scores(scores, is_clean) -> float:
    """Mann-Whitney AUC of clean-vs-noisy; each tied pair counts one half."""
    scores = np.asarray(scores, dtype=np.float64)
    is_clean = np.asarray(is_clean, dtype=bool)
    n_clean = int(is_clean.sum())
    n_noisy = len(is_clean) - n_clean
    if n_clean == 0 or n_noisy == 0:
        raise InvalidArgumentError("AUC needs at least one clean and one noisy record")
    ranks = rankdata(scores, method="average")
    u = ranks[is_clean].sum() - n_clean * (n_clean + 1) / 2.0
    return float(u / (n_clean * n_noisy))


def detection_auc(records: list[DetectionRecord]) -> float:
    return auc_from_scores([r.score for r in records], [r.is_clean for r in records])


def knn_predict(train_embeddings, train_labels, test_embeddings, k: int,
                chunk: int = 1024) -> np.ndarray:
    """Majority vote of the ``k`` most cosine-similar training points.

    Neighbours are ordered by decreasing similarity, equal similarities by
    training index. A tied vote goes to whichever tied class shows up first
    in that order, i.e. the one holding the nearest neighbour among them.
    """
    train = np.asarray(train_embeddings, dtype=np.float64)
    test = np.asarray(test_embeddings, dtype=np.float64)
    labels = np.asarray(train_labels, dtype=np.int64)
    if not 1 <= k <= len(train):
        raise InvalidArgumentError(f"k={k} outside [1, {len(train)}]")
    n_classes = int(labels.max()) + 1
    out = np.empty(len(test), dtype=np.int64)
    for start in range(0, len(test), chunk):
        sim = test[start:start + chunk] @ train.T
        order = np.argsort(-sim, axis=1, kind="stable")[:, :k]
        neigh = labels[order]
        votes = np.zeros((len(neigh), n_classes), dtype=np.int64)
        np.add.at(votes, (np.arange(len(neigh))[:, None], neigh), 1)
        is_top = votes[np.arange(len(neigh))[:, None], neigh] == votes.max(axis=1, keepdims=True)
        first = np.argmax(is_top, axis=1)
        out[start:start + chunk] = neigh[np.arange(len(neigh)), first]
    return out


def knn_eval(train_embeddings, train_labels, test_embeddings, test_labels, k: int) -> float:
    pred = knn_predict(train_embeddings, train_labels, test_embeddings, k)
    return accuracy(pred, test_labels)


def default_knn_k(n_train: int) -> int:
    return max(1, min(200, n_train // 10))


def imbalance_ratio(labels, K: int) -> float:
    """Largest class count over smallest."""
    counts = np.bincount(np.asarray(labels, dtype=np.int64), minlength=K)
    if len(counts) > K:
        raise InvalidArgumentError("label outside 0..K-1")
    if np.any(counts == 0):
        raise InvalidArgumentError(f"classes {np.flatnonzero(counts == 0).tolist()} are missing")
    return float(counts.max() / counts.min())


def clean_histogram(scores, is_clean, bins: int = 20) -> np.ndarray:
    """Rows of ``(bin_lo, bin_hi, count_clean, count_noisy)`` over ``[0, 1]``.

    The last bin is closed, so a score of exactly 1 lands in it.
    """
    if bins < 2:
        raise InvalidArgumentError("need at least two bins")
    scores = np.asarray(scores, dtype=np.float64)
    is_clean = np.asarray(is_clean, dtype=bool)
    edges = np.linspace(0.0, 1.0, bins + 1)
    clean, _ = np.histogram(scores[is_clean], bins=edges)
    noisy, _ = np.histogram(scores[~is_clean], bins=edges)
    return np.column_stack([edges[:-1], edges[1:], clean, noisy])


def export_clean_histogram(records: list[DetectionRecord], bins: int, path=None) -> np.ndarray:
    table = clean_histogram([r.score for r in records], [r.is_clean for r in records], bins)
    if path is not None:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(["bin_lo", "bin_hi", "count_clean", "count_noisy"])
            for lo, hi, c, n in table:
                writer.writerow([repr(float(lo)), repr(float(hi)), int(c), int(n)])
    return table
