"""EM-style training loop: refit mixtures, then run one epoch of SGD on the twin loss."""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import asdict, dataclass, field, fields, replace
from typing import Callable

import numpy as np

from . import model as nn
from .data import Dataset, make_views
from .errors import ConfigError, DegenerateInputError, NonFiniteLossError
from .evaluation import accuracy, auc_from_scores
from .mixture import BinaryGmm, GmmState, clean_posterior, clean_prob, fit_binary_gmm, update_gmm
from .objectives import LossBreakdown, twin_loss

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    """Training hyperparameters.

    Temperature, mixup alpha, momentum and weight decay keep their usual
    image-benchmark values; epochs, batch size, learning rate and widths are sized
    for small synthetic problems. ``correct_labels=False`` pins every clean
    weight at 1, which gives the no-correction baseline.
    """

    epochs: int = 60
    warmup_epochs: int = 6
    batch_size: int = 128
    base_lr: float = 0.05
    momentum: float = 0.9
    weight_decay: float = 1e-3
    tau: float = 0.25
    mixup_alpha: float = 1.0
    embedding_dim: int = 16
    hidden: int = 64
    update_frequency: int = 1
    augment_strength: float = 0.3
    seed: int = 1
    correct_labels: bool = True
    dtype: str = "float64"

    def __post_init__(self):
        checks = {
            "epochs": self.epochs >= 0,
            "warmup_epochs": 0 <= self.warmup_epochs,
            "batch_size": self.batch_size >= 2,
            "base_lr": self.base_lr >= 0,
            "momentum": 0 <= self.momentum < 1,
            "weight_decay": 0 <= self.weight_decay < 1,
            "tau": self.tau > 0,
            "mixup_alpha": self.mixup_alpha > 0,
            "embedding_dim": self.embedding_dim >= 2,
            "hidden": self.hidden >= 1,
            "update_frequency": self.update_frequency >= 1,
            "augment_strength": self.augment_strength >= 0,
            "dtype": self.dtype in ("float64", "float32"),
        }
        bad = [k for k, ok in checks.items() if not ok]
        if bad:
            raise ConfigError(f"invalid config values: {', '.join(bad)}")

    @classmethod
    def from_mapping(cls, values: dict) -> "TrainConfig":
        """Build from string or typed values, coercing to each field's type."""
        types = {f.name: f.type for f in fields(cls)}
        kwargs = {}
        for key, raw in values.items():
            if key not in types:
                raise ConfigError(f"unknown config key {key!r}")
            kind = types[key]
            try:
                if kind == "bool" and isinstance(raw, str):
                    if raw.lower() not in ("true", "false", "1", "0", "yes", "no"):
                        raise ValueError(raw)
                    kwargs[key] = raw.lower() in ("true", "1", "yes")
                else:
                    kwargs[key] = {"int": int, "float": float, "bool": bool, "str": str}[kind](raw)
            except ValueError as exc:
                raise ConfigError(f"bad value for {key}: {raw!r}") from exc
        return cls(**kwargs)


@dataclass
class EpochState:
    gmm: GmmState
    binary: BinaryGmm
    clean_weights: np.ndarray
    clean_probs: np.ndarray


def e_step(dataset: Dataset, params: dict, previous: EpochState | None = None) -> EpochState:
    """Refit the embedding GMM and the clean weights on un-augmented data.

    A degenerate binary fit carries the previous weights forward; without a
    previous state the error propagates.
    """
    fwd = nn.forward(params, dataset.features)
    V = fwd.embedding.astype(np.float64)
    P = fwd.class_probs.astype(np.float64)
    gmm = update_gmm(V, P, previous.gmm if previous is not None else None)
    gamma = clean_prob(gmm, V, dataset.noisy_labels)
    try:
        binary = fit_binary_gmm(gamma)
        weights = clean_posterior(binary, gamma)
    except DegenerateInputError:
        if previous is None:
            raise
        log.warning("degenerate clean-probability fit; keeping previous clean weights")
        binary, weights = previous.binary, previous.clean_weights
    return EpochState(gmm, binary, weights, gamma)


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    # near-equal splits keep every batch at >= 2 samples for the contrastive term
    return np.array_split(perm, max(1, math.ceil(n / batch_size)))


def m_step_epoch(dataset: Dataset, params: dict, opt: nn.OptimizerState, state: EpochState,
                 epoch: int, config: TrainConfig):
    """One pass of SGD over shuffled mini-batches.

    Returns ``(params, losses)`` with one :class:`LossBreakdown` per batch.
    Shuffling, augmentation and mixup draw from a stream seeded by
    ``(seed, epoch)``.
    """
    lr = nn.lr_schedule(epoch, opt)
    rng = np.random.default_rng([config.seed, epoch])
    onehot = np.eye(dataset.num_classes)[dataset.noisy_labels]
    x = dataset.features.astype(config.dtype)
    losses = []
    for step, idx in enumerate(_batches(len(dataset), config.batch_size, rng)):
        views = make_views(x[idx], dataset.sample_ids[idx], config.augment_strength,
                           config.mixup_alpha, rng)
        try:
            parts, grads = twin_loss(params, views, onehot[idx], state.clean_weights[idx],
                                     state.gmm, config.tau)
        except NonFiniteLossError as exc:
            raise NonFiniteLossError(f"epoch {epoch}, batch {step}: {exc}") from exc
        nn.sgd_step(params, grads, opt, lr)
        losses.append(parts)
    return params, losses


def predict(params: dict, x: np.ndarray) -> np.ndarray | int:
    """Arg-max class; ties go to the lowest index."""
    probs = nn.forward(params, x).class_probs
    out = np.argmax(probs, axis=-1)
    return int(out) if np.ndim(out) == 0 else out


METRIC_COLUMNS = ("epoch", "lr", "acc_train", "acc_test", "auc_detect", "mean_w_clean",
                  "mean_w_noisy", "cross", "reg", "ctr", "align", "total")


@dataclass
class EpochMetrics:
    epoch: int
    lr: float
    acc_train: float
    acc_test: float
    auc_detect: float
    mean_w_clean: float
    mean_w_noisy: float
    cross: float
    reg: float
    ctr: float
    align: float
    total: float


@dataclass
class TrainResult:
    params: dict
    metrics: list = field(default_factory=list)
    step_losses: list = field(default_factory=list)  # (epoch, step, LossBreakdown)
    state: EpochState | None = None                   # refit on the final parameters


def _masked_mean(values, mask):
    return float(values[mask].mean()) if mask.any() else math.nan


def _is_estep_epoch(epoch, config):
    if epoch < config.warmup_epochs:
        return epoch % config.update_frequency == 0
    return (epoch - config.warmup_epochs) % config.update_frequency == 0


def train(config: TrainConfig, dataset: Dataset, test: Dataset | None = None,
          on_epoch_end: Callable[[int, dict], None] | None = None) -> TrainResult:
    """Alternate E-steps and M-step epochs.

    E-steps run every ``update_frequency`` epochs, counted separately inside
    and after warmup so that one always lands on the first post-warmup
    epoch. During warmup the embedding GMM is refit but every clean weight
    is held at 1.
    """
    params = nn.init_params(dataset.dim, dataset.num_classes, config.hidden,
                            config.embedding_dim, rng=config.seed, dtype=np.dtype(config.dtype))
    result = TrainResult(params)
    if config.epochs == 0:
        return result
    opt = nn.OptimizerState(config.base_lr, config.momentum, config.weight_decay,
                            config.warmup_epochs, config.epochs)
    clean_mask = dataset.is_clean
    fitted: EpochState | None = None
    used: EpochState | None = None
    for epoch in range(config.epochs):
        if fitted is None or _is_estep_epoch(epoch, config):
            fitted = e_step(dataset, params, fitted)
            trust = epoch < config.warmup_epochs or not config.correct_labels
            used = replace(fitted, clean_weights=np.ones(len(dataset))) if trust else fitted
        params, losses = m_step_epoch(dataset, params, opt, used, epoch, config)
        result.step_losses.extend((epoch, s, part) for s, part in enumerate(losses))

        snapshot = e_step(dataset, params, fitted)
        acc_train = accuracy(predict(params, dataset.features), dataset.true_labels)
        acc_test = accuracy(predict(params, test.features), test.true_labels) if test is not None else math.nan
        try:
            auc = auc_from_scores(snapshot.clean_probs, clean_mask)
        except ValueError:
            auc = math.nan
        mean_parts = np.mean([p.as_row() for p in losses], axis=0)
        result.metrics.append(EpochMetrics(
            epoch, nn.lr_schedule(epoch, opt), acc_train, acc_test, auc,
            _masked_mean(used.clean_weights, clean_mask), _masked_mean(used.clean_weights, ~clean_mask),
            *map(float, mean_parts)))
        result.state = snapshot
        if on_epoch_end is not None:
            on_epoch_end(epoch, params)
    return result


def write_metrics_csv(metrics: list[EpochMetrics], path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(METRIC_COLUMNS)
        for m in metrics:
            row = asdict(m)
            writer.writerow([row["epoch"]] + [repr(float(row[c])) for c in METRIC_COLUMNS[1:]])


def write_loss_csv(step_losses, path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(("epoch", "step") + LossBreakdown.columns())
        for epoch, step, parts in step_losses:
            writer.writerow([epoch, step] + [repr(float(v)) for v in parts.as_row()])
