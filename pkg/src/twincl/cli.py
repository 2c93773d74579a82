"""Command-line front end: ``twincl generate|train|eval``.

Exit codes: 0 success, 1 usage error, 2 runtime error.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import math
import subprocess
import sys
import time
from dataclasses import asdict
from importlib import metadata
from pathlib import Path

import numpy as np

from . import model as nn
from .data import generate_blobs, generate_train_test, inject_noise, read_dataset, write_dataset
from .errors import ConfigError, MismatchError, TwinclError
from .evaluation import (accuracy, auc_from_scores, default_knn_k, detection_records,
                         export_clean_histogram, imbalance_ratio, knn_eval)
from .mixture import write_gmm
from .trainer import TrainConfig, e_step, predict, train, write_loss_csv, write_metrics_csv

log = logging.getLogger("twincl")

EXIT_USAGE = 1
EXIT_RUNTIME = 2


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_USAGE, f"{self.prog}: error: {message}\n")


def version_string() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--tags", "--dirty"],
                             cwd=Path(__file__).parent, capture_output=True, text=True, timeout=5)
        if out.returncode == 0 and out.stdout.strip():
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        return "v" + metadata.version("artifact")
    except metadata.PackageNotFoundError:
        return "unknown"


def read_config_file(path) -> dict:
    """Parse ``key = value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (s.strip() for s in line.split("=", 1))
        values[key] = value
    return values


def write_config_file(config: TrainConfig, path) -> None:
    lines = [f"{k} = {v}" for k, v in asdict(config).items()]
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def _sha256(path) -> str:
    return hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _write_manifest(path, command, config, seed, artifacts, started, inputs=None):
    manifest = {
        "command": command,
        "config": config,
        "seed": seed,
        "version": version_string(),
        "inputs": inputs or {},
        "artifacts": {k: str(v) for k, v in artifacts.items()},
        "duration_s": round(time.perf_counter() - started, 3),
    }
    Path(path).write_text(json.dumps(manifest, indent=2) + "\n", encoding="utf-8")


def cmd_generate(args) -> int:
    started = time.perf_counter()
    seed = 0 if args.seed is None else args.seed
    kind = {"none": "none", "sym": "symmetric", "symmetric": "symmetric",
            "asym": "asymmetric", "asymmetric": "asymmetric"}[args.noise]
    if kind == "none" and args.ratio:
        raise UsageError("--ratio needs --noise sym or asym")
    if args.n_test:
        if not args.test_output:
            raise UsageError("--n-test needs --test-output")
        ds, test = generate_train_test(args.n, args.n_test, args.k, args.d,
                                       args.separation, seed)
    else:
        ds, test = generate_blobs(args.n, args.k, args.d, args.separation, seed), None
    if kind != "none":
        ds = inject_noise(ds, kind, args.ratio, seed + 1)
    out = Path(args.output)
    write_dataset(ds, out)
    artifacts = {"dataset": out}
    if test is not None:
        write_dataset(test, args.test_output)
        artifacts["test_dataset"] = args.test_output
    config = {"n": args.n, "K": args.k, "d": args.d, "separation": args.separation,
              "noise": kind, "ratio": args.ratio, "n_test": args.n_test}
    manifest = Path(args.out) / "manifest.json" if args.out else out.with_name(out.name + ".manifest.json")
    manifest.parent.mkdir(parents=True, exist_ok=True)
    _write_manifest(manifest, "generate", config, seed, artifacts, started)
    print(f"wrote {len(ds)} samples to {out}")
    return 0


_TRAIN_FLAGS = {
    "epochs": "epochs", "warmup_epochs": "warmup_epochs", "batch_size": "batch_size",
    "lr": "base_lr", "momentum": "momentum", "weight_decay": "weight_decay", "tau": "tau",
    "mixup_alpha": "mixup_alpha", "embedding_dim": "embedding_dim", "hidden": "hidden",
    "update_frequency": "update_frequency", "augment_strength": "augment_strength",
    "dtype": "dtype", "seed": "seed",
}


def resolve_train_config(args) -> TrainConfig:
    """Flags override the config file, which overrides the defaults."""
    values = read_config_file(args.config) if args.config else {}
    for flag, key in _TRAIN_FLAGS.items():
        value = getattr(args, flag, None)
        if value is not None:
            values[key] = value
    if args.no_correction:
        values["correct_labels"] = False
    return TrainConfig.from_mapping(values)


def cmd_train(args) -> int:
    started = time.perf_counter()
    config = resolve_train_config(args)
    ds = read_dataset(args.data)
    test = read_dataset(args.test) if args.test else None
    if test is not None and (test.dim != ds.dim or test.num_classes != ds.num_classes):
        raise MismatchError("test set disagrees with training set on d or K")
    run = Path(args.out or "run")
    (run / "checkpoints").mkdir(parents=True, exist_ok=True)
    artifacts = {}

    def on_epoch_end(epoch, params):
        if args.checkpoint_every and (epoch + 1) % args.checkpoint_every == 0:
            path = run / "checkpoints" / f"epoch_{epoch + 1:04d}.npz"
            nn.save_checkpoint(params, path)
            artifacts[f"checkpoint_{epoch + 1}"] = path

    result = train(config, ds, test, on_epoch_end)
    state = result.state or e_step(ds, result.params)
    paths = {
        "config": run / "config.txt", "metrics": run / "metrics.csv", "losses": run / "losses.csv",
        "checkpoint": run / "checkpoints" / "final.npz", "gmm": run / "gmm.txt",
        "histogram": run / "clean_hist.csv",
    }
    write_config_file(config, paths["config"])
    write_metrics_csv(result.metrics, paths["metrics"])
    write_loss_csv(result.step_losses, paths["losses"])
    nn.save_checkpoint(result.params, paths["checkpoint"])
    write_gmm(state.gmm, paths["gmm"])
    records = detection_records(ds.sample_ids, np.clip(state.clean_probs, 0.0, 1.0), ds.is_clean)
    export_clean_histogram(records, args.hist_bins, paths["histogram"])
    artifacts.update(paths)
    inputs = {"data": str(args.data), "data_sha256": _sha256(args.data)}
    if args.test:
        inputs.update(test=str(args.test), test_sha256=_sha256(args.test))
    _write_manifest(run / "manifest.json", "train", asdict(config), config.seed, artifacts,
                    started, inputs)
    if result.metrics:
        last = result.metrics[-1]
        print(f"epoch {last.epoch}: acc_train={last.acc_train:.4f} acc_test={last.acc_test:.4f} "
              f"auc_detect={last.auc_detect:.4f}")
    print(f"run written to {run}")
    return 0


def evaluate_checkpoint(params: dict, ds, test=None, knn_k: int | None = None) -> dict:
    """Accuracy, k-NN accuracy, detection AUC and noisy-label imbalance ratio.

    Accuracy and k-NN are scored against true labels on ``test`` when given,
    otherwise on ``ds`` itself. k-NN votes with the noisy training labels.
    """
    dims = nn.model_dims(params)
    for other in filter(None, (ds, test)):
        if other.dim != dims["d"] or other.num_classes != dims["K"]:
            raise MismatchError(
                f"checkpoint expects d={dims['d']} K={dims['K']}, "
                f"dataset has d={other.dim} K={other.num_classes}")
    target = test if test is not None else ds
    k = knn_k or default_knn_k(len(ds))
    emb_train = nn.forward(params, ds.features).embedding
    emb_target = nn.forward(params, target.features).embedding
    state = e_step(ds, params)
    try:
        auc = auc_from_scores(state.clean_probs, ds.is_clean)
    except ValueError:
        auc = math.nan
    try:
        ratio = imbalance_ratio(ds.noisy_labels, ds.num_classes)
    except ValueError:
        ratio = math.inf
    return {
        "accuracy": accuracy(predict(params, target.features), target.true_labels),
        "knn_accuracy": knn_eval(emb_train, ds.noisy_labels, emb_target, target.true_labels, k),
        "detection_auc": auc,
        "imbalance_ratio": ratio,
    }


def cmd_eval(args) -> int:
    params = nn.load_checkpoint(args.checkpoint)
    ds = read_dataset(args.data)
    test = read_dataset(args.test) if args.test else None
    report = evaluate_checkpoint(params, ds, test, args.knn_k)
    width = max(map(len, report))
    lines = [f"{name:<{width}}  {value:.6f}" for name, value in report.items()]
    print("\n".join(lines))
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        with open(out / "eval.csv", "w", encoding="utf-8", newline="\n") as fh:
            fh.write("metric,value\n")
            fh.writelines(f"{k},{v!r}\n" for k, v in report.items())
    return 0


def build_parser() -> argparse.ArgumentParser:
    common = _Parser(add_help=False)
    common.add_argument("--config", help="key = value config file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="output directory")

    parser = _Parser(prog="twincl", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    gen = sub.add_parser("generate", parents=[common], help="write a synthetic blob dataset")
    gen.add_argument("--n", type=int, required=True)
    gen.add_argument("--k", type=int, required=True)
    gen.add_argument("--d", type=int, required=True)
    gen.add_argument("--separation", type=float, default=6.0)
    gen.add_argument("--noise", choices=["none", "sym", "asym", "symmetric", "asymmetric"], default="none")
    gen.add_argument("--ratio", type=float, default=0.0)
    gen.add_argument("-o", "--output", required=True)
    gen.add_argument("--n-test", type=int, default=0, help="also write a clean test split")
    gen.add_argument("--test-output")
    gen.set_defaults(func=cmd_generate)

    tr = sub.add_parser("train", parents=[common], help="train on a dataset file")
    tr.add_argument("--data", required=True)
    tr.add_argument("--test")
    tr.add_argument("--epochs", type=int)
    tr.add_argument("--warmup-epochs", type=int)
    tr.add_argument("--batch-size", type=int)
    tr.add_argument("--lr", type=float)
    tr.add_argument("--momentum", type=float)
    tr.add_argument("--weight-decay", type=float)
    tr.add_argument("--tau", type=float)
    tr.add_argument("--mixup-alpha", type=float)
    tr.add_argument("--embedding-dim", type=int)
    tr.add_argument("--hidden", type=int)
    tr.add_argument("--update-frequency", type=int)
    tr.add_argument("--augment-strength", type=float)
    tr.add_argument("--dtype", choices=["float64", "float32"])
    tr.add_argument("--no-correction", action="store_true", help="baseline: clean weights fixed at 1")
    tr.add_argument("--checkpoint-every", type=int, default=10, help="0 disables periodic checkpoints")
    tr.add_argument("--hist-bins", type=int, default=20)
    tr.set_defaults(func=cmd_train)

    ev = sub.add_parser("eval", parents=[common], help="score a checkpoint")
    ev.add_argument("--checkpoint", required=True)
    ev.add_argument("--data", required=True)
    ev.add_argument("--test")
    ev.add_argument("--knn-k", type=int)
    ev.set_defaults(func=cmd_eval)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        parser.print_usage(sys.stderr)
        print(f"twincl: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (TwinclError, OSError) as exc:
        print(f"twincl: error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
