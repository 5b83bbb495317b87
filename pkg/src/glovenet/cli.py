"""Command-line pipeline: generate, train, eval, crossval, ablate, report.

Exit codes: 0 success, 1 usage error, 2 data/format error. Every command
that produces artifacts confines them to --out and writes run_manifest.json
last, so the manifest's presence marks a complete run.

GLOVENET_SEED is honored as the seed fallback when --seed is not given.
"""

from __future__ import annotations

import argparse
import json
import os
import subprocess
import sys
import time

import numpy as np

from .ablation import ablation_svg, ablation_sweep, finger_attribution
from .data import (GestureDataset, dataset_hash, load_dataset, save_dataset,
                   standardize, trial_aware_split, make_loto_folds, ChannelScaler)
from .errors import ContractError, DataFormatError, ShapeError, UsageError
from .features import DecisionTree, TreeParams, extract_feature_matrix
from .model import (ModelConfig, TransformerClassifier, load_checkpoint,
                    save_checkpoint)
from .synth import generate_synthetic
from .training import (ConfusionMatrix, TrainConfig, TransformerRunner,
                       TreeRunner, crossval, evaluate, train)

MANIFEST_NAME = "run_manifest.json"


class _Parser(argparse.ArgumentParser):
    """argparse that reports usage problems via UsageError (exit code 1)."""

    def error(self, message):
        raise UsageError(message)


def _git_describe() -> str:
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=5,
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return "unknown"


def _resolve_seed(seed: int | None) -> int:
    if seed is not None:
        return seed
    env = os.environ.get("GLOVENET_SEED")
    if env is not None:
        try:
            return int(env)
        except ValueError:
            raise UsageError(f"GLOVENET_SEED must be an integer, got {env!r}")
    return 0


def _write_manifest(out_dir: str, command: str, flags: dict, seeds: dict,
                    ds_hash: str | None, artifacts: list[str],
                    t_start: float) -> None:
    manifest = {
        "command": command,
        "flags": flags,
        "seeds": seeds,
        "dataset_hash": ds_hash,
        "artifacts": sorted(artifacts),
        "wall_clock_s": round(time.time() - t_start, 3),
        "git_describe": _git_describe(),
    }
    tmp = os.path.join(out_dir, MANIFEST_NAME + ".tmp")
    with open(tmp, "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1)
    os.replace(tmp, os.path.join(out_dir, MANIFEST_NAME))


def _write(out_dir: str, name: str, text: str, artifacts: list[str]) -> None:
    with open(os.path.join(out_dir, name), "w", encoding="utf-8") as f:
        f.write(text)
    artifacts.append(name)


def _parse_int_list(text: str, flag: str) -> list[int]:
    try:
        return [int(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise UsageError(f"{flag} expects a comma-separated integer list, got {text!r}")


def _parse_float_list(text: str, flag: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v != ""]
    except ValueError:
        raise UsageError(f"{flag} expects a comma-separated float list, got {text!r}")


def _model_kwargs(args) -> dict:
    return {
        "d_model": args.d_model,
        "n_layers": args.n_layers,
        "n_heads": args.n_heads,
        "d_ff": args.d_ff,
    }


def _add_model_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--d-model", type=int, default=32)
    p.add_argument("--n-layers", type=int, default=4)
    p.add_argument("--n-heads", type=int, default=4)
    p.add_argument("--d-ff", type=int, default=64)


def _add_train_flags(p: argparse.ArgumentParser) -> None:
    p.add_argument("--epochs", type=int, default=30)
    p.add_argument("--batch", type=int, default=32)
    p.add_argument("--lr", type=float, default=1e-3)
    p.add_argument("--seed", type=int, default=None)


# -- commands -----------------------------------------------------------------


def cmd_generate(args) -> int:
    t0 = time.time()
    seed = _resolve_seed(args.seed)
    if args.n < 1:
        raise UsageError("--n must be positive")
    ds = generate_synthetic(args.vocab, args.n, window_length=args.len, seed=seed)
    os.makedirs(args.out, exist_ok=True)
    save_dataset(ds, args.out)
    counts = np.bincount(ds.labels, minlength=ds.n_classes)
    print(f"generated {ds.n_samples} samples ({args.vocab}, C={ds.n_classes}, "
          f"T={ds.window_length}, S={ds.n_channels}) -> {args.out}")
    print("class counts: " + ", ".join(
        f"{n}={c}" for n, c in zip(ds.class_names, counts)))
    _write_manifest(
        args.out, "generate",
        {"vocab": args.vocab, "n": args.n, "len": args.len, "out": args.out},
        {"seed": seed}, dataset_hash(args.out),
        ["manifest.json", "data.f32"], t0,
    )
    return 0


def _save_tree_checkpoint(path: str, tree: DecisionTree, scaler, class_names,
                          extra: dict) -> None:
    os.makedirs(path, exist_ok=True)
    with open(os.path.join(path, "tree.json"), "w", encoding="utf-8") as f:
        f.write(tree.to_json())
    meta = {
        "kind": "tree",
        "scaler": scaler.to_dict(),
        "class_names": class_names,
        "extra": extra,
    }
    with open(os.path.join(path, "config.json"), "w", encoding="utf-8") as f:
        json.dump(meta, f, indent=1)


def _load_tree_checkpoint(path: str) -> tuple[DecisionTree, ChannelScaler, dict]:
    cfg_path = os.path.join(path, "config.json")
    tree_path = os.path.join(path, "tree.json")
    if not os.path.isfile(cfg_path) or not os.path.isfile(tree_path):
        raise DataFormatError(f"no tree checkpoint at {path}")
    with open(cfg_path, encoding="utf-8") as f:
        meta = json.load(f)
    with open(tree_path, encoding="utf-8") as f:
        tree = DecisionTree.from_json(f.read())
    return tree, ChannelScaler.from_dict(meta["scaler"]), meta


def cmd_train(args) -> int:
    t0 = time.time()
    seed = _resolve_seed(args.seed)
    ds = load_dataset(args.data)
    ds_hash = dataset_hash(args.data)
    train_idx, test_idx = trial_aware_split(ds.trial_ids, args.test_fraction)
    std_ds, scaler = standardize(ds, fit_indices=train_idx)
    os.makedirs(args.out, exist_ok=True)
    artifacts: list[str] = []
    extra = {
        "dataset_hash": ds_hash,
        "test_fraction": args.test_fraction,
        "train_config": {
            "epochs": args.epochs, "batch_size": args.batch,
            "learning_rate": args.lr, "seed": seed,
        },
    }

    if args.model == "transformer":
        cfg = ModelConfig(
            window_length=ds.window_length, n_channels=ds.n_channels,
            n_classes=ds.n_classes, **_model_kwargs(args),
        )
        model = TransformerClassifier(cfg, seed=seed)
        tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch,
                           learning_rate=args.lr, seed=seed)
        log = train(model, std_ds.samples[train_idx], std_ds.labels[train_idx], tcfg)
        save_checkpoint(model, args.out, scaler=scaler,
                        class_names=ds.class_names, extra=extra)
        artifacts.extend(["config.json", "params.f32"])
        _write(args.out, "trainlog.csv", log.to_csv(), artifacts)
        print(f"trained transformer: final train loss {log.final_loss:.4f}, "
              f"accuracy {log.final_accuracy:.4f}")
    else:
        feats = extract_feature_matrix(std_ds.samples[train_idx])
        tree = DecisionTree(TreeParams(max_depth=args.max_depth)).fit(
            feats, std_ds.labels[train_idx], n_classes=ds.n_classes,
        )
        preds = tree.predict(feats)
        acc = float(np.mean(preds == std_ds.labels[train_idx]))
        _save_tree_checkpoint(args.out, tree, scaler, ds.class_names, extra)
        artifacts.extend(["config.json", "tree.json"])
        print(f"trained decision tree: train accuracy {acc:.4f}, "
              f"{len(tree.nodes)} nodes")

    print(f"train samples: {train_idx.size}, held-out test samples: {test_idx.size}")
    _write_manifest(
        args.out, "train",
        {"data": args.data, "model": args.model, "epochs": args.epochs,
         "batch": args.batch, "lr": args.lr, "test_fraction": args.test_fraction,
         "out": args.out},
        {"seed": seed}, ds_hash, artifacts, t0,
    )
    return 0


class _CheckpointPredictor:
    """predict() facade over either checkpoint kind."""

    def __init__(self, ckpt_dir: str):
        cfg_path = os.path.join(ckpt_dir, "config.json")
        if not os.path.isfile(cfg_path):
            raise DataFormatError(f"no checkpoint config.json in {ckpt_dir}")
        with open(cfg_path, encoding="utf-8") as f:
            kind = json.load(f).get("kind")
        if kind == "transformer":
            self.model, self.scaler, self.meta = load_checkpoint(ckpt_dir)
            self.n_channels = self.model.cfg.n_channels
            self.window_length = self.model.cfg.window_length
        elif kind == "tree":
            self.tree, self.scaler, self.meta = _load_tree_checkpoint(ckpt_dir)
            self.n_channels = len(self.scaler.mean)
            self.window_length = None
        else:
            raise DataFormatError(f"unknown checkpoint kind {kind!r} in {ckpt_dir}")
        self.kind = kind

    def check_compatible(self, ds: GestureDataset) -> None:
        if ds.n_channels != self.n_channels:
            raise ShapeError(
                f"checkpoint expects S={self.n_channels} channels but dataset "
                f"has S={ds.n_channels}"
            )
        if self.window_length is not None and ds.window_length != self.window_length:
            raise ShapeError(
                f"checkpoint expects T={self.window_length} but dataset "
                f"has T={ds.window_length}"
            )

    def predict(self, samples: np.ndarray) -> np.ndarray:
        if self.kind == "transformer":
            return self.model.predict(samples)
        return self.tree.predict(extract_feature_matrix(samples))


def cmd_eval(args) -> int:
    t0 = time.time()
    ds = load_dataset(args.data)
    ds_hash = dataset_hash(args.data)
    pred = _CheckpointPredictor(args.ckpt)
    pred.check_compatible(ds)

    test_fraction = pred.meta.get("extra", {}).get("test_fraction", 0.1)
    if args.split in ("test", "train"):
        train_idx, test_idx = trial_aware_split(ds.trial_ids, test_fraction)
        idx = test_idx if args.split == "test" else train_idx
    else:
        idx = np.arange(ds.n_samples)

    samples = pred.scaler.transform(ds.samples[idx])
    labels = ds.labels[idx]
    acc, cm = evaluate(pred, samples, labels, ds.class_names)
    recall = cm.recall()
    precision = cm.precision()

    print(f"split={args.split} samples={idx.size} accuracy={acc:.4f}")
    print(cm.render_text())

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        artifacts: list[str] = []
        metrics = ["metric,value", f"accuracy,{acc:.6f}", f"n_samples,{idx.size}"]
        for name, r, p in zip(ds.class_names, recall, precision):
            metrics.append(f"recall[{name}],{r:.6f}")
            metrics.append(f"precision[{name}],{p:.6f}")
        _write(args.out, "metrics.csv", "\n".join(metrics) + "\n", artifacts)
        _write(args.out, "confusion.csv", cm.to_csv(), artifacts)
        _write(args.out, "confusion.txt", cm.render_text() + "\n", artifacts)
        _write_manifest(
            args.out, "eval",
            {"data": args.data, "ckpt": args.ckpt, "split": args.split,
             "out": args.out},
            {}, ds_hash, artifacts, t0,
        )
    return 0


def cmd_crossval(args) -> int:
    t0 = time.time()
    seed = _resolve_seed(args.seed)
    ds = load_dataset(args.data)
    ds_hash = dataset_hash(args.data)
    folds = make_loto_folds(ds)
    if args.max_folds is not None and len(folds.folds) > args.max_folds:
        # keep LOTO structure but evaluate only the first m folds
        folds_run = folds.folds[:args.max_folds]
    else:
        folds_run = folds.folds

    if args.model == "transformer":
        cfg = ModelConfig(
            window_length=ds.window_length, n_channels=ds.n_channels,
            n_classes=ds.n_classes, **_model_kwargs(args),
        )
        tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch,
                           learning_rate=args.lr, seed=seed)
        factory = lambda: TransformerRunner(cfg, tcfg, init_seed=seed)  # noqa: E731
    else:
        factory = lambda: TreeRunner(  # noqa: E731
            TreeParams(max_depth=args.max_depth), n_classes=ds.n_classes,
        )

    from .data import FoldSpec
    result = crossval(factory, ds, FoldSpec(folds=list(folds_run))
                      if args.max_folds is None else _partial_folds(folds_run, ds))
    print(f"crossval ({args.model}) over {len(result.fold_accuracies)} folds: "
          f"mean accuracy {result.mean_accuracy:.4f} "
          f"(std {result.std_accuracy:.4f}, pooled {result.pooled_accuracy:.4f})")

    if args.out:
        os.makedirs(args.out, exist_ok=True)
        artifacts: list[str] = []
        _write(args.out, "crossval.csv", result.to_csv(), artifacts)
        _write(args.out, "confusion_pooled.csv", result.pooled_matrix.to_csv(),
               artifacts)
        _write_manifest(
            args.out, "crossval",
            {"data": args.data, "model": args.model, "max_folds": args.max_folds,
             "out": args.out},
            {"seed": seed}, ds_hash, artifacts, t0,
        )
    return 0


def _partial_folds(folds_run, ds):
    """Wrap a fold subset so crossval skips the full-coverage validation."""
    from .data import FoldSpec

    class _PartialFoldSpec(FoldSpec):
        def validate(self, trial_ids):
            for train, test in self.folds:
                assert np.intersect1d(
                    np.unique(trial_ids[train]), np.unique(trial_ids[test])
                ).size == 0

    return _PartialFoldSpec(folds=list(folds_run))


def cmd_ablate(args) -> int:
    t0 = time.time()
    seed = _resolve_seed(args.seed)
    ds = load_dataset(args.data)
    ds_hash = dataset_hash(args.data)
    k_values = _parse_int_list(args.k, "--k")
    fractions = _parse_float_list(args.fractions, "--fractions")
    tcfg = TrainConfig(epochs=args.epochs, batch_size=args.batch,
                       learning_rate=args.lr, seed=seed)
    result = ablation_sweep(
        ds, k_values, fractions, tcfg, n_seeds=args.seeds,
        test_fraction=args.test_fraction, max_subsets_per_k=args.max_subsets,
        model_kwargs=_model_kwargs(args), jobs=args.jobs,
    )
    os.makedirs(args.out, exist_ok=True)
    artifacts: list[str] = []
    _write(args.out, "ablation_cells.csv", result.cells_csv(), artifacts)
    _write(args.out, "ablation_aggregates.csv", result.aggregates_csv(), artifacts)
    _write(args.out, "ablation.svg",
           ablation_svg(result, title=f"{ds.name}: accuracy vs sensors"),
           artifacts)
    for a in result.aggregates:
        print(f"k={a.k} fraction={a.train_fraction:g}: mean={a.mean:.4f} "
              f"range [{a.min:.4f}, {a.max:.4f}] over {a.n_runs} runs")
    _write_manifest(
        args.out, "ablate",
        {"data": args.data, "k": args.k, "fractions": args.fractions,
         "seeds": args.seeds, "max_subsets": args.max_subsets,
         "jobs": args.jobs, "out": args.out},
        {"seed": seed}, ds_hash, artifacts, t0,
    )
    return 0


def cmd_report(args) -> int:
    manifest_path = os.path.join(args.run, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise DataFormatError(
            f"no {MANIFEST_NAME} in {args.run} (incomplete or not a run directory)"
        )
    with open(manifest_path, encoding="utf-8") as f:
        m = json.load(f)
    print(f"run: {m['command']}")
    print(f"flags: {json.dumps(m['flags'], sort_keys=True)}")
    print(f"seeds: {json.dumps(m['seeds'], sort_keys=True)}")
    print(f"dataset hash: {m.get('dataset_hash')}")
    print(f"wall clock: {m.get('wall_clock_s')} s  (git: {m.get('git_describe')})")
    print("artifacts:")
    for name in m.get("artifacts", []):
        print(f"  {name}")
    for csv_name in ("metrics.csv", "crossval.csv", "ablation_aggregates.csv",
                     "trainlog.csv"):
        path = os.path.join(args.run, csv_name)
        if os.path.isfile(path):
            print(f"\n{csv_name}:")
            with open(path, encoding="utf-8") as f:
                lines = f.read().strip().splitlines()
            head = lines[:12]
            for line in head:
                print(f"  {line}")
            if len(lines) > 12:
                print(f"  ... ({len(lines) - 12} more rows)")
    return 0


# -- entry point ----------------------------------------------------------------


def build_parser() -> _Parser:
    parser = _Parser(prog="glovenet",
                     description="synthetic multi-IMU gesture pipeline")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("generate", help="generate a synthetic dataset")
    p.add_argument("--vocab", required=True, choices=["single", "multi"])
    p.add_argument("--n", type=int, required=True)
    p.add_argument("--len", type=int, default=32)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_generate)

    p = sub.add_parser("train", help="train a classifier on a dataset directory")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=["transformer", "tree"], default="transformer")
    _add_train_flags(p)
    _add_model_flags(p)
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--test-fraction", type=float, default=0.1)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on a dataset")
    p.add_argument("--data", required=True)
    p.add_argument("--ckpt", required=True)
    p.add_argument("--split", choices=["test", "train", "all"], default="test")
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("crossval", help="leave-one-trial-out cross-validation")
    p.add_argument("--data", required=True)
    p.add_argument("--model", choices=["transformer", "tree"], default="transformer")
    _add_train_flags(p)
    _add_model_flags(p)
    p.add_argument("--max-depth", type=int, default=12)
    p.add_argument("--max-folds", type=int, default=None)
    p.add_argument("--out", default=None)
    p.set_defaults(fn=cmd_crossval)

    p = sub.add_parser("ablate", help="sensor-count x training-size sweep")
    p.add_argument("--data", required=True)
    p.add_argument("--k", default="1,2,3,4,5")
    p.add_argument("--fractions", default="1.0")
    p.add_argument("--seeds", type=int, default=3)
    p.add_argument("--max-subsets", type=int, default=None)
    p.add_argument("--test-fraction", type=float, default=0.2)
    p.add_argument("--jobs", type=int, default=1)
    _add_train_flags(p)
    _add_model_flags(p)
    p.add_argument("--out", required=True)
    p.set_defaults(fn=cmd_ablate)

    p = sub.add_parser("report", help="summarize a run directory")
    p.add_argument("--run", required=True)
    p.set_defaults(fn=cmd_report)

    return parser


def main(argv: list[str] | None = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.fn(args)
    except UsageError as e:
        print(f"usage error: {e}", file=sys.stderr)
        return 1
    except (DataFormatError, ShapeError, ContractError) as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2
    except FileNotFoundError as e:
        print(f"data error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
