"""Sensor-subset and training-size ablation experiments.

Every cell of a sweep (sensor subset x training fraction x repeat) trains a
fresh transformer on a trial-subsampled, channel-masked view of the data
and evaluates on one fixed held-out trial split shared by all cells, so
cells are directly comparable. Cells derive their seeds from their own
coordinates and can therefore run in any order or in parallel with
identical results.
"""

from __future__ import annotations

import io
import itertools
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass

import numpy as np

from .data import (GestureDataset, SensorMask, apply_sensor_mask, standardize,
                   trial_aware_split)
from .errors import UsageError
from .model import ModelConfig, TransformerClassifier
from .training import ConfusionMatrix, TrainConfig, evaluate, train


def enumerate_sensor_subsets(n_sensors: int, k: int) -> list[SensorMask]:
    """All C(n, k) sensor subsets in lexicographic order."""
    if not 1 <= k <= n_sensors:
        raise UsageError(f"k={k} out of range [1, {n_sensors}]")
    return [
        SensorMask(selected=combo)
        for combo in itertools.combinations(range(n_sensors), k)
    ]


def subsample_train_trials(trial_ids: np.ndarray, train_idx: np.ndarray,
                           fraction: float, rng: np.random.Generator) -> np.ndarray:
    """Pick whole trials from the training indices until ``fraction`` is met.

    Trials are taken in a seeded random order; prefixes are nested, so a
    smaller fraction with the same rng state uses a subset of the trials a
    larger fraction would use. Trials are never split.
    """
    if not 0.0 < fraction <= 1.0:
        raise UsageError(f"train fraction must be in (0, 1], got {fraction}")
    train_idx = np.asarray(train_idx)
    if fraction == 1.0:
        return train_idx
    trials = np.unique(trial_ids[train_idx])
    order = rng.permutation(trials)
    target = fraction * train_idx.size
    chosen: list[int] = []
    count = 0
    for t in order:
        if count >= target:
            break
        chosen.append(t)
        count += int(np.sum(trial_ids[train_idx] == t))
    if not chosen:
        raise UsageError(
            f"train fraction {fraction} leaves no complete trial in the training set"
        )
    mask = np.isin(trial_ids[train_idx], chosen)
    return train_idx[mask]


@dataclass
class AblationCell:
    sensors: tuple[int, ...]
    k: int
    train_fraction: float
    seed: int
    accuracy: float


@dataclass
class AblationAggregate:
    k: int
    train_fraction: float
    mean: float
    min: float
    max: float
    n_runs: int


@dataclass
class AblationResult:
    cells: list[AblationCell]
    aggregates: list[AblationAggregate]
    sensor_names: list[str]

    def subset_label(self, sensors: tuple[int, ...]) -> str:
        return "+".join(self.sensor_names[i] for i in sensors)

    def cells_csv(self) -> str:
        buf = io.StringIO()
        buf.write("subset,k,train_fraction,seed,accuracy\n")
        for c in self.cells:
            buf.write(
                f"{self.subset_label(c.sensors)},{c.k},{c.train_fraction:.4f},"
                f"{c.seed},{c.accuracy:.6f}\n"
            )
        return buf.getvalue()

    def aggregates_csv(self) -> str:
        buf = io.StringIO()
        buf.write("k,train_fraction,mean_accuracy,min_accuracy,max_accuracy,n_runs\n")
        for a in self.aggregates:
            buf.write(
                f"{a.k},{a.train_fraction:.4f},{a.mean:.6f},{a.min:.6f},"
                f"{a.max:.6f},{a.n_runs}\n"
            )
        return buf.getvalue()

    def mean_accuracy(self, k: int, train_fraction: float | None = None) -> float:
        matches = [
            a.mean for a in self.aggregates
            if a.k == k and (train_fraction is None or
                             np.isclose(a.train_fraction, train_fraction))
        ]
        if not matches:
            raise UsageError(f"no aggregate for k={k}, fraction={train_fraction}")
        return float(np.mean(matches))


# -- cell execution -----------------------------------------------------------

_WORKER_DS: GestureDataset | None = None


def _set_worker_dataset(ds: GestureDataset) -> None:
    global _WORKER_DS
    _WORKER_DS = ds


def _cell_seed(base_seed: int, sensors: tuple[int, ...], fraction: float,
               rep: int) -> int:
    frac_key = int(round(fraction * 10000))
    seq = np.random.SeedSequence([base_seed, frac_key, rep, *sensors])
    return int(seq.generate_state(1)[0])


def _run_cell(args: tuple) -> AblationCell:
    (sensors, fraction, rep, base_seed, train_cfg_dict, model_kwargs,
     train_idx, test_idx) = args
    ds = _WORKER_DS
    assert ds is not None, "worker dataset not initialized"

    masked = apply_sensor_mask(ds, SensorMask(selected=tuple(sensors)))
    order_rng = np.random.default_rng(
        np.random.SeedSequence([base_seed, rep, *sensors])
    )
    sub_train = subsample_train_trials(ds.trial_ids, train_idx, fraction, order_rng)
    std_ds, _ = standardize(masked, fit_indices=sub_train)

    seed = _cell_seed(base_seed, tuple(sensors), fraction, rep)
    cfg = ModelConfig(
        window_length=ds.window_length,
        n_channels=masked.n_channels,
        n_classes=ds.n_classes,
        **model_kwargs,
    )
    model = TransformerClassifier(cfg, seed=seed)
    tcfg = TrainConfig(**{**train_cfg_dict, "seed": seed})
    train(model, std_ds.samples[sub_train], std_ds.labels[sub_train], tcfg)
    acc, _ = evaluate(
        model, std_ds.samples[test_idx], std_ds.labels[test_idx], ds.class_names
    )
    return AblationCell(
        sensors=tuple(sensors), k=len(sensors), train_fraction=fraction,
        seed=rep, accuracy=acc,
    )


def ablation_sweep(ds: GestureDataset, k_values: list[int],
                   train_fractions: list[float], train_cfg: TrainConfig,
                   n_seeds: int = 3, test_fraction: float = 0.2,
                   max_subsets_per_k: int | None = None,
                   model_kwargs: dict | None = None,
                   jobs: int = 1) -> AblationResult:
    """Sensor-count x training-size sweep on one fixed held-out test split."""
    n_sensors = len(ds.sensor_layout)
    if np.unique(ds.trial_ids).size < 2:
        raise UsageError("ablation needs a dataset with >= 2 trials")
    for f in train_fractions:
        if not 0.0 < f <= 1.0:
            raise UsageError(f"train fraction {f} outside (0, 1]")
    if n_seeds < 1:
        raise UsageError("n_seeds must be >= 1")
    model_kwargs = model_kwargs or {}

    train_idx, test_idx = trial_aware_split(ds.trial_ids, test_fraction)

    tasks = []
    for k in k_values:
        subsets = enumerate_sensor_subsets(n_sensors, k)
        if max_subsets_per_k is not None and len(subsets) > max_subsets_per_k:
            # deterministic thinning: evenly spaced picks from the lex order
            pick = np.linspace(0, len(subsets) - 1, max_subsets_per_k).round()
            subsets = [subsets[int(i)] for i in pick]
        for mask in subsets:
            for fraction in train_fractions:
                for rep in range(n_seeds):
                    tasks.append((
                        mask.selected, float(fraction), rep, train_cfg.seed,
                        {
                            "epochs": train_cfg.epochs,
                            "batch_size": train_cfg.batch_size,
                            "learning_rate": train_cfg.learning_rate,
                            "shuffle": train_cfg.shuffle,
                        },
                        model_kwargs, train_idx, test_idx,
                    ))

    if jobs > 1:
        with ProcessPoolExecutor(
            max_workers=jobs, initializer=_set_worker_dataset, initargs=(ds,)
        ) as pool:
            cells = list(pool.map(_run_cell, tasks))
    else:
        _set_worker_dataset(ds)
        cells = [_run_cell(t) for t in tasks]

    aggregates = []
    for k in sorted(set(c.k for c in cells)):
        for fraction in sorted(set(c.train_fraction for c in cells)):
            group = [c.accuracy for c in cells
                     if c.k == k and c.train_fraction == fraction]
            if not group:
                continue
            aggregates.append(AblationAggregate(
                k=k, train_fraction=fraction,
                mean=float(np.mean(group)), min=float(np.min(group)),
                max=float(np.max(group)), n_runs=len(group),
            ))
    return AblationResult(
        cells=cells, aggregates=aggregates,
        sensor_names=[n for n, _ in ds.sensor_layout],
    )


def finger_attribution(ds: GestureDataset, train_cfg: TrainConfig,
                       test_fraction: float = 0.2,
                       model_kwargs: dict | None = None) -> dict[str, ConfusionMatrix]:
    """Train one single-sensor model per finger; return its confusion matrix."""
    model_kwargs = model_kwargs or {}
    train_idx, test_idx = trial_aware_split(ds.trial_ids, test_fraction)
    out: dict[str, ConfusionMatrix] = {}
    for i, (name, _) in enumerate(ds.sensor_layout):
        masked = apply_sensor_mask(ds, SensorMask(selected=(i,)))
        std_ds, _ = standardize(masked, fit_indices=train_idx)
        seed = _cell_seed(train_cfg.seed, (i,), 1.0, 0)
        cfg = ModelConfig(
            window_length=ds.window_length,
            n_channels=masked.n_channels,
            n_classes=ds.n_classes,
            **model_kwargs,
        )
        model = TransformerClassifier(cfg, seed=seed)
        tcfg = TrainConfig(
            epochs=train_cfg.epochs, batch_size=train_cfg.batch_size,
            learning_rate=train_cfg.learning_rate, seed=seed,
            shuffle=train_cfg.shuffle,
        )
        train(model, std_ds.samples[train_idx], std_ds.labels[train_idx], tcfg)
        _, cm = evaluate(
            model, std_ds.samples[test_idx], std_ds.labels[test_idx], ds.class_names
        )
        out[name] = cm
    return out


# -- SVG rendering -------------------------------------------------------------

_PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b")


def ablation_svg(result: AblationResult, title: str = "sensor ablation") -> str:
    """Line chart of mean accuracy vs sensor count, one band per fraction."""
    w, h = 640, 420
    ml, mr, mt, mb = 60, 20, 40, 50
    plot_w, plot_h = w - ml - mr, h - mt - mb

    ks = sorted(set(a.k for a in result.aggregates))
    fractions = sorted(set(a.train_fraction for a in result.aggregates))
    lo = min(a.min for a in result.aggregates)
    y0 = max(0.0, np.floor(lo * 10.0) / 10.0 - 0.05)
    y1 = 1.0

    def sx(k: float) -> float:
        if len(ks) == 1:
            return ml + plot_w / 2
        return ml + (k - ks[0]) / (ks[-1] - ks[0]) * plot_w

    def sy(acc: float) -> float:
        return mt + (y1 - acc) / (y1 - y0) * plot_h

    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" '
        f'viewBox="0 0 {w} {h}">',
        f'<rect width="{w}" height="{h}" fill="white"/>',
        f'<text x="{w / 2:.1f}" y="24" text-anchor="middle" font-size="16" '
        f'font-family="sans-serif">{title}</text>',
    ]
    # axes
    parts.append(
        f'<line x1="{ml}" y1="{mt + plot_h}" x2="{ml + plot_w}" '
        f'y2="{mt + plot_h}" stroke="black"/>'
    )
    parts.append(f'<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{mt + plot_h}" stroke="black"/>')
    for k in ks:
        x = sx(k)
        parts.append(
            f'<text x="{x:.1f}" y="{mt + plot_h + 20}" text-anchor="middle" '
            f'font-size="12" font-family="sans-serif">{k}</text>'
        )
    ticks = np.arange(np.ceil(y0 * 10) / 10, 1.0001, 0.1)
    for tick in ticks:
        y = sy(tick)
        parts.append(
            f'<line x1="{ml - 4}" y1="{y:.1f}" x2="{ml}" y2="{y:.1f}" stroke="black"/>'
        )
        parts.append(
            f'<text x="{ml - 8}" y="{y + 4:.1f}" text-anchor="end" font-size="11" '
            f'font-family="sans-serif">{tick:.1f}</text>'
        )
    parts.append(
        f'<text x="{ml + plot_w / 2:.1f}" y="{h - 12}" text-anchor="middle" '
        f'font-size="13" font-family="sans-serif">sensors used</text>'
    )
    parts.append(
        f'<text x="16" y="{mt + plot_h / 2:.1f}" text-anchor="middle" font-size="13" '
        f'font-family="sans-serif" transform="rotate(-90 16 {mt + plot_h / 2:.1f})">'
        f'accuracy</text>'
    )

    for fi, fraction in enumerate(fractions):
        rows = sorted(
            (a for a in result.aggregates if a.train_fraction == fraction),
            key=lambda a: a.k,
        )
        color = _PALETTE[fi % len(_PALETTE)]
        band = " ".join(f"{sx(a.k):.1f},{sy(a.max):.1f}" for a in rows)
        band += " " + " ".join(
            f"{sx(a.k):.1f},{sy(a.min):.1f}" for a in reversed(rows)
        )
        parts.append(f'<polygon points="{band}" fill="{color}" opacity="0.15"/>')
        line = " ".join(f"{sx(a.k):.1f},{sy(a.mean):.1f}" for a in rows)
        parts.append(
            f'<polyline points="{line}" fill="none" stroke="{color}" stroke-width="2"/>'
        )
        for a in rows:
            parts.append(
                f'<circle cx="{sx(a.k):.1f}" cy="{sy(a.mean):.1f}" r="3" '
                f'fill="{color}"/>'
            )
        parts.append(
            f'<text x="{ml + plot_w - 4}" y="{mt + 16 + 16 * fi}" text-anchor="end" '
            f'font-size="12" font-family="sans-serif" fill="{color}">'
            f'train fraction {fraction:g}</text>'
        )
    parts.append("</svg>")
    return "\n".join(parts)
