"""Gesture dataset container, on-disk format, windowing and fold logic.

On-disk layout of a dataset directory:

    manifest.json   UTF-8 JSON with name, n_samples, window_length, channels,
                    sample_rate_hz, class_names, sensor_layout, labels,
                    trial_ids, subject_ids
    data.f32        raw little-endian IEEE-754 float32, row-major N x T x S

The round trip through save/load is bit-exact.
"""

from __future__ import annotations

import hashlib
import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, DataFormatError, UsageError

MANIFEST_NAME = "manifest.json"
BLOB_NAME = "data.f32"


@dataclass
class GestureDataset:
    """Fixed-length gesture samples with per-sample trial/subject bookkeeping.

    ``samples`` is [N, T, S] float32. Class index 0 is reserved for the null
    class. ``sensor_layout`` lists (sensor_name, channel_count) pairs whose
    channel counts sum to S, in channel order.
    """

    name: str
    samples: np.ndarray
    labels: np.ndarray
    trial_ids: np.ndarray
    subject_ids: np.ndarray
    class_names: list[str]
    sensor_layout: list[tuple[str, int]]
    sample_rate_hz: float = 50.0

    def __post_init__(self):
        self.samples = np.ascontiguousarray(self.samples, dtype=np.float32)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.trial_ids = np.asarray(self.trial_ids, dtype=np.int64)
        self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
        self.sensor_layout = [(str(n), int(c)) for n, c in self.sensor_layout]
        self.validate()

    def validate(self) -> None:
        if self.samples.ndim != 3:
            raise DataFormatError(
                f"samples must be [N, T, S], got shape {self.samples.shape}"
            )
        n = self.samples.shape[0]
        for arr, what in ((self.labels, "labels"), (self.trial_ids, "trial_ids"),
                          (self.subject_ids, "subject_ids")):
            if arr.shape != (n,):
                raise DataFormatError(
                    f"{what} must have length {n}, got shape {arr.shape}"
                )
        c = len(self.class_names)
        if n and (self.labels.min() < 0 or self.labels.max() >= c):
            raise DataFormatError(
                f"label values must lie in [0, {c}), got "
                f"[{self.labels.min()}, {self.labels.max()}]"
            )
        layout_channels = sum(ch for _, ch in self.sensor_layout)
        if layout_channels != self.samples.shape[2]:
            raise DataFormatError(
                f"sensor_layout channels sum to {layout_channels}, "
                f"but samples carry S={self.samples.shape[2]}"
            )
        if self.sample_rate_hz <= 0:
            raise DataFormatError("sample_rate_hz must be positive")

    @property
    def n_samples(self) -> int:
        return self.samples.shape[0]

    @property
    def window_length(self) -> int:
        return self.samples.shape[1]

    @property
    def n_channels(self) -> int:
        return self.samples.shape[2]

    @property
    def n_classes(self) -> int:
        return len(self.class_names)

    def subset(self, indices: np.ndarray, name: str | None = None) -> "GestureDataset":
        idx = np.asarray(indices)
        return GestureDataset(
            name=name or self.name,
            samples=self.samples[idx],
            labels=self.labels[idx],
            trial_ids=self.trial_ids[idx],
            subject_ids=self.subject_ids[idx],
            class_names=list(self.class_names),
            sensor_layout=list(self.sensor_layout),
            sample_rate_hz=self.sample_rate_hz,
        )


@dataclass
class FoldSpec:
    """Train/test index partitions that never split a trial."""

    folds: list[tuple[np.ndarray, np.ndarray]]

    def validate(self, trial_ids: np.ndarray) -> None:
        trial_ids = np.asarray(trial_ids)
        covered: list[np.ndarray] = []
        for i, (train, test) in enumerate(self.folds):
            train, test = np.asarray(train), np.asarray(test)
            if np.intersect1d(train, test).size:
                raise ContractError(f"fold {i}: train and test overlap")
            shared = np.intersect1d(
                np.unique(trial_ids[train]), np.unique(trial_ids[test])
            )
            if shared.size:
                raise ContractError(
                    f"fold {i}: trials {shared.tolist()} appear on both sides"
                )
            covered.append(np.unique(trial_ids[test]))
        all_test_trials = np.concatenate(covered) if covered else np.array([])
        uniq, counts = np.unique(all_test_trials, return_counts=True)
        if np.any(counts != 1) or uniq.size != np.unique(trial_ids).size:
            raise ContractError(
                "test sets must cover every trial exactly once across folds"
            )


@dataclass(frozen=True)
class SensorMask:
    """Subset of sensor indices into a dataset's sensor_layout."""

    selected: tuple[int, ...]

    def __post_init__(self):
        if len(self.selected) == 0:
            raise UsageError("sensor mask must select at least one sensor")
        if len(set(self.selected)) != len(self.selected):
            raise UsageError(f"sensor mask has duplicates: {self.selected}")


# -- persistence -------------------------------------------------------------


def save_dataset(ds: GestureDataset, path: str) -> None:
    os.makedirs(path, exist_ok=True)
    manifest = {
        "name": ds.name,
        "n_samples": int(ds.n_samples),
        "window_length": int(ds.window_length),
        "channels": int(ds.n_channels),
        "sample_rate_hz": float(ds.sample_rate_hz),
        "class_names": list(ds.class_names),
        "sensor_layout": [[n, c] for n, c in ds.sensor_layout],
        "labels": ds.labels.tolist(),
        "trial_ids": ds.trial_ids.tolist(),
        "subject_ids": ds.subject_ids.tolist(),
    }
    blob = np.ascontiguousarray(ds.samples, dtype="<f4").tobytes()
    with open(os.path.join(path, BLOB_NAME), "wb") as f:
        f.write(blob)
    with open(os.path.join(path, MANIFEST_NAME), "w", encoding="utf-8") as f:
        json.dump(manifest, f, indent=1)


def load_dataset(path: str) -> GestureDataset:
    manifest_path = os.path.join(path, MANIFEST_NAME)
    blob_path = os.path.join(path, BLOB_NAME)
    if not os.path.isfile(manifest_path):
        raise DataFormatError(f"missing {MANIFEST_NAME} in {path}")
    if not os.path.isfile(blob_path):
        raise DataFormatError(f"missing {BLOB_NAME} in {path}")
    try:
        with open(manifest_path, encoding="utf-8") as f:
            m = json.load(f)
    except json.JSONDecodeError as e:
        raise DataFormatError(f"corrupt manifest in {path}: {e}") from e
    try:
        n = int(m["n_samples"])
        t = int(m["window_length"])
        s = int(m["channels"])
        class_names = list(m["class_names"])
        layout = [(str(a), int(b)) for a, b in m["sensor_layout"]]
        labels = m["labels"]
        trial_ids = m["trial_ids"]
        subject_ids = m["subject_ids"]
        rate = float(m["sample_rate_hz"])
        name = str(m["name"])
    except (KeyError, TypeError, ValueError) as e:
        raise DataFormatError(f"manifest in {path} is missing fields: {e}") from e
    expected = n * t * s * 4
    actual = os.path.getsize(blob_path)
    if actual != expected:
        raise DataFormatError(
            f"{BLOB_NAME} in {path}: expected {expected} bytes "
            f"(N*T*S*4 = {n}*{t}*{s}*4), found {actual}"
        )
    with open(blob_path, "rb") as f:
        samples = np.frombuffer(f.read(), dtype="<f4").reshape(n, t, s)
    return GestureDataset(
        name=name,
        samples=samples.copy(),
        labels=labels,
        trial_ids=trial_ids,
        subject_ids=subject_ids,
        class_names=class_names,
        sensor_layout=layout,
        sample_rate_hz=rate,
    )


def dataset_hash(path: str) -> str:
    """SHA-256 over manifest.json followed by data.f32."""
    h = hashlib.sha256()
    for fname in (MANIFEST_NAME, BLOB_NAME):
        with open(os.path.join(path, fname), "rb") as f:
            h.update(f.read())
    return h.hexdigest()


# -- windowing ----------------------------------------------------------------


def window_semioverlap(series: np.ndarray, window: int, stride: int) -> list[np.ndarray]:
    """Fixed-length windows at offsets 0, stride, 2*stride, ...

    Returns floor((L - window) / stride) + 1 windows when L >= window,
    otherwise an empty list.
    """
    if window < 1:
        raise UsageError(f"window length must be >= 1, got {window}")
    if stride < 1:
        raise UsageError(f"stride must be >= 1, got {stride}")
    series = np.asarray(series)
    length = series.shape[0]
    if length < window:
        return []
    return [series[o:o + window] for o in range(0, length - window + 1, stride)]


def window_nonoverlap(series: np.ndarray, window: int) -> list[np.ndarray]:
    """Non-overlapping windows: the stride == window special case."""
    return window_semioverlap(series, window, window)


# -- folds and splits ---------------------------------------------------------


def folds_from_trial_ids(trial_ids: np.ndarray) -> FoldSpec:
    """One fold per distinct trial; that trial is the test set."""
    trial_ids = np.asarray(trial_ids)
    uniq = np.unique(trial_ids)
    if uniq.size < 2:
        raise ContractError(
            f"leave-one-trial-out needs >= 2 distinct trials, got {uniq.size}"
        )
    folds = []
    for trial in uniq:
        test = np.flatnonzero(trial_ids == trial)
        train = np.flatnonzero(trial_ids != trial)
        folds.append((train, test))
    return FoldSpec(folds=folds)


def make_loto_folds(ds: GestureDataset) -> FoldSpec:
    return folds_from_trial_ids(ds.trial_ids)


def trial_aware_split(trial_ids: np.ndarray, test_fraction: float) -> tuple[np.ndarray, np.ndarray]:
    """Deterministic train/test split holding out whole trials from the end.

    Trials are taken in descending id order until the test set reaches at
    least ``test_fraction`` of the samples. Returns (train_idx, test_idx).
    """
    if not 0.0 < test_fraction < 1.0:
        raise UsageError(f"test_fraction must be in (0, 1), got {test_fraction}")
    trial_ids = np.asarray(trial_ids)
    uniq = np.unique(trial_ids)
    if uniq.size < 2:
        raise ContractError("cannot split a dataset with fewer than 2 trials")
    target = test_fraction * trial_ids.size
    test_trials: list[int] = []
    count = 0
    for trial in uniq[::-1]:
        if count >= target or uniq.size - len(test_trials) <= 1:
            break
        test_trials.append(trial)
        count += int(np.sum(trial_ids == trial))
    mask = np.isin(trial_ids, test_trials)
    return np.flatnonzero(~mask), np.flatnonzero(mask)


# -- standardization ----------------------------------------------------------

STD_FLOOR = 1e-8


@dataclass
class ChannelScaler:
    """Per-channel affine standardization fitted on training data only."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, samples: np.ndarray) -> "ChannelScaler":
        if samples.shape[0] < 1:
            raise UsageError("cannot fit scaler on an empty sample set")
        flat = samples.reshape(-1, samples.shape[-1]).astype(np.float64)
        mean = flat.mean(axis=0)
        std = flat.std(axis=0)
        std = np.maximum(std, STD_FLOOR)
        return cls(mean=mean.astype(np.float32), std=std.astype(np.float32))

    def transform(self, samples: np.ndarray) -> np.ndarray:
        return ((samples - self.mean) / self.std).astype(np.float32)

    def to_dict(self) -> dict:
        return {"mean": self.mean.tolist(), "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> "ChannelScaler":
        return cls(
            mean=np.asarray(d["mean"], dtype=np.float32),
            std=np.asarray(d["std"], dtype=np.float32),
        )


def standardize(ds: GestureDataset,
                fit_indices: np.ndarray | None = None) -> tuple[GestureDataset, ChannelScaler]:
    """Standardize every channel using statistics from ``fit_indices`` only.

    ``fit_indices`` defaults to all samples; pass the training indices so
    test data never leaks into the statistics.
    """
    fit = ds.samples if fit_indices is None else ds.samples[np.asarray(fit_indices)]
    scaler = ChannelScaler.fit(fit)
    out = GestureDataset(
        name=ds.name,
        samples=scaler.transform(ds.samples),
        labels=ds.labels,
        trial_ids=ds.trial_ids,
        subject_ids=ds.subject_ids,
        class_names=list(ds.class_names),
        sensor_layout=list(ds.sensor_layout),
        sample_rate_hz=ds.sample_rate_hz,
    )
    return out, scaler


# -- sensor masking -----------------------------------------------------------


def channel_slices(layout: list[tuple[str, int]]) -> list[tuple[str, slice]]:
    out = []
    start = 0
    for name, count in layout:
        out.append((name, slice(start, start + count)))
        start += count
    return out


def apply_sensor_mask(ds: GestureDataset, mask: SensorMask) -> GestureDataset:
    """Keep only the channels of the selected sensors, in layout order."""
    n_sensors = len(ds.sensor_layout)
    for idx in mask.selected:
        if not 0 <= idx < n_sensors:
            raise UsageError(
                f"sensor index {idx} out of range for {n_sensors} sensors"
            )
    keep = sorted(mask.selected)
    slices = channel_slices(ds.sensor_layout)
    cols = np.concatenate([
        np.arange(slices[i][1].start, slices[i][1].stop) for i in keep
    ])
    return GestureDataset(
        name=ds.name,
        samples=ds.samples[:, :, cols],
        labels=ds.labels,
        trial_ids=ds.trial_ids,
        subject_ids=ds.subject_ids,
        class_names=list(ds.class_names),
        sensor_layout=[ds.sensor_layout[i] for i in keep],
        sample_rate_hz=ds.sample_rate_hz,
    )
