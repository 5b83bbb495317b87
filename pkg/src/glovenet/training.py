"""Training loop, evaluation metrics and trial-aware cross-validation."""

from __future__ import annotations

import io
from dataclasses import dataclass, field
from typing import Callable, Protocol

import numpy as np

from . import tensor as tz
from .data import FoldSpec, GestureDataset, standardize
from .errors import ContractError, UsageError
from .features import DecisionTree, TreeParams, extract_feature_matrix
from .model import ModelConfig, TransformerClassifier
from .optim import Adam
from .tensor import Tensor, cross_entropy


@dataclass
class TrainConfig:
    epochs: int = 30
    batch_size: int = 32
    learning_rate: float = 1e-3
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        if self.epochs < 1 or self.batch_size < 1 or self.learning_rate <= 0:
            raise UsageError("epochs, batch_size and learning_rate must be positive")


@dataclass
class EpochStats:
    epoch: int
    loss: float
    accuracy: float


@dataclass
class TrainLog:
    """Per-epoch loss/accuracy on the training set.

    Epoch 0 is evaluated before any parameter update; epoch i >= 1 after
    the i-th pass over the data.
    """

    entries: list[EpochStats] = field(default_factory=list)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("epoch,loss,accuracy\n")
        for e in self.entries:
            buf.write(f"{e.epoch},{e.loss:.6f},{e.accuracy:.6f}\n")
        return buf.getvalue()

    @property
    def final_accuracy(self) -> float:
        return self.entries[-1].accuracy

    @property
    def final_loss(self) -> float:
        return self.entries[-1].loss


@dataclass
class ConfusionMatrix:
    """C x C counts; rows are true classes, columns predicted."""

    counts: np.ndarray
    class_names: list[str]

    @classmethod
    def from_predictions(cls, y_true: np.ndarray, y_pred: np.ndarray,
                         class_names: list[str]) -> "ConfusionMatrix":
        c = len(class_names)
        counts = np.zeros((c, c), dtype=np.int64)
        np.add.at(counts, (np.asarray(y_true), np.asarray(y_pred)), 1)
        return cls(counts=counts, class_names=list(class_names))

    @property
    def total(self) -> int:
        return int(self.counts.sum())

    def accuracy(self) -> float:
        return float(np.trace(self.counts) / max(self.total, 1))

    def recall(self) -> np.ndarray:
        row = self.counts.sum(axis=1)
        return np.divide(np.diag(self.counts), row,
                         out=np.zeros(len(row)), where=row > 0)

    def precision(self) -> np.ndarray:
        col = self.counts.sum(axis=0)
        return np.divide(np.diag(self.counts), col,
                         out=np.zeros(len(col)), where=col > 0)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("true\\pred," + ",".join(self.class_names) + "\n")
        for name, row in zip(self.class_names, self.counts):
            buf.write(name + "," + ",".join(str(int(v)) for v in row) + "\n")
        return buf.getvalue()

    def render_text(self) -> str:
        width = max(len(n) for n in self.class_names)
        width = max(width, len(str(self.counts.max())) if self.total else 1, 5)
        lines = [" " * (width + 1) + " ".join(n.rjust(width) for n in self.class_names)]
        for name, row in zip(self.class_names, self.counts):
            lines.append(
                name.rjust(width) + " " + " ".join(
                    str(int(v)).rjust(width) for v in row
                )
            )
        return "\n".join(lines)


def _epoch_eval(model: TransformerClassifier, samples: np.ndarray,
                labels: np.ndarray, batch_size: int) -> tuple[float, float]:
    total_loss = 0.0
    correct = 0
    with tz.no_grad():
        for start in range(0, samples.shape[0], batch_size):
            xb = samples[start:start + batch_size]
            yb = labels[start:start + batch_size]
            logits = model.forward(xb)
            loss = cross_entropy(logits, yb)
            total_loss += loss.item() * xb.shape[0]
            correct += int(np.sum(np.argmax(logits.data, axis=1) == yb))
    n = samples.shape[0]
    return total_loss / n, correct / n


def train(model: TransformerClassifier, samples: np.ndarray, labels: np.ndarray,
          cfg: TrainConfig) -> TrainLog:
    """Mini-batch Adam on cross-entropy; deterministic under a fixed seed.

    ``samples`` must already be standardized with training-set statistics.
    """
    samples = np.asarray(samples, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int64)
    n = samples.shape[0]
    if n == 0:
        raise UsageError("training set is empty")
    if labels.size and labels.max() >= model.cfg.n_classes:
        raise UsageError(
            f"label {labels.max()} out of range for C={model.cfg.n_classes}"
        )
    rng = np.random.default_rng(cfg.seed)
    opt = Adam(model.parameters(), learning_rate=cfg.learning_rate)
    log = TrainLog()

    loss0, acc0 = _epoch_eval(model, samples, labels, max(cfg.batch_size, 256))
    log.entries.append(EpochStats(0, loss0, acc0))

    eval_bs = max(cfg.batch_size, 256)
    for epoch in range(1, cfg.epochs + 1):
        order = rng.permutation(n) if cfg.shuffle else np.arange(n)
        for start in range(0, n, cfg.batch_size):
            idx = order[start:start + cfg.batch_size]
            logits = model.forward(samples[idx])
            loss = cross_entropy(logits, labels[idx])
            opt.zero_grad()
            loss.backward()
            opt.step()
        loss_e, acc_e = _epoch_eval(model, samples, labels, eval_bs)
        if not np.isfinite(loss_e):
            raise ContractError(f"non-finite training loss at epoch {epoch}")
        log.entries.append(EpochStats(epoch, loss_e, acc_e))
    return log


def evaluate(model, samples: np.ndarray, labels: np.ndarray,
             class_names: list[str]) -> tuple[float, ConfusionMatrix]:
    """Accuracy and confusion matrix of a frozen classifier.

    ``model`` is anything with ``predict(samples) -> labels``.
    """
    samples = np.asarray(samples)
    labels = np.asarray(labels, dtype=np.int64)
    if samples.shape[0] == 0:
        raise UsageError("evaluation set is empty")
    preds = model.predict(samples)
    cm = ConfusionMatrix.from_predictions(labels, preds, class_names)
    return cm.accuracy(), cm


# -- unified classifier runners for cross-validation -------------------------


class Classifier(Protocol):
    def fit(self, samples: np.ndarray, labels: np.ndarray) -> "Classifier": ...
    def predict(self, samples: np.ndarray) -> np.ndarray: ...


class TransformerRunner:
    """Builds, trains and predicts with a fresh transformer."""

    def __init__(self, model_cfg: ModelConfig, train_cfg: TrainConfig,
                 init_seed: int = 0):
        self.model_cfg = model_cfg
        self.train_cfg = train_cfg
        self.init_seed = init_seed
        self.model: TransformerClassifier | None = None
        self.log: TrainLog | None = None

    def fit(self, samples: np.ndarray, labels: np.ndarray) -> "TransformerRunner":
        self.model = TransformerClassifier(self.model_cfg, seed=self.init_seed)
        self.log = train(self.model, samples, labels, self.train_cfg)
        return self

    def predict(self, samples: np.ndarray) -> np.ndarray:
        if self.model is None:
            raise UsageError("predict called before fit")
        return self.model.predict(samples)


class TreeRunner:
    """Feature extraction plus CART tree behind the same interface."""

    def __init__(self, params: TreeParams | None = None, n_classes: int | None = None):
        self.params = params or TreeParams()
        self.n_classes = n_classes
        self.tree: DecisionTree | None = None

    def fit(self, samples: np.ndarray, labels: np.ndarray) -> "TreeRunner":
        feats = extract_feature_matrix(samples)
        self.tree = DecisionTree(self.params).fit(feats, labels,
                                                  n_classes=self.n_classes)
        return self

    def predict(self, samples: np.ndarray) -> np.ndarray:
        if self.tree is None:
            raise UsageError("predict called before fit")
        return self.tree.predict(extract_feature_matrix(samples))


@dataclass
class CrossvalResult:
    fold_accuracies: list[float]
    fold_matrices: list[ConfusionMatrix]
    pooled_matrix: ConfusionMatrix

    @property
    def mean_accuracy(self) -> float:
        return float(np.mean(self.fold_accuracies))

    @property
    def std_accuracy(self) -> float:
        return float(np.std(self.fold_accuracies))

    @property
    def pooled_accuracy(self) -> float:
        return self.pooled_matrix.accuracy()

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("fold,accuracy\n")
        for i, acc in enumerate(self.fold_accuracies):
            buf.write(f"{i},{acc:.6f}\n")
        buf.write(f"mean,{self.mean_accuracy:.6f}\n")
        buf.write(f"std,{self.std_accuracy:.6f}\n")
        buf.write(f"pooled,{self.pooled_accuracy:.6f}\n")
        return buf.getvalue()


def crossval(factory: Callable[[], Classifier], ds: GestureDataset,
             folds: FoldSpec, _fit_scaler_on: str = "train") -> CrossvalResult:
    """Evaluate a classifier family over trial-aware folds.

    A fresh classifier is built per fold and per-channel standardization is
    refit on that fold's training indices only. ``_fit_scaler_on="all"``
    exists solely so tests can demonstrate the effect of leaking test
    statistics; never use it for results.
    """
    folds.validate(ds.trial_ids)
    accs: list[float] = []
    mats: list[ConfusionMatrix] = []
    pooled = np.zeros((ds.n_classes, ds.n_classes), dtype=np.int64)
    for train_idx, test_idx in folds.folds:
        fit_idx = None if _fit_scaler_on == "all" else train_idx
        std_ds, _scaler = standardize(ds, fit_indices=fit_idx)
        clf = factory()
        clf.fit(std_ds.samples[train_idx], std_ds.labels[train_idx])
        acc, cm = evaluate(
            clf, std_ds.samples[test_idx], std_ds.labels[test_idx], ds.class_names
        )
        accs.append(acc)
        mats.append(cm)
        pooled += cm.counts
    return CrossvalResult(
        fold_accuracies=accs,
        fold_matrices=mats,
        pooled_matrix=ConfusionMatrix(pooled, list(ds.class_names)),
    )
