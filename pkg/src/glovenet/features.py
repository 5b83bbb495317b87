"""Hand-crafted per-channel features and a CART-style decision tree.

Six statistics per channel (mean, std, min, max, RMS, mean absolute first
difference) feed a greedy Gini-impurity tree. Splits are deterministic:
features are scanned in ascending index order and thresholds in ascending
value order, and only strictly better impurity decreases replace the
incumbent, so ties resolve to the lowest feature index / lowest threshold.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

from .errors import ShapeError, UsageError

FEATURE_KINDS = ("mean", "std", "min", "max", "rms", "mad1")
F_PER_CHANNEL = len(FEATURE_KINDS)

_GAIN_EPS = 1e-12  # numeric zero for impurity decreases


@dataclass
class FeatureVector:
    values: np.ndarray
    feature_names: list[str]


def channel_feature_names(sensor_layout: list[tuple[str, int]]) -> list[str]:
    names = []
    for sensor, count in sensor_layout:
        for ch in range(count):
            for kind in FEATURE_KINDS:
                names.append(f"{sensor}[{ch}].{kind}")
    return names


def _feature_block(samples: np.ndarray) -> np.ndarray:
    """[N, T, S] -> [N, S, 6] feature block (float32)."""
    x = samples.astype(np.float64)
    mean = x.mean(axis=1)
    std = x.std(axis=1)
    mn = x.min(axis=1)
    mx = x.max(axis=1)
    rms = np.sqrt(np.mean(x * x, axis=1))
    mad1 = np.abs(np.diff(x, axis=1)).mean(axis=1)
    return np.stack([mean, std, mn, mx, rms, mad1], axis=-1).astype(np.float32)


def extract_feature_matrix(samples: np.ndarray) -> np.ndarray:
    """Features for a batch of samples, flattened to [N, S * 6]."""
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[1] < 2:
        raise ShapeError(
            f"expected [N, T>=2, S] samples, got shape {samples.shape}"
        )
    block = _feature_block(samples)
    return block.reshape(samples.shape[0], -1)


def extract_features(sample: np.ndarray,
                     sensor_layout: list[tuple[str, int]] | None = None) -> FeatureVector:
    """Per-channel statistics of a single [T, S] sample."""
    sample = np.asarray(sample)
    if sample.ndim != 2 or sample.shape[0] < 2:
        raise ShapeError(f"expected a [T>=2, S] sample, got shape {sample.shape}")
    values = extract_feature_matrix(sample[None])[0]
    if sensor_layout is None:
        sensor_layout = [("ch", sample.shape[1])]
    names = channel_feature_names(sensor_layout)
    if len(names) != values.size:
        raise ShapeError(
            f"sensor_layout describes {len(names) // F_PER_CHANNEL} channels, "
            f"sample has {sample.shape[1]}"
        )
    return FeatureVector(values=values, feature_names=names)


def gini(counts: np.ndarray) -> float:
    """Gini impurity of a class-count vector."""
    counts = np.asarray(counts, dtype=np.float64)
    n = counts.sum()
    if n == 0:
        return 0.0
    p = counts / n
    return float(1.0 - np.sum(p * p))


@dataclass
class TreeParams:
    max_depth: int | None = 12
    min_samples_split: int = 2


class DecisionTree:
    """CART classifier with Gini splits and JSON serialization.

    Nodes are stored preorder in ``self.nodes``: internal nodes carry
    feature_index/threshold/left/right, leaves carry class and
    class_distribution (training counts).
    """

    def __init__(self, params: TreeParams | None = None):
        self.params = params or TreeParams()
        self.nodes: list[dict] = []
        self.n_features: int | None = None
        self.n_classes: int | None = None

    # -- fitting ------------------------------------------------------------

    def fit(self, X: np.ndarray, y: np.ndarray,
            n_classes: int | None = None) -> "DecisionTree":
        X = np.asarray(X, dtype=np.float64)
        y = np.asarray(y, dtype=np.int64)
        if X.ndim != 2 or X.shape[0] == 0:
            raise UsageError(f"fit needs a non-empty [N, F] matrix, got {X.shape}")
        if y.shape != (X.shape[0],):
            raise ShapeError(f"labels {y.shape} do not match X {X.shape}")
        self.n_features = X.shape[1]
        self.n_classes = int(n_classes if n_classes is not None else y.max() + 1)
        self.nodes = []
        self._grow(X, y, depth=0)
        return self

    def _grow(self, X: np.ndarray, y: np.ndarray, depth: int) -> int:
        """Grow a subtree over (X, y); returns the node's index."""
        counts = np.bincount(y, minlength=self.n_classes)
        node_idx = len(self.nodes)
        n = y.size
        at_depth_limit = (
            self.params.max_depth is not None and depth >= self.params.max_depth
        )
        if (
            at_depth_limit
            or n < self.params.min_samples_split
            or np.count_nonzero(counts) <= 1
        ):
            self.nodes.append(self._leaf(counts))
            return node_idx

        split = self._best_split(X, y, counts)
        if split is None:
            self.nodes.append(self._leaf(counts))
            return node_idx

        feature, threshold = split
        self.nodes.append({
            "feature_index": int(feature),
            "threshold": float(threshold),
            "left": -1,
            "right": -1,
        })
        mask = X[:, feature] <= threshold
        self.nodes[node_idx]["left"] = self._grow(X[mask], y[mask], depth + 1)
        self.nodes[node_idx]["right"] = self._grow(X[~mask], y[~mask], depth + 1)
        return node_idx

    @staticmethod
    def _leaf(counts: np.ndarray) -> dict:
        return {
            "class": int(np.argmax(counts)),
            "class_distribution": counts.tolist(),
        }

    def _best_split(self, X: np.ndarray, y: np.ndarray,
                    counts: np.ndarray) -> tuple[int, float] | None:
        n, n_feat = X.shape
        c = self.n_classes
        parent = gini(counts)

        order = np.argsort(X, axis=0, kind="stable")          # [n, F]
        xs = np.take_along_axis(X, order, axis=0)             # sorted values
        ys = y[order]                                         # labels in value order

        onehot = np.zeros((n, n_feat, c), dtype=np.float64)
        np.put_along_axis(onehot, ys[:, :, None], 1.0, axis=2)
        left = np.cumsum(onehot, axis=0)[:-1]                 # [n-1, F, C]
        right = counts.astype(np.float64)[None, None, :] - left

        sizes_l = np.arange(1, n, dtype=np.float64)[:, None]
        sizes_r = n - sizes_l
        gini_l = 1.0 - np.sum((left / sizes_l[:, :, None]) ** 2, axis=2)
        gini_r = 1.0 - np.sum((right / sizes_r[:, :, None]) ** 2, axis=2)
        weighted = (sizes_l * gini_l + sizes_r * gini_r) / n  # [n-1, F]
        gain = parent - weighted
        gain[xs[1:] == xs[:-1]] = -np.inf                     # no boundary here

        best_per_feat = gain.max(axis=0)                      # [F]
        best_gain = best_per_feat.max()
        if not np.isfinite(best_gain) or best_gain <= _GAIN_EPS:
            return None
        feature = int(np.argmax(best_per_feat == best_gain))  # lowest feature idx
        i = int(np.argmax(gain[:, feature] == best_gain))     # lowest threshold
        threshold = 0.5 * (xs[i, feature] + xs[i + 1, feature])
        return feature, float(threshold)

    # -- prediction -----------------------------------------------------------

    def predict(self, X: np.ndarray) -> np.ndarray:
        if not self.nodes:
            raise UsageError("predict called before fit")
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ShapeError(
                f"predict expects [N, {self.n_features}] features, got {X.shape}"
            )
        out = np.empty(X.shape[0], dtype=np.int64)
        for i, row in enumerate(X):
            node = self.nodes[0]
            while "feature_index" in node:
                if row[node["feature_index"]] <= node["threshold"]:
                    node = self.nodes[node["left"]]
                else:
                    node = self.nodes[node["right"]]
            out[i] = node["class"]
        return out

    # -- serialization ----------------------------------------------------

    def to_json(self) -> str:
        return json.dumps(
            {
                "params": {
                    "max_depth": self.params.max_depth,
                    "min_samples_split": self.params.min_samples_split,
                },
                "n_features": self.n_features,
                "n_classes": self.n_classes,
                "nodes": self.nodes,
            },
            sort_keys=True,
            indent=1,
        )

    @classmethod
    def from_json(cls, text: str) -> "DecisionTree":
        d = json.loads(text)
        tree = cls(TreeParams(
            max_depth=d["params"]["max_depth"],
            min_samples_split=d["params"]["min_samples_split"],
        ))
        tree.n_features = d["n_features"]
        tree.n_classes = d["n_classes"]
        tree.nodes = d["nodes"]
        return tree

    def topology(self) -> list[tuple]:
        """Structure signature ignoring threshold values (for comparisons)."""
        sig = []
        for node in self.nodes:
            if "feature_index" in node:
                sig.append(("split", node["feature_index"], node["left"], node["right"]))
            else:
                sig.append(("leaf", node["class"]))
        return sig


def tree_fit(X: np.ndarray, y: np.ndarray, params: TreeParams | None = None,
             n_classes: int | None = None) -> DecisionTree:
    return DecisionTree(params).fit(X, y, n_classes=n_classes)


def tree_predict(tree: DecisionTree, X: np.ndarray) -> np.ndarray:
    return tree.predict(X)
