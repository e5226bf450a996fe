"""Gradient-boosted decision trees for binary classification, from scratch.

Second-order boosting on the logistic loss: per round, gradients
g = p - y and hessians h = p(1-p); splits maximize the usual
GL^2/(HL+l2) + GR^2/(HR+l2) - G^2/(H+l2) gain over quantile-binned
histograms; leaf values are -G/(H+l2) scaled by the learning rate.

Ties in gain break to the lowest feature index, then the lowest bin, so
training is deterministic for a fixed dataset and config. Trained models
are immutable and safe to share across threads.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

FORMAT_VERSION = 1

_LOGIT_CLIP = 36.0  # keeps sigmoid strictly inside (0, 1) in float64
_MIN_GAIN = 1e-12


@dataclass(frozen=True)
class TrainConfig:
    n_estimators: int = 180
    max_depth: int = 4
    learning_rate: float = 0.1
    min_child_weight: float = 1.0
    lambda_l2: float = 1.0
    n_bins: int = 64
    class_weight: Optional[float] = None

    def __post_init__(self):
        if self.n_estimators < 1 or self.max_depth < 1:
            raise ValueError("n_estimators and max_depth must be positive")
        if self.learning_rate <= 0 or self.min_child_weight <= 0 or self.lambda_l2 <= 0:
            raise ValueError("learning_rate, min_child_weight and lambda_l2 must be positive")
        if self.n_bins < 2:
            raise ValueError("n_bins must be >= 2")
        if self.class_weight is not None and self.class_weight <= 0:
            raise ValueError("class_weight must be positive")

    def to_dict(self) -> dict:
        return {
            "n_estimators": self.n_estimators,
            "max_depth": self.max_depth,
            "learning_rate": self.learning_rate,
            "min_child_weight": self.min_child_weight,
            "lambda_l2": self.lambda_l2,
            "n_bins": self.n_bins,
            "class_weight": self.class_weight,
        }

    @classmethod
    def from_dict(cls, obj: dict) -> "TrainConfig":
        known = {f for f in cls.__dataclass_fields__}
        return cls(**{k: v for k, v in obj.items() if k in known})


@dataclass
class Tree:
    """Flat node arrays; feature == -1 marks a leaf."""

    feature: list[int]
    threshold: list[float]
    left: list[int]
    right: list[int]
    value: list[float]
    _arrays: Optional[tuple] = field(default=None, repr=False, compare=False)

    def numpy_arrays(self):
        if self._arrays is None:
            self._arrays = (
                np.asarray(self.feature, dtype=np.int32),
                np.asarray(self.threshold, dtype=np.float64),
                np.asarray(self.left, dtype=np.int32),
                np.asarray(self.right, dtype=np.int32),
                np.asarray(self.value, dtype=np.float64),
            )
        return self._arrays


class GbdtModel:
    """Immutable trained ensemble."""

    def __init__(
        self,
        trees: Sequence[Tree],
        learning_rate: float,
        base_score: float,
        feature_names: Sequence[str],
        train_loss: Optional[Sequence[float]] = None,
    ):
        self.trees = list(trees)
        self.learning_rate = float(learning_rate)
        self.base_score = float(base_score)
        self.feature_names = list(feature_names)
        # Loss curve from training; informational, not serialized.
        self.train_loss = list(train_loss) if train_loss is not None else []

    @property
    def n_features(self) -> int:
        return len(self.feature_names)

    def raw_score_one(self, x: Sequence[float]) -> float:
        if len(x) != self.n_features:
            raise ValueError(
                f"feature-shape: expected {self.n_features} features, got {len(x)}"
            )
        score = self.base_score
        for tree in self.trees:
            feature = tree.feature
            node = 0
            while feature[node] >= 0:
                if x[feature[node]] < tree.threshold[node]:
                    node = tree.left[node]
                else:
                    node = tree.right[node]
            score += tree.value[node]
        return score

    def predict_one(self, x: Sequence[float]) -> float:
        return _sigmoid_scalar(self.raw_score_one(x))

    def raw_score(self, X: np.ndarray) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.n_features:
            raise ValueError(
                f"feature-shape: expected (n, {self.n_features}), got {X.shape}"
            )
        out = np.full(X.shape[0], self.base_score, dtype=np.float64)
        row_ids = np.arange(X.shape[0])
        for tree in self.trees:
            feature, threshold, left, right, value = tree.numpy_arrays()
            idx = np.zeros(X.shape[0], dtype=np.int32)
            while True:
                feats = feature[idx]
                active = np.nonzero(feats >= 0)[0]
                if active.size == 0:
                    break
                cur = idx[active]
                go_left = X[row_ids[active], feats[active]] < threshold[cur]
                idx[active] = np.where(go_left, left[cur], right[cur])
            out += value[idx]
        return out

    def predict(self, X: np.ndarray) -> np.ndarray:
        return _sigmoid(self.raw_score(X))


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_LOGIT_CLIP, _LOGIT_CLIP)))


def _sigmoid_scalar(z: float) -> float:
    if z > _LOGIT_CLIP:
        z = _LOGIT_CLIP
    elif z < -_LOGIT_CLIP:
        z = -_LOGIT_CLIP
    return 1.0 / (1.0 + math.exp(-z))


def bce_loss(raw_scores: np.ndarray, y: np.ndarray) -> float:
    """Binary cross-entropy (natural log, summed) from raw logits."""
    return float(np.sum(y * np.logaddexp(0.0, -raw_scores) + (1.0 - y) * np.logaddexp(0.0, raw_scores)))


def logistic_grad_hess(raw_scores: np.ndarray, y: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    p = _sigmoid(raw_scores)
    return p - y, p * (1.0 - p)


def _quantile_edges(column: np.ndarray, n_bins: int) -> np.ndarray:
    qs = np.linspace(0.0, 1.0, n_bins + 1)[1:-1]
    return np.unique(np.quantile(column, qs))


class _Binner:
    """Quantile binning shared by every boosting round."""

    def __init__(self, X: np.ndarray, n_bins: int):
        n, m = X.shape
        self.edges: list[np.ndarray] = []
        codes = np.empty((n, m), dtype=np.int32)
        for j in range(m):
            edges = _quantile_edges(X[:, j], n_bins)
            self.edges.append(edges)
            codes[:, j] = np.searchsorted(edges, X[:, j], side="right")
        self.n_codes = n_bins  # codes live in [0, len(edges)] <= n_bins - 1
        # Offset codes let one bincount build every feature's histogram.
        self.offset_codes = codes + (np.arange(m, dtype=np.int32) * self.n_codes)[None, :]
        self.codes = codes
        self.n_features = m


def _best_split(
    binner: _Binner,
    rows: np.ndarray,
    g: np.ndarray,
    h: np.ndarray,
    lambda_l2: float,
    min_child_weight: float,
) -> Optional[tuple[int, int, float]]:
    """Best (feature, code, gain) over all histogram splits, or None."""
    m = binner.n_features
    nc = binner.n_codes
    flat = binner.offset_codes[rows].ravel()
    gw = np.repeat(g[rows], m)
    hw = np.repeat(h[rows], m)
    hist_g = np.bincount(flat, weights=gw, minlength=m * nc).reshape(m, nc)
    hist_h = np.bincount(flat, weights=hw, minlength=m * nc).reshape(m, nc)

    G = float(g[rows].sum())
    H = float(h[rows].sum())
    GL = np.cumsum(hist_g, axis=1)[:, :-1]
    HL = np.cumsum(hist_h, axis=1)[:, :-1]
    GR = G - GL
    HR = H - HL
    valid = (HL >= min_child_weight) & (HR >= min_child_weight)
    if not valid.any():
        return None
    parent = G * G / (H + lambda_l2)
    with np.errstate(divide="ignore", invalid="ignore"):
        gain = GL * GL / (HL + lambda_l2) + GR * GR / (HR + lambda_l2) - parent
    gain = np.where(valid, gain, -np.inf)
    flat_best = int(np.argmax(gain))  # first max: lowest feature, then lowest bin
    best_gain = float(gain.flat[flat_best])
    if best_gain <= _MIN_GAIN:
        return None
    return flat_best // (nc - 1), flat_best % (nc - 1), best_gain


def _grow_tree(
    binner: _Binner,
    g: np.ndarray,
    h: np.ndarray,
    raw: np.ndarray,
    config: TrainConfig,
) -> Tree:
    tree = Tree(feature=[], threshold=[], left=[], right=[], value=[])

    def new_node() -> int:
        tree.feature.append(-1)
        tree.threshold.append(0.0)
        tree.left.append(-1)
        tree.right.append(-1)
        tree.value.append(0.0)
        return len(tree.feature) - 1

    def build(rows: np.ndarray, depth: int) -> int:
        node = new_node()
        split = None
        if depth < config.max_depth:
            split = _best_split(
                binner, rows, g, h, config.lambda_l2, config.min_child_weight
            )
        if split is None:
            G = float(g[rows].sum())
            H = float(h[rows].sum())
            leaf_value = -config.learning_rate * G / (H + config.lambda_l2)
            tree.value[node] = leaf_value
            raw[rows] += leaf_value
            return node
        j, code, _ = split
        tree.feature[node] = j
        tree.threshold[node] = float(binner.edges[j][code])
        mask = binner.codes[rows, j] <= code
        tree.left[node] = build(rows[mask], depth + 1)
        tree.right[node] = build(rows[~mask], depth + 1)
        return node

    build(np.arange(binner.codes.shape[0]), 0)
    return tree


def train(
    X: np.ndarray,
    y: np.ndarray,
    config: TrainConfig,
    feature_names: Sequence[str],
) -> GbdtModel:
    """Fit the boosted ensemble; the recorded loss curve is non-increasing."""
    X = np.asarray(X, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] != y.shape[0]:
        raise ValueError("X and y must have matching row counts")
    if X.shape[1] != len(feature_names):
        raise ValueError("feature_names length must match X columns")
    if not np.isfinite(X).all() or not np.isfinite(y).all():
        raise ValueError("non-finite-input: X and y must be finite")
    if not np.isin(y, (0.0, 1.0)).all():
        raise ValueError("labels must be 0 or 1")
    n_pos = int(y.sum())
    if n_pos == 0 or n_pos == len(y):
        raise ValueError("degenerate-labels: need both classes to train")

    weights = np.ones_like(y)
    if config.class_weight is not None:
        weights = np.where(y == 1.0, config.class_weight, 1.0)
    prevalence = float(np.sum(weights * y) / np.sum(weights))
    base_score = math.log(prevalence / (1.0 - prevalence))

    binner = _Binner(X, config.n_bins)
    raw = np.full(len(y), base_score, dtype=np.float64)
    train_loss = [bce_loss(raw, y)]
    trees: list[Tree] = []
    for _ in range(config.n_estimators):
        grad, hess = logistic_grad_hess(raw, y)
        grad *= weights
        hess *= weights
        trees.append(_grow_tree(binner, grad, hess, raw, config))
        train_loss.append(bce_loss(raw, y))
    return GbdtModel(trees, config.learning_rate, base_score, feature_names, train_loss)


# ---------------------------------------------------------------------------
# Canonical serialization
# ---------------------------------------------------------------------------

def serialize(model: GbdtModel) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "learning_rate": model.learning_rate,
        "base_score": model.base_score,
        "feature_names": model.feature_names,
        "trees": [
            {
                "feature": tree.feature,
                "threshold": tree.threshold,
                "left": tree.left,
                "right": tree.right,
                "value": tree.value,
            }
            for tree in model.trees
        ],
    }
    return json.dumps(doc, separators=(",", ":"))


def _validate_tree(tree: Tree, n_features: int) -> None:
    n = len(tree.feature)
    if n == 0:
        raise ValueError("malformed-model: empty tree")
    if not (len(tree.threshold) == len(tree.left) == len(tree.right) == len(tree.value) == n):
        raise ValueError("malformed-model: node array lengths differ")
    for i in range(n):
        f = tree.feature[i]
        if f >= 0:
            if f >= n_features:
                raise ValueError(f"malformed-model: feature index {f} out of range")
            for child in (tree.left[i], tree.right[i]):
                # children must come after the parent (pre-order), which rules
                # out cycles without a full traversal
                if not (i < child < n):
                    raise ValueError("malformed-model: bad child index")
            if not math.isfinite(tree.threshold[i]):
                raise ValueError("malformed-model: non-finite threshold")
        else:
            if not math.isfinite(tree.value[i]):
                raise ValueError("malformed-model: non-finite leaf value")


def deserialize(text: str) -> GbdtModel:
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed-model: invalid json ({exc.msg})") from None
    if not isinstance(doc, dict):
        raise ValueError("malformed-model: expected a json object")
    version = doc.get("format_version")
    if version != FORMAT_VERSION:
        raise ValueError(f"unsupported model format_version: {version!r}")
    try:
        feature_names = list(doc["feature_names"])
        trees = [
            Tree(
                feature=[int(v) for v in t["feature"]],
                threshold=[float(v) for v in t["threshold"]],
                left=[int(v) for v in t["left"]],
                right=[int(v) for v in t["right"]],
                value=[float(v) for v in t["value"]],
            )
            for t in doc["trees"]
        ]
        model = GbdtModel(
            trees=trees,
            learning_rate=float(doc["learning_rate"]),
            base_score=float(doc["base_score"]),
            feature_names=feature_names,
        )
    except (KeyError, TypeError, ValueError) as exc:
        if isinstance(exc, ValueError) and str(exc).startswith(("malformed-model", "unsupported")):
            raise
        raise ValueError(f"malformed-model: {exc}") from None
    for tree in model.trees:
        _validate_tree(tree, model.n_features)
    return model


def save_model(model: GbdtModel, path) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fp:
        fp.write(serialize(model))
        fp.write("\n")


def load_model(path) -> GbdtModel:
    with open(path, "r", encoding="utf-8") as fp:
        return deserialize(fp.read())
