"""CART decision trees and bootstrap random forests (Gini impurity)."""

from __future__ import annotations

import math
from collections.abc import Sequence
from dataclasses import asdict, dataclass, field

import numpy as np

from . import _kernels
from .artifact import Artifact
from .errors import BadConfig, DimensionMismatch, EmptyInput


@dataclass(frozen=True)
class ForestConfig:
    n_trees: int = 100
    max_features: int | None = None  # None: ceil(sqrt(F))
    max_depth: int | None = None  # None: grow until pure
    min_leaf: int = 1
    bootstrap: bool = True
    seed: int = 0

    def resolved_max_features(self, n_features: int) -> int:
        m = self.max_features if self.max_features is not None else math.ceil(math.sqrt(n_features))
        if not 1 <= m <= n_features:
            raise BadConfig(f"max_features must be in [1, {n_features}], got {m}")
        return m

    def validate(self) -> None:
        if self.n_trees < 1:
            raise BadConfig("n_trees must be >= 1")
        if self.min_leaf < 1:
            raise BadConfig("min_leaf must be >= 1")
        if self.max_depth is not None and self.max_depth < 0:
            raise BadConfig("max_depth must be >= 0")


@dataclass(frozen=True)
class Split:
    feature: int
    threshold: float
    left: "Split | Leaf"
    right: "Split | Leaf"


@dataclass(frozen=True)
class Leaf:
    histogram: np.ndarray  # weighted class counts, in model class order


@dataclass
class _FlatTrees:
    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray
    roots: np.ndarray

    @property
    def leaf_proba(self) -> np.ndarray:
        tot = self.value.sum(axis=1, keepdims=True)
        return np.divide(self.value, tot, out=np.zeros_like(self.value), where=tot > 0)

    def node(self, i: int) -> Split | Leaf:
        if self.feature[i] < 0:
            return Leaf(self.value[i].copy())
        return Split(int(self.feature[i]), float(self.threshold[i]),
                     self.node(int(self.left[i])), self.node(int(self.right[i])))


def _encode(labels: Sequence, classes: Sequence[str] | None) -> tuple[np.ndarray, tuple[str, ...]]:
    labels = np.asarray(labels, dtype=object)
    if classes is None:
        classes = sorted(set(labels.tolist()), key=str)
    index = {c: i for i, c in enumerate(classes)}
    try:
        y = np.fromiter((index[v] for v in labels), dtype=np.int64, count=len(labels))
    except KeyError as exc:
        raise BadConfig(f"label {exc.args[0]!r} not in class list") from None
    return y, tuple(classes)


def _presort(X: np.ndarray) -> np.ndarray:
    return np.ascontiguousarray(np.argsort(X, axis=0, kind="stable").T)


def _grow(X, y, n_classes, config: ForestConfig, rng: np.random.Generator, order, weights=None):
    if weights is None:
        weights = np.ones(len(X), dtype=np.int64)
    max_depth = -1 if config.max_depth is None else config.max_depth
    seed = int(rng.integers(0, 2**31 - 1))
    return _kernels.build_cart(X, y, weights, order, n_classes,
                               config.resolved_max_features(X.shape[1]), max_depth,
                               config.min_leaf, seed)


class DecisionTree:
    """A single fitted CART tree; :attr:`root` gives the Split/Leaf view."""

    def __init__(self, flat: _FlatTrees, classes: tuple[str, ...]):
        self._flat = flat
        self.classes = classes

    @property
    def root(self) -> Split | Leaf:
        return self._flat.node(0)

    @property
    def n_nodes(self) -> int:
        return len(self._flat.feature)

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        f = self._flat
        return _kernels.forest_proba(X, f.feature, f.threshold, f.left, f.right, f.leaf_proba, f.roots)


def fit_tree(X, labels, config: ForestConfig = ForestConfig(), rng: np.random.Generator | None = None,
             classes: Sequence[str] | None = None) -> DecisionTree:
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyInput("fit_tree needs at least one record")
    if len(labels) != len(X):
        raise EmptyInput("labels are not aligned with records")
    config.validate()
    y, classes = _encode(labels, classes)
    rng = rng if rng is not None else np.random.default_rng([config.seed, 0])
    parts = _grow(X, y, len(classes), config, rng, _presort(X))
    return DecisionTree(_FlatTrees(*parts, roots=np.zeros(1, dtype=np.int64)), classes)


@dataclass
class RandomForestModel:
    classes: tuple[str, ...]
    config: ForestConfig
    n_features: int
    trees: _FlatTrees = field(repr=False)

    @property
    def n_trees(self) -> int:
        return len(self.trees.roots)

    def tree(self, t: int) -> Split | Leaf:
        return self.trees.node(int(self.trees.roots[t]))

    def predict_proba(self, X: np.ndarray) -> np.ndarray:
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[1] != self.n_features:
            raise DimensionMismatch(self.n_features, X.shape[1])
        f = self.trees
        return _kernels.forest_proba(np.ascontiguousarray(X), f.feature, f.threshold, f.left,
                                     f.right, f.leaf_proba, f.roots)

    def predict_batch(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        proba = self.predict_proba(X)
        # argmax returns the first maximum, i.e. ties go to the earlier class
        labels = np.array(self.classes, dtype=object)[np.argmax(proba, axis=1)]
        return labels, proba

    def predict(self, x: np.ndarray) -> tuple[str, np.ndarray]:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionMismatch(self.n_features, x.shape[-1])
        labels, proba = self.predict_batch(x[None, :])
        return labels[0], proba[0]

    # -- serialization ----------------------------------------------------------

    def to_artifact(self) -> Artifact:
        t = self.trees
        return Artifact(
            "forest",
            meta={"classes": list(self.classes), "config": asdict(self.config), "n_features": self.n_features},
            arrays={"feature": t.feature, "threshold": t.threshold, "left": t.left, "right": t.right,
                    "value": t.value, "roots": t.roots},
        )

    @classmethod
    def from_artifact(cls, art: Artifact) -> "RandomForestModel":
        art.expect("forest")
        a = art.arrays
        trees = _FlatTrees(a["feature"], a["threshold"], a["left"], a["right"], a["value"], a["roots"])
        return cls(tuple(art.meta["classes"]), ForestConfig(**art.meta["config"]),
                   int(art.meta["n_features"]), trees)


def fit_forest(X, labels, config: ForestConfig = ForestConfig(),
               classes: Sequence[str] | None = None) -> RandomForestModel:
    """Train ``config.n_trees`` trees, tree ``t`` on a bootstrap drawn from stream (seed, t)."""
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyInput("fit_forest needs at least one record")
    if len(labels) != len(X):
        raise EmptyInput("labels are not aligned with records")
    config.validate()
    y, classes = _encode(labels, classes)
    order = _presort(X)
    n = len(X)
    parts = []
    offset = 0
    roots = np.empty(config.n_trees, dtype=np.int64)
    for t in range(config.n_trees):
        rng = np.random.default_rng([config.seed, t])
        weights = None
        if config.bootstrap:
            weights = np.bincount(rng.integers(0, n, size=n), minlength=n).astype(np.int64)
        feat, thr, lt, rt, val = _grow(X, y, len(classes), config, rng, order, weights)
        internal = feat >= 0
        lt = np.where(internal, lt + offset, -1)
        rt = np.where(internal, rt + offset, -1)
        roots[t] = offset
        offset += len(feat)
        parts.append((feat, thr, lt, rt, val))
    flat = _FlatTrees(*(np.concatenate(p) for p in zip(*parts)), roots=roots)
    return RandomForestModel(classes, config, X.shape[1], flat)
