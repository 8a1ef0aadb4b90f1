"""One-class anomaly detectors with quantile-calibrated thresholds.

Three detectors share one interface (``score``: higher is more anomalous):

* :class:`UsfadForest`: stochastic forest of range boxes. Trees grow on
  psi-subsamples with random feature / random split point, every node keeps
  the bounding box of its rows, and a point is penalised at the first box
  that excludes it (earlier exclusion, larger penalty).
* :class:`IsolationForestModel`: classic iForest, s(x) = 2^(-E[h(x)] / c(psi)).
* :class:`LofModel`: exact k-NN local outlier factor (Euclidean).

:func:`fit` trains a detector on one semantic class and sets the decision
threshold at a quantile of scores on a held-out slice of that class.
"""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass, replace

import numpy as np

from . import _kernels
from .artifact import Artifact
from .errors import BadConfig, BadQuantile, DimensionMismatch, EmptyInput, EmptyScores

IN_CLASS = "InClass"
ANOMALOUS = "Anomalous"

KINDS = ("usfad", "iforest", "lof")

# Added to the mean reachability distance so duplicate-heavy neighbourhoods
# give a large finite density instead of dividing by zero.
LOF_EPS = 1e-10


def harmonic(n: int) -> float:
    return float(np.sum(1.0 / np.arange(1, n + 1))) if n > 0 else 0.0


def average_path_length(n: int) -> float:
    """c(n) = 2 H(n-1) - 2 (n-1) / n: mean unsuccessful-search depth in a BST of n keys."""
    if n <= 1:
        return 0.0
    return 2.0 * harmonic(n - 1) - 2.0 * (n - 1) / n


def _c_table(n_max: int) -> np.ndarray:
    h = np.concatenate([[0.0], np.cumsum(1.0 / np.arange(1, n_max + 1))])
    n = np.arange(n_max + 1, dtype=np.float64)
    table = np.zeros(n_max + 1)
    big = n > 1
    table[big] = 2.0 * h[np.arange(n_max + 1)[big] - 1] - 2.0 * (n[big] - 1) / n[big]
    return table


@dataclass(frozen=True)
class OccConfig:
    n_trees: int = 100
    subsample: int = 256
    k: int = 20
    quantile: float = 0.99
    calibration_fraction: float = 0.2
    lof_max_train: int = 4096
    seed: int = 0


def _check(X: np.ndarray, n_features: int) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    if X.ndim == 1:
        X = X[None, :]
    if X.shape[1] != n_features:
        raise DimensionMismatch(n_features, X.shape[1])
    return np.ascontiguousarray(X)


def _random_forest_arrays(X: np.ndarray, n_trees: int, psi: int, max_depth: int, seed: int):
    parts = []
    roots = np.empty(n_trees, dtype=np.int64)
    offset = 0
    for t in range(n_trees):
        rng = np.random.default_rng([seed, t])
        sub = X[rng.choice(len(X), size=psi, replace=False)]
        feat, thr, lt, rt, size, depth, lo, hi = _kernels.build_random_tree(
            np.ascontiguousarray(sub), max_depth, int(rng.integers(0, 2**31 - 1)))
        internal = feat >= 0
        parts.append((feat, thr, np.where(internal, lt + offset, -1), np.where(internal, rt + offset, -1),
                      size, depth, lo, hi))
        roots[t] = offset
        offset += len(feat)
    names = ("feature", "threshold", "left", "right", "size", "depth", "box_lo", "box_hi")
    arrays = {k: np.concatenate(v) for k, v in zip(names, zip(*parts))}
    arrays["roots"] = roots
    return arrays


class IsolationForestModel:
    kind = "iforest"

    def __init__(self, arrays: dict, psi: int, max_depth: int, n_features: int):
        self.arrays = arrays
        self.psi = psi
        self.max_depth = max_depth
        self.n_features = n_features
        self._c = _c_table(psi)

    @property
    def n_trees(self) -> int:
        return len(self.arrays["roots"])

    @classmethod
    def fit(cls, X: np.ndarray, config: OccConfig) -> "IsolationForestModel":
        psi = min(config.subsample, len(X))
        if psi < 2:
            raise EmptyInput("isolation forest needs at least 2 training points")
        depth = math.ceil(math.log2(psi))
        arrays = _random_forest_arrays(X, config.n_trees, psi, depth, config.seed)
        arrays = {k: v for k, v in arrays.items() if k not in ("box_lo", "box_hi")}
        return cls(arrays, psi, depth, X.shape[1])

    def path_length(self, X: np.ndarray) -> np.ndarray:
        """E[h(x)] over the trees."""
        a = self.arrays
        X = _check(X, self.n_features)
        return _kernels.isolation_path_lengths(X, a["feature"], a["threshold"], a["left"], a["right"],
                                               a["size"], a["roots"], self._c)

    def score(self, X: np.ndarray) -> np.ndarray:
        return 2.0 ** (-self.path_length(X) / average_path_length(self.psi))

    def state(self) -> tuple[dict, dict]:
        return {"psi": self.psi, "max_depth": self.max_depth, "n_features": self.n_features}, self.arrays

    @classmethod
    def from_state(cls, meta: dict, arrays: dict) -> "IsolationForestModel":
        return cls(arrays, meta["psi"], meta["max_depth"], meta["n_features"])


class UsfadForest:
    kind = "usfad"

    def __init__(self, arrays: dict, psi: int, depth_limit: int, n_features: int):
        self.arrays = arrays
        self.psi = psi
        self.depth_limit = depth_limit
        self.n_features = n_features

    @property
    def n_trees(self) -> int:
        return len(self.arrays["roots"])

    @classmethod
    def fit(cls, X: np.ndarray, config: OccConfig) -> "UsfadForest":
        psi = min(config.subsample, len(X))
        if psi < 2:
            raise EmptyInput("usfAD forest needs at least 2 training points")
        depth = math.ceil(math.log2(psi)) + 2
        return cls(_random_forest_arrays(X, config.n_trees, psi, depth, config.seed), psi, depth, X.shape[1])

    def score(self, X: np.ndarray) -> np.ndarray:
        a = self.arrays
        X = _check(X, self.n_features)
        psi = np.full(self.n_trees, float(self.psi))
        return _kernels.usfad_scores(X, a["feature"], a["threshold"], a["left"], a["right"], a["size"],
                                     a["box_lo"], a["box_hi"], a["roots"], psi, self.depth_limit)

    def state(self) -> tuple[dict, dict]:
        return {"psi": self.psi, "depth_limit": self.depth_limit, "n_features": self.n_features}, self.arrays

    @classmethod
    def from_state(cls, meta: dict, arrays: dict) -> "UsfadForest":
        return cls(arrays, meta["psi"], meta["depth_limit"], meta["n_features"])


def _knn_mask(D: np.ndarray, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Row-wise k nearest columns, distance ties broken by lower column index.

    Returns (selection mask, k-th neighbour distance).
    """
    kth = np.partition(D, k - 1, axis=1)[:, k - 1]
    less = D < kth[:, None]
    eq = D == kth[:, None]
    room = k - less.sum(axis=1)
    mask = less | (eq & (np.cumsum(eq, axis=1) <= room[:, None]))
    return mask, kth


def _distances(A: np.ndarray, B: np.ndarray) -> np.ndarray:
    return np.sqrt(((A[:, None, :] - B[None, :, :]) ** 2).sum(axis=2))


class LofModel:
    kind = "lof"

    def __init__(self, points: np.ndarray, k: int, k_distance: np.ndarray, lrd: np.ndarray):
        self.points = points
        self.k = k
        self.k_distance = k_distance
        self.lrd = lrd

    @property
    def n_features(self) -> int:
        return self.points.shape[1]

    @staticmethod
    def _chunk(n_train: int, n_features: int) -> int:
        return max(1, int(4_000_000 // max(1, n_train * n_features)))

    @classmethod
    def fit(cls, X: np.ndarray, config: OccConfig) -> "LofModel":
        X = np.ascontiguousarray(X, dtype=np.float64)
        if len(X) > config.lof_max_train:
            rng = np.random.default_rng([config.seed, 0])
            X = X[np.sort(rng.choice(len(X), size=config.lof_max_train, replace=False))]
        n, k = len(X), config.k
        if not 1 <= k < n:
            raise BadConfig(f"LOF needs 1 <= k < n_train (k={k}, n_train={n})")
        step = cls._chunk(n, X.shape[1])
        kdist = np.empty(n)
        masks = []
        for s in range(0, n, step):
            D = _distances(X[s:s + step], X)
            D[np.arange(len(D)), np.arange(s, s + len(D))] = np.inf
            mask, kdist[s:s + step] = _knn_mask(D, k)
            masks.append((s, mask, D))
        reach_mean = np.empty(n)
        for s, mask, D in masks:
            reach = np.maximum(kdist[None, :], D)
            reach_mean[s:s + len(D)] = np.where(mask, reach, 0.0).sum(axis=1) / k
        lrd = 1.0 / (reach_mean + LOF_EPS)
        model = cls(X, k, kdist, lrd)
        model.training_scores = np.concatenate(
            [np.where(mask, lrd[None, :], 0.0).sum(axis=1) / k for _, mask, _ in masks]) / lrd
        return model

    def score(self, X: np.ndarray) -> np.ndarray:
        X = _check(X, self.n_features)
        step = self._chunk(len(self.points), self.n_features)
        out = np.empty(len(X))
        for s in range(0, len(X), step):
            D = _distances(X[s:s + step], self.points)
            mask, _ = _knn_mask(D, self.k)
            reach = np.maximum(self.k_distance[None, :], D)
            lrd_q = 1.0 / (np.where(mask, reach, 0.0).sum(axis=1) / self.k + LOF_EPS)
            out[s:s + step] = np.where(mask, self.lrd[None, :], 0.0).sum(axis=1) / self.k / lrd_q
        return out

    def state(self) -> tuple[dict, dict]:
        return {"k": self.k}, {"points": self.points, "k_distance": self.k_distance, "lrd": self.lrd}

    @classmethod
    def from_state(cls, meta: dict, arrays: dict) -> "LofModel":
        return cls(arrays["points"], meta["k"], arrays["k_distance"], arrays["lrd"])


_DETECTORS = {"usfad": UsfadForest, "iforest": IsolationForestModel, "lof": LofModel}


def calibrate(held_out_scores, target_quantile: float) -> float:
    """Empirical quantile (linear interpolation) of in-class validation scores."""
    scores = np.asarray(held_out_scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyScores("no scores to calibrate on")
    if not 0.0 < target_quantile < 1.0:
        raise BadQuantile(f"quantile must lie in (0, 1), got {target_quantile}")
    return float(np.quantile(scores, target_quantile, method="linear"))


@dataclass(frozen=True)
class OneClassModel:
    kind: str
    detector: object
    threshold: float
    config: OccConfig

    @property
    def n_features(self) -> int:
        return self.detector.n_features

    def score(self, X: np.ndarray) -> np.ndarray:
        """Anomaly scores; a single vector gives a length-1 array."""
        return self.detector.score(X)

    def is_anomalous(self, X: np.ndarray) -> np.ndarray:
        return self.score(X) > self.threshold

    def predict(self, x: np.ndarray) -> str:
        x = np.asarray(x, dtype=np.float64)
        if x.ndim != 1:
            raise DimensionMismatch(self.n_features, x.shape[-1])
        return ANOMALOUS if self.is_anomalous(x)[0] else IN_CLASS

    def with_threshold(self, threshold: float) -> "OneClassModel":
        return replace(self, threshold=float(threshold))

    def to_artifact(self) -> Artifact:
        meta, arrays = self.detector.state()
        return Artifact(f"occ:{self.kind}",
                        meta={"threshold": self.threshold, "config": asdict(self.config),
                              "detector": meta, "orientation": "higher-is-more-anomalous"},
                        arrays=arrays)

    @classmethod
    def from_artifact(cls, art: Artifact) -> "OneClassModel":
        art.expect("occ")
        kind = art.kind.split(":", 1)[1]
        if kind not in _DETECTORS:
            raise BadConfig(f"unknown detector kind {kind!r}")
        det = _DETECTORS[kind].from_state(art.meta["detector"], art.arrays)
        return cls(kind, det, float(art.meta["threshold"]), OccConfig(**art.meta["config"]))


def fit(kind: str, X: np.ndarray, config: OccConfig = OccConfig()) -> OneClassModel:
    """Fit ``kind`` on one-class data and calibrate its threshold.

    A seeded ``calibration_fraction`` of the rows is held out; the detector
    is fitted on the rest and the threshold is the ``quantile`` of the
    held-out scores.
    """
    if kind not in _DETECTORS:
        raise BadConfig(f"unknown detector kind {kind!r}; expected one of {KINDS}")
    if config.n_trees < 1 or config.subsample < 2:
        raise BadConfig("n_trees must be >= 1 and subsample >= 2")
    if not 0.0 < config.calibration_fraction < 1.0:
        raise BadConfig("calibration_fraction must lie in (0, 1)")
    X = np.ascontiguousarray(X, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyInput("one-class training set is empty")
    if len(X) < 3:
        raise EmptyInput("one-class training set needs at least 3 records")
    rng = np.random.default_rng([config.seed, 1])
    perm = rng.permutation(len(X))
    n_cal = min(len(X) - 2, max(1, int(round(config.calibration_fraction * len(X)))))
    cal, train = X[np.sort(perm[:n_cal])], X[np.sort(perm[n_cal:])]
    det = _DETECTORS[kind].fit(train, config)
    threshold = calibrate(det.score(cal), config.quantile)
    return OneClassModel(kind, det, threshold, config)
