"""Meta-learned binary root classifier.

A F -> 64 -> 2 ReLU/softmax network is trained with first-order Reptile over
a family of Attack-vs-Benign episodes: sample a task, take ``k`` minibatch
SGD steps from the current initialization Θ to get Ω, then move Θ toward Ω
by ``ε``. A plain-SGD baseline trains the same network on the pooled
episode rows with the same number of gradient steps.

Output index 0 is Normal, index 1 is Attack.
"""

from __future__ import annotations

import csv
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .artifact import Artifact
from .dataset import EPISODE_SIZE, Episode, FlowSet, sample_episode
from .errors import BadConfig, DimensionMismatch, EmptyFamily, InsufficientInstances
from .taxonomy import BENIGN

NORMAL = "Normal"
ATTACK = "Attack"
HIDDEN = 64


@dataclass(frozen=True)
class MlpParams:
    W1: np.ndarray  # F x H
    b1: np.ndarray  # H
    W2: np.ndarray  # H x 2
    b2: np.ndarray  # 2

    @property
    def n_features(self) -> int:
        return self.W1.shape[0]

    def flat(self) -> np.ndarray:
        return np.concatenate([self.W1.ravel(), self.b1, self.W2.ravel(), self.b2])

    @classmethod
    def from_flat(cls, v: np.ndarray, n_features: int, hidden: int = HIDDEN) -> "MlpParams":
        f, h = n_features, hidden
        a, b, c = f * h, f * h + h, f * h + h + 2 * h
        return cls(v[:a].reshape(f, h).copy(), v[a:b].copy(), v[b:c].reshape(h, 2).copy(), v[c:].copy())

    @classmethod
    def zeros(cls, n_features: int, hidden: int = HIDDEN) -> "MlpParams":
        return cls(np.zeros((n_features, hidden)), np.zeros(hidden), np.zeros((hidden, 2)), np.zeros(2))

    @classmethod
    def xavier(cls, n_features: int, rng: np.random.Generator, hidden: int = HIDDEN) -> "MlpParams":
        a1 = np.sqrt(6.0 / (n_features + hidden))
        a2 = np.sqrt(6.0 / (hidden + 2))
        return cls(rng.uniform(-a1, a1, (n_features, hidden)), np.zeros(hidden),
                   rng.uniform(-a2, a2, (hidden, 2)), np.zeros(2))

    def blocks(self) -> dict[str, np.ndarray]:
        return {"W1": self.W1, "b1": self.b1, "W2": self.W2, "b2": self.b2}


def _as_matrix(params: MlpParams, X) -> np.ndarray:
    X = np.asarray(X, dtype=np.float64)
    X2 = X[None, :] if X.ndim == 1 else X
    if X2.ndim != 2 or X2.shape[1] != params.n_features:
        raise DimensionMismatch(params.n_features, X2.shape[-1])
    return X2


def _softmax(Z: np.ndarray) -> np.ndarray:
    Z = Z - Z.max(axis=1, keepdims=True)
    E = np.exp(Z)
    return E / E.sum(axis=1, keepdims=True)


def forward(params: MlpParams, x) -> np.ndarray:
    """Class probabilities; a vector gives shape (2,), a matrix (n, 2)."""
    X = _as_matrix(params, x)
    H = np.maximum(X @ params.W1 + params.b1, 0.0)
    P = _softmax(H @ params.W2 + params.b2)
    return P[0] if np.ndim(x) == 1 else P


def loss(params: MlpParams, X, y) -> float:
    """Mean cross-entropy."""
    P = forward(params, _as_matrix(params, X))
    y = np.asarray(y, dtype=np.int64)
    return float(-np.mean(np.log(np.maximum(P[np.arange(len(y)), y], 1e-300))))


def loss_and_gradients(params: MlpParams, X, y) -> tuple[float, MlpParams]:
    X = _as_matrix(params, X)
    y = np.asarray(y, dtype=np.int64)
    n = len(y)
    A = X @ params.W1 + params.b1
    H = np.maximum(A, 0.0)
    P = _softmax(H @ params.W2 + params.b2)
    value = float(-np.mean(np.log(np.maximum(P[np.arange(n), y], 1e-300))))
    dZ = P.copy()
    dZ[np.arange(n), y] -= 1.0
    dZ /= n
    dH = dZ @ params.W2.T
    dA = dH * (A > 0)
    return value, MlpParams(X.T @ dA, dA.sum(axis=0), H.T @ dZ, dZ.sum(axis=0))


@dataclass(frozen=True)
class ReptileConfig:
    inner_steps: int = 5
    inner_lr: float = 0.02
    meta_lr: float = 0.1
    iterations: int = 200
    batch_size: int = 32
    seed: int = 0
    anneal: bool = False  # linear decay of meta_lr toward 0 over the run

    def validate(self) -> None:
        if self.inner_steps < 1:
            raise BadConfig("inner_steps must be >= 1")
        if self.inner_lr < 0:
            raise BadConfig("inner_lr must be >= 0")
        if not 0.0 <= self.meta_lr <= 1.0:
            raise BadConfig("meta_lr must lie in [0, 1]")
        if self.iterations < 0 or self.batch_size < 1:
            raise BadConfig("iterations must be >= 0 and batch_size >= 1")


def sgd_steps(params: MlpParams, episode: Episode, k: int, inner_lr: float, batch_size: int,
              rng: np.random.Generator) -> MlpParams:
    """``k`` minibatch SGD steps from ``params``; minibatches are drawn without replacement."""
    X, y = episode.features, episode.labels
    b = min(batch_size, len(y))
    cur = params
    for _ in range(k):
        idx = rng.choice(len(y), size=b, replace=False)
        _, g = loss_and_gradients(cur, X[idx], y[idx])
        cur = MlpParams(cur.W1 - inner_lr * g.W1, cur.b1 - inner_lr * g.b1,
                        cur.W2 - inner_lr * g.W2, cur.b2 - inner_lr * g.b2)
    return cur


def interpolate(theta: np.ndarray, omega: np.ndarray, eps: float) -> np.ndarray:
    # (1-ε)Θ + εΩ rather than Θ + ε(Ω-Θ): identical algebra, and the ε=0 and
    # ε=1 ends come out bit-exact.
    return (1.0 - eps) * theta + eps * omega


@dataclass
class TaskFamily:
    """Fixed Attack-vs-Benign episodes, one per attack type."""

    episodes: list[Episode]
    n_source: int = 0  # rows in the data the episodes were drawn from

    def __post_init__(self):
        if len(self.episodes) < 2:
            raise EmptyFamily(f"need at least 2 tasks, got {len(self.episodes)}")

    def __len__(self) -> int:
        return len(self.episodes)

    @property
    def names(self) -> list[str]:
        return [e.attack_type for e in self.episodes]

    @classmethod
    def from_flows(cls, flows: FlowSet, features: np.ndarray | None = None, seed: int = 0,
                   level: str = "category", size: int = EPISODE_SIZE) -> "TaskFamily":
        """One episode per attack category (or subcategory) with enough rows; others are skipped."""
        labels = flows.category if level == "category" else flows.subcategory
        kinds = [c for c in (flows.taxonomy.categories if level == "category" else flows.taxonomy.subcategories)
                 if c != BENIGN and np.any(labels == c)]
        episodes = []
        for i, kind in enumerate(kinds):
            try:
                episodes.append(sample_episode(flows, kind, seed=seed * 1000 + i, size=size, features=features))
            except InsufficientInstances:
                continue
        return cls(episodes, len(flows))

    def distinct_rows(self) -> np.ndarray:
        return np.unique(np.concatenate([e.index for e in self.episodes]))


@dataclass
class TrainLog:
    rows: list[dict] = field(default_factory=list)

    def write_csv(self, path: str | Path) -> None:
        cols = ["iteration", "task", "loss_before", "loss_after", "step_norm", "expected_step_norm",
                "meta_lr", "val_accuracy"]
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=cols)
            w.writeheader()
            for r in self.rows:
                w.writerow({c: r.get(c, "") for c in cols})


def _accuracy(params: MlpParams, validation) -> float:
    if validation is None:
        return float("nan")
    X, y = validation
    pred = (forward(params, X)[:, 1] >= 0.5).astype(np.int64)
    return float(np.mean(pred == np.asarray(y)) * 100.0)


def reptile_train(family: TaskFamily, config: ReptileConfig = ReptileConfig(),
                  init: MlpParams | None = None, log: TrainLog | None = None,
                  validation: tuple[np.ndarray, np.ndarray] | None = None,
                  on_iteration=None) -> MlpParams:
    """Reptile outer loop. ``on_iteration(i, theta_before, omega, theta_after)`` is called each step."""
    config.validate()
    if not family.episodes:
        raise EmptyFamily("no tasks")
    n_features = family.episodes[0].features.shape[1]
    init_rng = np.random.default_rng([config.seed, 2])
    rng = np.random.default_rng([config.seed, 3])
    theta = init if init is not None else MlpParams.xavier(n_features, init_rng)
    for i in range(config.iterations):
        t = int(rng.integers(0, len(family)))
        ep = family.episodes[t]
        eps = config.meta_lr * (1.0 - i / config.iterations) if config.anneal else config.meta_lr
        omega = sgd_steps(theta, ep, config.inner_steps, config.inner_lr, config.batch_size, rng)
        th, om = theta.flat(), omega.flat()
        new = MlpParams.from_flat(interpolate(th, om, eps), n_features, theta.b1.shape[0])
        if log is not None:
            log.rows.append({
                "iteration": i, "task": ep.attack_type,
                "loss_before": loss(theta, ep.features, ep.labels),
                "loss_after": loss(omega, ep.features, ep.labels),
                "step_norm": float(np.linalg.norm(new.flat() - th)),
                "expected_step_norm": float(eps * np.linalg.norm(om - th)),
                "meta_lr": eps, "val_accuracy": _accuracy(new, validation),
            })
        if on_iteration is not None:
            on_iteration(i, theta, omega, new)
        theta = new
    return theta


def sgd_baseline_train(episodes: TaskFamily | list[Episode], config: ReptileConfig = ReptileConfig(),
                       init: MlpParams | None = None) -> MlpParams:
    """Plain SGD on the pooled episode rows, ``iterations * inner_steps`` minibatch steps."""
    config.validate()
    eps_list = episodes.episodes if isinstance(episodes, TaskFamily) else list(episodes)
    if not eps_list:
        raise EmptyFamily("no episodes")
    pooled = Episode("pooled", np.concatenate([e.index for e in eps_list]),
                     np.vstack([e.features for e in eps_list]), np.concatenate([e.labels for e in eps_list]))
    init_rng = np.random.default_rng([config.seed, 2])
    rng = np.random.default_rng([config.seed, 3])
    theta = init if init is not None else MlpParams.xavier(pooled.features.shape[1], init_rng)
    return sgd_steps(theta, pooled, config.iterations * config.inner_steps, config.inner_lr,
                     config.batch_size, rng)


def mlc_predict(params: MlpParams, x) -> str:
    p = forward(params, x)
    if np.ndim(p) != 1:
        raise DimensionMismatch(params.n_features, np.shape(x)[-1])
    return ATTACK if p[1] >= p[0] else NORMAL


@dataclass
class MetaClassifier:
    """Binary root model: ``kind`` is "mlc" (Reptile) or "sgd" (baseline)."""

    kind: str
    params: MlpParams
    config: ReptileConfig
    tasks: list[str] = field(default_factory=list)
    samples_used: int = 0
    n_source: int = 0

    @property
    def n_features(self) -> int:
        return self.params.n_features

    @property
    def data_fraction(self) -> float:
        return self.samples_used / self.n_source if self.n_source else float("nan")

    def proba(self, X) -> np.ndarray:
        return forward(self.params, _as_matrix(self.params, X))

    def is_attack(self, X) -> np.ndarray:
        P = self.proba(X)
        return P[:, 1] >= P[:, 0]

    def predict(self, x) -> str:
        return mlc_predict(self.params, x)

    def to_artifact(self) -> Artifact:
        return Artifact(f"meta:{self.kind}",
                        meta={"config": asdict(self.config), "tasks": self.tasks,
                              "samples_used": self.samples_used, "n_source": self.n_source},
                        arrays=self.params.blocks())

    @classmethod
    def from_artifact(cls, art: Artifact) -> "MetaClassifier":
        art.expect("meta")
        a = art.arrays
        return cls(art.kind.split(":", 1)[1], MlpParams(a["W1"], a["b1"], a["W2"], a["b2"]),
                   ReptileConfig(**art.meta["config"]), list(art.meta["tasks"]),
                   int(art.meta["samples_used"]), int(art.meta["n_source"]))


def train_meta_classifier(flows: FlowSet, features: np.ndarray, kind: str = "mlc",
                          config: ReptileConfig = ReptileConfig(), log: TrainLog | None = None,
                          validation=None) -> MetaClassifier:
    """Build the per-category task family from ``flows`` and train the root network."""
    family = TaskFamily.from_flows(flows, features, seed=config.seed)
    if kind == "mlc":
        params = reptile_train(family, config, log=log, validation=validation)
    elif kind == "sgd":
        params = sgd_baseline_train(family, config)
    else:
        raise BadConfig(f"unknown meta classifier kind {kind!r}")
    # every episode row is counted whether or not a minibatch happened to draw it
    return MetaClassifier(kind, params, config, family.names, len(family.distinct_rows()), len(flows))
