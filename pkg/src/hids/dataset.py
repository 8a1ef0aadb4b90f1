"""Flow-record ingestion, min-max scaling, stratified folds and episodes."""

from __future__ import annotations

import csv
import re
from collections.abc import Iterator, Sequence
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import pandas as pd

from .artifact import Artifact, fingerprint
from .errors import (
    ConfigError,
    DimensionMismatch,
    EmptyDataset,
    InsufficientInstances,
    MissingColumn,
    NonNumericFeature,
    TooFewRecords,
    UnknownLabel,
)
from .taxonomy import ATTACK, BENIGN, DEFAULT_TAXONOMY, LabelTriple, Taxonomy

EPISODE_SIZE = 128


@dataclass(frozen=True)
class FlowRecord:
    features: np.ndarray
    label: LabelTriple


@dataclass
class FlowSet:
    """Column-oriented collection of flow records.

    ``features`` is an (n, F) float64 matrix and ``subcategory`` the canonical
    subcategory name of every row; the coarser labels derive from the
    taxonomy.
    """

    features: np.ndarray
    subcategory: np.ndarray
    feature_names: list[str] = field(default_factory=list)
    taxonomy: Taxonomy = field(default=DEFAULT_TAXONOMY, repr=False)

    def __post_init__(self):
        self.features = np.ascontiguousarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise ValueError("features must be a 2-D matrix")
        self.subcategory = np.asarray(self.subcategory, dtype=object)
        if len(self.subcategory) != len(self.features):
            raise ValueError("features and labels differ in length")
        if not self.feature_names:
            self.feature_names = [f"f{j}" for j in range(self.n_features)]
        cats = {s: self.taxonomy.category_of(s) for s in set(self.subcategory.tolist())}
        self.category = np.array([cats[s] for s in self.subcategory], dtype=object)
        self.binary = np.where(self.category == BENIGN, BENIGN, ATTACK).astype(object)

    def __len__(self) -> int:
        return len(self.features)

    def __getitem__(self, i: int) -> FlowRecord:
        return FlowRecord(self.features[i], self.taxonomy.triple(self.subcategory[i]))

    def __iter__(self) -> Iterator[FlowRecord]:
        for i in range(len(self)):
            yield self[i]

    @property
    def n_features(self) -> int:
        return self.features.shape[1]

    @property
    def is_benign(self) -> np.ndarray:
        return self.category == BENIGN

    def subset(self, idx) -> "FlowSet":
        idx = np.asarray(idx)
        return FlowSet(self.features[idx], self.subcategory[idx], list(self.feature_names), self.taxonomy)

    def with_features(self, features: np.ndarray) -> "FlowSet":
        return FlowSet(features, self.subcategory, list(self.feature_names), self.taxonomy)

    @classmethod
    def from_records(cls, records: Sequence[FlowRecord], feature_names=None,
                     taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> "FlowSet":
        if not records:
            raise EmptyDataset("no records")
        X = np.vstack([np.asarray(r.features, dtype=np.float64) for r in records])
        return cls(X, [r.label.subcategory for r in records], list(feature_names or []), taxonomy)

    def labels(self, level: str) -> np.ndarray:
        return {"binary": self.binary, "category": self.category, "subcategory": self.subcategory}[level]

    def distribution(self, level: str = "subcategory") -> list[tuple[str, int, float]]:
        """(class, records, percentage) rows in taxonomy order."""
        labels = self.labels(level)
        order = {"subcategory": self.taxonomy.subcategories,
                 "category": self.taxonomy.categories,
                 "binary": [BENIGN, ATTACK]}[level]
        names, counts = np.unique(labels.astype(str), return_counts=True)
        have = dict(zip(names.tolist(), counts.tolist()))
        total = len(self)
        return [(c, have[c], 100.0 * have[c] / total) for c in order if c in have]

    def fingerprint(self) -> str:
        return fingerprint(self.to_artifact().to_bytes())

    # -- binary dataset artifact ----------------------------------------------

    def to_artifact(self) -> Artifact:
        names = self.taxonomy.subcategories
        code = {s: i for i, s in enumerate(names)}
        return Artifact(
            "dataset",
            # pairs, not a dict: meta JSON is key-sorted and taxonomy order matters
            meta={"feature_names": self.feature_names, "taxonomy": list(self.taxonomy.mapping.items()),
                  "subcategories": names},
            arrays={"features": self.features,
                    "labels": np.array([code[s] for s in self.subcategory], dtype=np.int32)},
        )

    @classmethod
    def from_artifact(cls, art: Artifact) -> "FlowSet":
        art.expect("dataset")
        names = art.meta["subcategories"]
        subs = np.array(names, dtype=object)[art.arrays["labels"]]
        return cls(art.arrays["features"], subs, list(art.meta["feature_names"]),
                   Taxonomy(dict(art.meta["taxonomy"])))

    def save(self, path) -> str:
        return self.to_artifact().save(path)

    @classmethod
    def load(cls, path) -> "FlowSet":
        return cls.from_artifact(Artifact.load(path))


# -- CSV ingestion -----------------------------------------------------------


@dataclass
class Schema:
    """Column roles for a flow CSV.

    The sidecar file holds ``column=role`` lines with role one of ``label``,
    ``feature`` or ``ignore``. ``*=feature`` (or ``*=ignore``) sets the role
    of every column not listed. ``@taxonomy=<path>`` points at an optional
    taxonomy file, resolved relative to the schema file.
    """

    label: str
    features: list[str] | None = None  # None: every non-label, non-ignored column
    ignore: list[str] = field(default_factory=list)
    taxonomy: Taxonomy = field(default=DEFAULT_TAXONOMY, repr=False)

    @classmethod
    def from_file(cls, path: str | Path) -> "Schema":
        path = Path(path)
        if not path.is_file():
            raise ConfigError(f"schema file not found: {path}")
        label = None
        features: list[str] = []
        ignore: list[str] = []
        wildcard = None
        taxonomy = DEFAULT_TAXONOMY
        for lineno, raw in enumerate(path.read_text(encoding="utf-8").splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key=value")
            key, value = (s.strip() for s in line.split("=", 1))
            if key == "@taxonomy":
                tax_path = Path(value)
                if not tax_path.is_absolute():
                    tax_path = path.parent / tax_path
                taxonomy = Taxonomy.from_file(tax_path)
            elif key == "*":
                if value not in ("feature", "ignore"):
                    raise ConfigError(f"{path}:{lineno}: wildcard role must be feature or ignore")
                wildcard = value
            elif value == "label":
                label = key
            elif value == "feature":
                features.append(key)
            elif value == "ignore":
                ignore.append(key)
            else:
                raise ConfigError(f"{path}:{lineno}: unknown role {value!r}")
        if label is None:
            raise ConfigError(f"{path}: schema names no label column")
        if wildcard == "feature":
            if features:
                raise ConfigError(f"{path}: '*=feature' cannot be combined with explicit features")
            return cls(label, None, ignore, taxonomy)
        if not features:
            raise ConfigError(f"{path}: schema names no feature columns")
        return cls(label, features, ignore, taxonomy)

    def to_text(self) -> str:
        lines = [f"{self.label}=label"]
        if self.features is None:
            lines.append("*=feature")
        else:
            lines += [f"{c}=feature" for c in self.features]
        lines += [f"{c}=ignore" for c in self.ignore]
        return "\n".join(lines) + "\n"


def load_csv(path: str | Path, schema: Schema) -> FlowSet:
    """Read a flow CSV into a :class:`FlowSet`.

    Row numbers in errors are 0-based data-row indices (the header is not
    counted).
    """
    df = pd.read_csv(path, encoding="utf-8", dtype={schema.label: str},
                     float_precision="round_trip", low_memory=False)
    df.columns = [str(c).strip() for c in df.columns]
    if schema.label not in df.columns:
        raise MissingColumn(schema.label)
    if schema.features is None:
        skip = {schema.label, *schema.ignore}
        feature_cols = [c for c in df.columns if c not in skip]
    else:
        feature_cols = list(schema.features)
        for c in feature_cols:
            if c not in df.columns:
                raise MissingColumn(c)
    if not feature_cols:
        raise MissingColumn("<features>")

    X = np.empty((len(df), len(feature_cols)), dtype=np.float64)
    for j, col in enumerate(feature_cols):
        s = df[col]
        vals = s if pd.api.types.is_numeric_dtype(s) else pd.to_numeric(s, errors="coerce")
        arr = vals.to_numpy(dtype=np.float64, na_value=np.nan)
        bad = ~np.isfinite(arr)
        if bad.any():
            row = int(np.argmax(bad))
            raise NonNumericFeature(row, col, s.iloc[row])
        X[:, j] = arr

    raw = df[schema.label].fillna("").astype(str).str.strip()
    tax = schema.taxonomy
    resolved = {}
    for value in raw.unique():
        sub = tax.resolve(value)
        if sub is None:
            raise UnknownLabel(int(np.argmax((raw == value).to_numpy())), value)
        resolved[value] = sub
    subs = raw.map(resolved).to_numpy(dtype=object)
    return FlowSet(X, subs, feature_cols, tax)


def write_csv(path: str | Path, flows: FlowSet, label_column: str = "Label") -> None:
    """Write ``flows`` as CSV; floats use repr so re-reading is lossless."""
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow([*flows.feature_names, label_column])
        for row, sub in zip(flows.features.tolist(), flows.subcategory.tolist()):
            w.writerow([*map(repr, row), sub])


_CIC_SUFFIX = re.compile(r"\d*_(train|test)\.pcap\.csv$", re.IGNORECASE)


def load_ciciomt_dir(root: str | Path, split: str | None = None,
                     taxonomy: Taxonomy = DEFAULT_TAXONOMY) -> FlowSet:
    """Read the native CICIoMT2024 layout, where the label lives in the file name.

    Files look like ``TCP_IP-DDoS-ICMP3_train.pcap.csv``; ``split`` restricts
    to ``train`` or ``test`` files.
    """
    files = sorted(Path(root).rglob("*.csv"))
    parts, labels, names = [], [], None
    for f in files:
        m = _CIC_SUFFIX.search(f.name)
        if m is None or (split and m.group(1).lower() != split):
            continue
        sub = taxonomy.resolve(f.name[:m.start()])
        if sub is None:
            raise UnknownLabel(0, f.name)
        df = pd.read_csv(f, float_precision="round_trip")
        df.columns = [str(c).strip() for c in df.columns]
        if names is None:
            names = list(df.columns)
        elif list(df.columns) != names:
            raise MissingColumn(f"{f.name}: column layout differs")
        arr = df.to_numpy(dtype=np.float64)
        bad = ~np.isfinite(arr)
        if bad.any():
            r, c = np.argwhere(bad)[0]
            raise NonNumericFeature(int(r), names[c], arr[r, c])
        parts.append(arr)
        labels.append(np.full(len(arr), sub, dtype=object))
    if not parts:
        raise EmptyDataset(f"no CICIoMT2024 csv files under {root}")
    return FlowSet(np.vstack(parts), np.concatenate(labels), names, taxonomy)


# -- scaling -----------------------------------------------------------------


@dataclass(frozen=True)
class MinMaxScaler:
    min_: np.ndarray
    max_: np.ndarray

    @property
    def n_features(self) -> int:
        return len(self.min_)

    def transform(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.n_features:
            raise DimensionMismatch(self.n_features, x.shape[-1])
        span = self.max_ - self.min_
        degenerate = span == 0
        out = (x - self.min_) / np.where(degenerate, 1.0, span)
        return np.where(degenerate, 0.0, out)

    def to_artifact(self) -> Artifact:
        return Artifact("scaler", arrays={"min": self.min_, "max": self.max_})

    @classmethod
    def from_artifact(cls, art: Artifact) -> "MinMaxScaler":
        art.expect("scaler")
        return cls(art.arrays["min"], art.arrays["max"])

    def fingerprint(self) -> str:
        """Content hash of the serialized scaler, compared across tiers."""
        return fingerprint(self.to_artifact().to_bytes())


def fit_scaler(flows: FlowSet | np.ndarray) -> MinMaxScaler:
    X = flows.features if isinstance(flows, FlowSet) else np.asarray(flows, dtype=np.float64)
    if X.ndim != 2 or len(X) == 0:
        raise EmptyDataset("cannot fit a scaler on no records")
    return MinMaxScaler(X.min(axis=0), X.max(axis=0))


def transform(scaler: MinMaxScaler, x: np.ndarray) -> np.ndarray:
    return scaler.transform(x)


# -- stratified folds ---------------------------------------------------------


@dataclass(frozen=True)
class StratifiedFolds:
    n_folds: int
    assignment: np.ndarray

    def test_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment == fold)

    def train_index(self, fold: int) -> np.ndarray:
        return np.flatnonzero(self.assignment != fold)

    def split(self, fold: int) -> tuple[np.ndarray, np.ndarray]:
        return self.train_index(fold), self.test_index(fold)


def stratified_folds(labels, n_folds: int, seed: int, classes: Sequence[str] | None = None) -> StratifiedFolds:
    """Assign every record to one of ``n_folds`` folds, class by class.

    Within a class records are shuffled and dealt round-robin, so each fold
    gets floor or ceil of ``total / n_folds``. The dealing offset carries
    over between classes to keep fold sizes even.
    """
    if isinstance(labels, FlowSet):
        labels = labels.subcategory
    labels = np.asarray(labels, dtype=object)
    if n_folds < 2:
        raise ConfigError("n_folds must be at least 2")
    if len(labels) == 0:
        raise TooFewRecords("<any>", 0, 1)
    present = sorted(set(labels.tolist()), key=str)
    for c in classes or ():
        if c not in present:
            raise TooFewRecords(c, 0, 1)
    rng = np.random.default_rng(seed)
    assignment = np.empty(len(labels), dtype=np.int64)
    offset = 0
    for c in present:
        idx = rng.permutation(np.flatnonzero(labels == c))
        assignment[idx] = (offset + np.arange(len(idx))) % n_folds
        offset = (offset + len(idx)) % n_folds
    return StratifiedFolds(n_folds, assignment)


def stratified_sample(labels, fraction: float, seed: int) -> np.ndarray:
    """Indices of a per-class ``fraction`` subsample (at least one per class)."""
    labels = np.asarray(labels, dtype=object)
    rng = np.random.default_rng(seed)
    keep = []
    for c in sorted(set(labels.tolist()), key=str):
        idx = np.flatnonzero(labels == c)
        n = max(1, int(round(fraction * len(idx))))
        keep.append(rng.choice(idx, size=n, replace=False))
    return np.sort(np.concatenate(keep))


# -- meta-learning episodes ----------------------------------------------------


@dataclass(frozen=True)
class Episode:
    """Balanced Attack-vs-Benign task: ``size`` rows of each class.

    ``index`` holds row numbers into the source FlowSet (attack rows first);
    ``labels`` is 1 for attack and 0 for benign.
    """

    attack_type: str
    index: np.ndarray
    features: np.ndarray
    labels: np.ndarray

    def __len__(self) -> int:
        return len(self.labels)


def sample_episode(flows: FlowSet, attack_type: str, seed: int, size: int = EPISODE_SIZE,
                   features: np.ndarray | None = None) -> Episode:
    """Draw ``size`` rows of ``attack_type`` and ``size`` Benign rows without replacement.

    ``attack_type`` may be a category or subcategory name. ``features``
    overrides ``flows.features`` (e.g. with the scaled matrix).
    """
    if attack_type in flows.taxonomy.categories:
        pool = np.flatnonzero(flows.category == attack_type)
    else:
        pool = np.flatnonzero(flows.subcategory == attack_type)
    benign = np.flatnonzero(flows.is_benign)
    if attack_type == BENIGN:
        raise ConfigError("episode attack type cannot be Benign")
    if len(pool) < size:
        raise InsufficientInstances(attack_type, len(pool), size)
    if len(benign) < size:
        raise InsufficientInstances(BENIGN, len(benign), size)
    rng = np.random.default_rng(seed)
    a = np.sort(rng.choice(pool, size=size, replace=False))
    b = np.sort(rng.choice(benign, size=size, replace=False))
    index = np.concatenate([a, b])
    X = flows.features if features is None else features
    labels = np.concatenate([np.ones(size, dtype=np.int64), np.zeros(size, dtype=np.int64)])
    return Episode(attack_type, index, X[index], labels)
