"""Four-level hierarchical IDS: root filter, known/unknown verify, category, subtype.

Routing for a scaled flow x:

* root says in-distribution (Benign-like)          -> Normal, stop at Root
* root flags it, verify says it is unlike known attacks -> UnknownAttack, quarantined
* otherwise the category forest and the subtype forest name it. Under the
  RF1 regime those forests also know Benign and can overturn a root false
  alarm (final Normal, ``corrected`` set).
"""

from __future__ import annotations

import json
import threading
import time
from collections import deque
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import occ
from .artifact import Artifact
from .dataset import FlowSet, MinMaxScaler, fit_scaler, stratified_folds
from .errors import BadConfig, MissingAttacks, MissingBenign, NotTrained, UnknownCategory
from .forest import ForestConfig, RandomForestModel, fit_forest
from .meta import MetaClassifier, ReptileConfig, TrainLog, train_meta_classifier
from .metrics import ClassReport, average_reports, classification_report
from .occ import OccConfig, OneClassModel
from .taxonomy import BENIGN, DEFAULT_TAXONOMY, Taxonomy

NORMAL = "Normal"
ATTACK = "Attack"
UNKNOWN = "UnknownAttack"
KNOWN = "Known"
UNKNOWN_SHORT = "Unknown"

ROOT, VERIFY, CATEGORY, SUBTYPE = "Root", "Verify", "Category", "Subtype"
STAGES = (ROOT, VERIFY, CATEGORY, SUBTYPE)

ROOT_KINDS = ("usfad", "lof", "iforest", "mlc", "sgd")
REGIMES = ("rf1", "rf2")
SUBTYPE_MODES = ("pooled", "per-category")


@dataclass(frozen=True)
class PipelineConfig:
    root: str = "usfad"
    verify: str = "usfad"
    regime: str = "rf1"
    subtype_mode: str = "pooled"
    occ: OccConfig = OccConfig()
    forest: ForestConfig = ForestConfig()
    reptile: ReptileConfig = ReptileConfig()

    def validate(self) -> None:
        if self.root not in ROOT_KINDS:
            raise BadConfig(f"root must be one of {ROOT_KINDS}, got {self.root!r}")
        if self.verify not in occ.KINDS:
            raise BadConfig(f"verify must be one of {occ.KINDS}, got {self.verify!r}")
        if self.regime not in REGIMES:
            raise BadConfig(f"regime must be one of {REGIMES}, got {self.regime!r}")
        if self.subtype_mode not in SUBTYPE_MODES:
            raise BadConfig(f"subtype mode must be one of {SUBTYPE_MODES}, got {self.subtype_mode!r}")
        self.forest.validate()
        self.reptile.validate()


@dataclass(frozen=True)
class Verdict:
    final: str
    stage: str
    raw: dict = field(default_factory=dict)
    corrected: bool = False
    degraded: bool = False

    def to_dict(self) -> dict:
        return {"final": self.final, "stage": self.stage, "raw": self.raw,
                "corrected": self.corrected, "degraded": self.degraded}

    @classmethod
    def from_dict(cls, d: dict) -> "Verdict":
        return cls(d["final"], d["stage"], dict(d.get("raw", {})), bool(d.get("corrected", False)),
                   bool(d.get("degraded", False)))


class Quarantine:
    """FIFO of unknown-attack records, optionally mirrored to an append-only NDJSON file.

    Appends are serialised by a lock; each file line is written and flushed
    in a single call.
    """

    def __init__(self, path: str | Path | None = None):
        self.path = Path(path) if path is not None else None
        self._items: deque = deque()
        self._lock = threading.Lock()
        self._next_id = 0

    def __len__(self) -> int:
        return len(self._items)

    def append(self, features: np.ndarray, verdict: Verdict, record_id: int | None = None) -> int:
        features = np.asarray(features, dtype=np.float64)
        with self._lock:
            rid = self._next_id if record_id is None else int(record_id)
            self._next_id = max(self._next_id, rid + 1)
            self._items.append((rid, features.copy(), verdict))
            if self.path is not None:
                line = json.dumps({"ts": time.time(), "id": rid, "features": features.tolist()})
                with open(self.path, "a", encoding="utf-8") as fh:
                    fh.write(line + "\n")
                    fh.flush()
        return rid

    def drain(self) -> list[tuple[np.ndarray, Verdict]]:
        with self._lock:
            out = [(f, v) for _, f, v in self._items]
            self._items.clear()
        return out


def root_decision(root, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(is_attack, score) for either root family."""
    if isinstance(root, OneClassModel):
        s = root.score(X)
        return s > root.threshold, s
    p = root.proba(X)
    return p[:, 1] >= p[:, 0], p[:, 1]


def upper_verdicts(category_clf: RandomForestModel, subtype_clfs, X: np.ndarray) -> list[Verdict]:
    """Category + subtype verdicts for rows already judged known attacks."""
    if len(X) == 0:
        return []
    cats, _ = category_clf.predict_batch(X)
    subs = np.empty(len(X), dtype=object)
    if isinstance(subtype_clfs, dict):
        for cat in set(cats.tolist()):
            rows = np.flatnonzero(cats == cat)
            subs[rows] = BENIGN if cat == BENIGN else subtype_clfs[cat].predict_batch(X[rows])[0]
    else:
        subs[:] = subtype_clfs.predict_batch(X)[0]
    out = []
    for c, s in zip(cats.tolist(), subs.tolist()):
        raw = {"category": c, "subtype": s}
        if c == BENIGN:
            out.append(Verdict(NORMAL, CATEGORY, raw, corrected=True))
        elif s == BENIGN:
            out.append(Verdict(NORMAL, SUBTYPE, raw, corrected=True))
        else:
            out.append(Verdict(s, SUBTYPE, raw))
    return out


def verify_decision(verify: OneClassModel, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(is_unknown, score)."""
    s = verify.score(X)
    return s > verify.threshold, s


@dataclass
class HidsPipeline:
    scaler: MinMaxScaler
    root: OneClassModel | MetaClassifier
    verify: OneClassModel
    category_clf: RandomForestModel
    subtype_clfs: RandomForestModel | dict[str, RandomForestModel]
    regime: str
    config: PipelineConfig = PipelineConfig()
    taxonomy: Taxonomy = field(default=DEFAULT_TAXONOMY, repr=False)
    quarantine: Quarantine = field(default_factory=Quarantine, repr=False)
    info: dict = field(default_factory=dict)

    @property
    def n_features(self) -> int:
        return self.scaler.n_features

    @property
    def root_kind(self) -> str:
        return self.root.kind

    # -- per-level steps (also used by the tier nodes) ---------------------------

    def root_step(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return root_decision(self.root, X)

    def verify_step(self, X: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        return verify_decision(self.verify, X)

    def upper_step(self, X: np.ndarray) -> list[Verdict]:
        return upper_verdicts(self.category_clf, self.subtype_clfs, X)

    # -- classification ---------------------------------------------------------

    def classify_batch(self, X: np.ndarray, raw_features: np.ndarray | None = None) -> list[Verdict]:
        """Verdicts for scaled rows ``X``; quarantine gets ``raw_features`` when given."""
        if self.root is None or self.verify is None or self.category_clf is None:
            raise NotTrained("pipeline has not been trained")
        X = np.atleast_2d(np.asarray(X, dtype=np.float64))
        if X.shape[0] == 0:
            return []
        attack, rscore = self.root_step(X)
        verdicts: list[Verdict | None] = [None] * len(X)
        for i in np.flatnonzero(~attack):
            verdicts[i] = Verdict(NORMAL, ROOT, {"root": NORMAL, "root_score": float(rscore[i])})
        up = np.flatnonzero(attack)
        unknown, vscore = self.verify_step(X[up])
        known_rows = up[~unknown]
        for v, i in zip(self.upper_step(X[known_rows]), known_rows):
            verdicts[i] = replace(v, raw={"root": ATTACK, "root_score": float(rscore[i]),
                                          "verify": KNOWN, **v.raw})
        for j in np.flatnonzero(unknown):
            i = up[j]
            verdicts[i] = Verdict(UNKNOWN, VERIFY, {"root": ATTACK, "root_score": float(rscore[i]),
                                                    "verify": UNKNOWN_SHORT, "verify_score": float(vscore[j])})
        # quarantine in input order so drains are FIFO
        for i in np.flatnonzero([v.final == UNKNOWN for v in verdicts]):
            self.quarantine.append(X[i] if raw_features is None else raw_features[i], verdicts[i])
        return verdicts

    def classify(self, x: np.ndarray, raw_features: np.ndarray | None = None) -> Verdict:
        x = np.asarray(x, dtype=np.float64)
        raw = None if raw_features is None else np.asarray(raw_features)[None, :]
        return self.classify_batch(x[None, :], raw)[0]

    def classify_raw(self, X_raw: np.ndarray) -> list[Verdict]:
        X_raw = np.atleast_2d(np.asarray(X_raw, dtype=np.float64))
        return self.classify_batch(self.scaler.transform(X_raw), X_raw)

    def drain_quarantine(self) -> list[tuple[np.ndarray, Verdict]]:
        return self.quarantine.drain()

    # -- persistence ------------------------------------------------------------

    def save(self, directory: str | Path, data_fingerprint: str | None = None) -> Path:
        out = Path(directory)
        out.mkdir(parents=True, exist_ok=True)
        hashes = {
            "scaler": self.scaler.to_artifact().save(out / "scaler.hids"),
            "root": self.root.to_artifact().save(out / "root.hids"),
            "verify": self.verify.to_artifact().save(out / "verify.hids"),
            "category": self.category_clf.to_artifact().save(out / "category.hids"),
        }
        if isinstance(self.subtype_clfs, dict):
            subtype_files = {}
            for i, (cat, model) in enumerate(self.subtype_clfs.items()):
                name = f"subtype-{i}.hids"
                hashes[f"subtype:{cat}"] = model.to_artifact().save(out / name)
                subtype_files[cat] = name
        else:
            hashes["subtype"] = self.subtype_clfs.to_artifact().save(out / "subtype.hids")
            subtype_files = "subtype.hids"
        manifest = {
            "format": 1,
            "regime": self.regime,
            "root_kind": self.root.kind,
            "verify_kind": self.verify.kind,
            "subtype_mode": self.config.subtype_mode,
            "subtype_files": subtype_files,
            "category_classes": list(self.category_clf.classes),
            "subtype_classes": ({c: list(m.classes) for c, m in self.subtype_clfs.items()}
                                if isinstance(self.subtype_clfs, dict) else list(self.subtype_clfs.classes)),
            "seeds": {"occ": self.config.occ.seed, "forest": self.config.forest.seed,
                      "reptile": self.config.reptile.seed},
            "config": _config_dict(self.config),
            "scaler_fingerprint": self.scaler.fingerprint(),
            "data_fingerprint": data_fingerprint,
            "taxonomy": self.taxonomy.to_text(),
            "info": self.info,
            "sha256": hashes,
        }
        (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return out

    @classmethod
    def load(cls, directory: str | Path, quarantine_path: str | Path | None = None) -> "HidsPipeline":
        d = Path(directory)
        manifest = load_manifest(d)
        scaler = MinMaxScaler.from_artifact(Artifact.load(d / "scaler.hids"))
        return cls(scaler, load_root(d / "root.hids"), OneClassModel.from_artifact(Artifact.load(d / "verify.hids")),
                   RandomForestModel.from_artifact(Artifact.load(d / "category.hids")),
                   load_subtypes(d, manifest), manifest["regime"], config_from_dict(manifest["config"]),
                   Taxonomy.from_text(manifest["taxonomy"]), Quarantine(quarantine_path), manifest.get("info", {}))


def load_manifest(directory: str | Path) -> dict:
    path = Path(directory) / "manifest.json"
    if not path.is_file():
        raise NotTrained(f"no pipeline bundle at {directory} (manifest.json missing)")
    return json.loads(path.read_text(encoding="utf-8"))


def load_root(path: str | Path) -> OneClassModel | MetaClassifier:
    art = Artifact.load(path)
    if art.kind.startswith("meta"):
        return MetaClassifier.from_artifact(art)
    return OneClassModel.from_artifact(art)


def load_subtypes(directory: Path, manifest: dict):
    files = manifest["subtype_files"]
    if isinstance(files, dict):
        return {c: RandomForestModel.from_artifact(Artifact.load(directory / f)) for c, f in files.items()}
    return RandomForestModel.from_artifact(Artifact.load(directory / files))


def _config_dict(config: PipelineConfig) -> dict:
    return asdict(config)


def config_from_dict(d: dict) -> PipelineConfig:
    return PipelineConfig(root=d["root"], verify=d["verify"], regime=d["regime"], subtype_mode=d["subtype_mode"],
                          occ=OccConfig(**d["occ"]), forest=ForestConfig(**d["forest"]),
                          reptile=ReptileConfig(**d["reptile"]))


# -- training -----------------------------------------------------------------


def _present(order: list[str], labels: np.ndarray) -> list[str]:
    have = set(labels.tolist())
    return [c for c in order if c in have]


def train_pipeline(flows: FlowSet, config: PipelineConfig = PipelineConfig(),
                   quarantine_path: str | Path | None = None, log: TrainLog | None = None) -> HidsPipeline:
    """Fit every level on raw ``flows`` (the scaler is fitted here)."""
    config.validate()
    benign = flows.is_benign
    if not benign.any():
        raise MissingBenign("training data has no Benign records")
    if benign.all():
        raise MissingAttacks("training data has no attack records")
    scaler = fit_scaler(flows)
    X = scaler.transform(flows.features)
    tax = flows.taxonomy
    info: dict = {"n_train": len(flows)}

    if config.root in occ.KINDS:
        root = occ.fit(config.root, X[benign], config.occ)
        info["root_samples"] = int(benign.sum())
    else:
        root = train_meta_classifier(flows, X, config.root, config.reptile, log=log)
        info["root_samples"] = root.samples_used
        info["root_tasks"] = root.tasks
    info["root_data_fraction"] = info["root_samples"] / len(flows)

    verify = occ.fit(config.verify, X[~benign], replace(config.occ, seed=config.occ.seed + 1))

    rows = np.arange(len(flows)) if config.regime == "rf1" else np.flatnonzero(~benign)
    cats = flows.category[rows]
    category_clf = fit_forest(X[rows], cats, config.forest, classes=_present(tax.categories, cats))
    if config.subtype_mode == "pooled":
        subs = flows.subcategory[rows]
        subtype = fit_forest(X[rows], subs, config.forest, classes=_present(tax.subcategories, subs))
    else:
        subtype = {}
        for cat in _present(tax.categories, cats):
            if cat == BENIGN:
                continue
            r = np.flatnonzero((flows.category == cat) | (benign if config.regime == "rf1" else False))
            subs = flows.subcategory[r]
            subtype[cat] = fit_forest(X[r], subs, config.forest, classes=_present(tax.subcategories, subs))
    return HidsPipeline(scaler, root, verify, category_clf, subtype, config.regime, config, tax,
                        Quarantine(quarantine_path), info)


# -- evaluation -----------------------------------------------------------------


def _binary_truth(flows: FlowSet) -> np.ndarray:
    return np.where(flows.is_benign, NORMAL, ATTACK).astype(object)


def _final_truth(flows: FlowSet) -> np.ndarray:
    return np.where(flows.is_benign, NORMAL, flows.subcategory).astype(object)


@dataclass
class EvalResult:
    reports: dict[str, ClassReport]
    folds: int
    extras: dict = field(default_factory=dict)

    def to_dict(self) -> dict:
        return {"folds": self.folds, "reports": {k: v.to_dict() for k, v in self.reports.items()},
                **self.extras}

    def to_text(self) -> str:
        return "\n\n".join(r.to_text(title=name) for name, r in self.reports.items()) + "\n"


def evaluate_fold(pipe: HidsPipeline, test: FlowSet) -> dict[str, ClassReport]:
    """Per-level reports for one held-out set.

    "full" level reports run the level's classifier on every test record;
    "routed" ones only on records the levels below actually passed up.
    """
    X = pipe.scaler.transform(test.features)
    tax = pipe.taxonomy
    attack, _ = pipe.root_step(X)
    out = {"root": classification_report(_binary_truth(test), np.where(attack, ATTACK, NORMAL),
                                         classes=[NORMAL, ATTACK])}
    unknown = np.zeros(len(X), dtype=bool)
    up = np.flatnonzero(attack)
    unknown[up] = pipe.verify_step(X[up])[0]
    routed = attack & ~unknown

    cat_pred, _ = pipe.category_clf.predict_batch(X)
    cat_classes = [c for c in tax.categories]
    out["category_full"] = classification_report(test.category, cat_pred, classes=_present(cat_classes,
                                                 np.concatenate([test.category, cat_pred])))
    if routed.any():
        out["category_routed"] = classification_report(test.category[routed], cat_pred[routed])

    upper = pipe.upper_step(X)
    sub_pred = np.array([v.raw["subtype"] for v in upper], dtype=object)
    out["subtype_full"] = classification_report(test.subcategory, sub_pred, classes=_present(
        tax.subcategories, np.concatenate([test.subcategory, sub_pred])))
    if routed.any():
        out["subtype_routed"] = classification_report(test.subcategory[routed], sub_pred[routed])

    quarantine = pipe.quarantine
    pipe.quarantine = Quarantine()  # keep evaluation from piling up the caller's queue
    try:
        final = np.array([v.final for v in pipe.classify_batch(X)], dtype=object)
    finally:
        pipe.quarantine = quarantine
    out["end_to_end"] = classification_report(_final_truth(test), final)
    return out


def eval_cv10(flows: FlowSet, config: PipelineConfig = PipelineConfig(), n_folds: int = 10,
              seed: int = 0) -> EvalResult:
    folds = stratified_folds(flows, n_folds, seed)
    per: dict[str, list[ClassReport]] = {}
    for k in range(n_folds):
        train_idx, test_idx = folds.split(k)
        pipe = train_pipeline(flows.subset(train_idx), config)
        for name, rep in evaluate_fold(pipe, flows.subset(test_idx)).items():
            per.setdefault(name, []).append(rep)
    return EvalResult({name: average_reports(reps) for name, reps in per.items()}, n_folds)


def eval_zero_day(flows: FlowSet, holdout_category: str, config: PipelineConfig = PipelineConfig(),
                  n_folds: int = 10, seed: int = 0) -> EvalResult:
    """Leave-one-category-out known/unknown evaluation of the verify level.

    Attack records are split into stratified folds; verify is fitted on the
    training-fold attacks of every category except the holdout. The test fold
    labels the holdout's records Unknown and every other attack Known.
    """
    tax = flows.taxonomy
    attacks = flows.subset(np.flatnonzero(~flows.is_benign))
    if holdout_category == BENIGN or holdout_category not in set(attacks.category.tolist()):
        raise UnknownCategory(holdout_category)
    if set(attacks.category.tolist()) == {holdout_category}:
        raise UnknownCategory(holdout_category)
    config.validate()
    folds = stratified_folds(attacks, n_folds, seed)
    train_idx, test_idx = folds.split(0)
    # scaling statistics come from rows outside the test fold, as in cv10
    scaler = fit_scaler(np.vstack([flows.features[flows.is_benign], attacks.features[train_idx]]))
    X = scaler.transform(attacks.features)
    fit_rows = train_idx[attacks.category[train_idx] != holdout_category]
    verify = occ.fit(config.verify, X[fit_rows], replace(config.occ, seed=config.occ.seed + 1))
    is_holdout = attacks.category[test_idx] == holdout_category
    truth = np.where(is_holdout, UNKNOWN_SHORT, KNOWN)
    pred = np.where(verify.is_anomalous(X[test_idx]), UNKNOWN_SHORT, KNOWN)
    rep = classification_report(truth, pred, classes=[KNOWN, UNKNOWN_SHORT])
    extras = {"holdout": holdout_category, "n_test": int(len(test_idx)), "n_unknown": int(is_holdout.sum()),
              "categories": [c for c in tax.categories if c != BENIGN]}
    return EvalResult({f"zeroday:{holdout_category}": rep}, 1, extras)
