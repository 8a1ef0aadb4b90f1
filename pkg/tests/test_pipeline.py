"""Routing, quarantine, bundles and evaluation drivers."""

from __future__ import annotations

import json

import numpy as np
import pytest

from hids.dataset import fit_scaler
from hids.errors import BadConfig, MissingAttacks, MissingBenign, NotTrained, UnknownCategory
from hids.forest import ForestConfig
from hids.occ import OccConfig
from hids.pipeline import (ATTACK, CATEGORY, NORMAL, ROOT, SUBTYPE, UNKNOWN, VERIFY, HidsPipeline, PipelineConfig,
                           Quarantine, Verdict, eval_cv10, eval_zero_day, train_pipeline, upper_verdicts)
from hids.synthetic import generate


class _Root:
    """Attack iff column 0 > 0."""

    kind = "stub"

    def proba(self, X):
        a = (X[:, 0] > 0).astype(float)
        return np.column_stack([1 - a, a])


class _Verify:
    kind = "stub"
    threshold = 0.5

    def score(self, X):
        return (X[:, 1] > 0).astype(float)  # unknown iff column 1 > 0


class _Forest:
    def __init__(self, col, labels):
        self.col, self.labels = col, labels

    def predict_batch(self, X):
        idx = X[:, self.col].astype(int)
        return np.array([self.labels[i] for i in idx], dtype=object), None


def _stub_pipeline(quarantine=None):
    cat = _Forest(2, ["Benign", "DDoS"])
    sub = _Forest(3, ["Benign", "DDoS SYN"])
    return HidsPipeline(fit_scaler(np.zeros((2, 4))), _Root(), _Verify(), cat, sub, "rf1",
                        quarantine=Quarantine() if quarantine is None else quarantine)


def test_hand_routed_examples():
    pipe = _stub_pipeline()
    X = np.array([
        [-1, 0, 0, 0],   # root: normal
        [1, 1, 0, 0],    # verify: unknown
        [1, -1, 1, 1],   # known attack, named
        [1, -1, 0, 0],   # category forest says Benign -> corrected
        [1, -1, 1, 0],   # subtype forest says Benign -> corrected
    ], dtype=float)
    v = pipe.classify_batch(X)
    assert [(x.final, x.stage, x.corrected) for x in v] == [
        (NORMAL, ROOT, False), (UNKNOWN, VERIFY, False), ("DDoS SYN", SUBTYPE, False),
        (NORMAL, CATEGORY, True), (NORMAL, SUBTYPE, True)]
    assert v[2].raw["root"] == ATTACK and v[2].raw["category"] == "DDoS"
    assert pipe.classify(X[1]).final == UNKNOWN


def test_quarantine_fifo_and_file(tmp_path):
    path = tmp_path / "q.ndjson"
    pipe = _stub_pipeline(Quarantine(path))
    X = np.array([[1, 1, 0, float(i)] for i in range(5)])
    pipe.classify_batch(X[:3])
    pipe.classify_batch(X[3:])
    drained = pipe.drain_quarantine()
    assert [f[3] for f, _ in drained] == [0, 1, 2, 3, 4]
    assert all(v.final == UNKNOWN for _, v in drained)
    assert pipe.drain_quarantine() == []
    lines = [json.loads(s) for s in path.read_text().splitlines()]
    assert [ln["id"] for ln in lines] == [0, 1, 2, 3, 4] and lines[4]["features"] == X[4].tolist()
    assert set(lines[0]) == {"ts", "id", "features"}


def test_per_category_subtypes_pass_benign_through():
    subs = {"DDoS": _Forest(3, ["DDoS SYN", "DDoS UDP"])}
    v = upper_verdicts(_Forest(2, ["Benign", "DDoS"]), subs, np.array([[0, 0, 0, 0], [0, 0, 1, 1.0]]))
    assert v[0].final == NORMAL and v[0].stage == CATEGORY and v[1].final == "DDoS UDP"
    assert upper_verdicts(None, None, np.zeros((0, 4))) == []


def test_verdict_dict_round_trip():
    v = Verdict("DoS SYN", SUBTYPE, {"category": "DoS"}, corrected=False, degraded=True)
    assert Verdict.from_dict(json.loads(json.dumps(v.to_dict()))) == v


def test_untrained_and_bad_inputs(tmp_path):
    pipe = _stub_pipeline()
    pipe.root = None
    with pytest.raises(NotTrained):
        pipe.classify_batch(np.zeros((1, 4)))
    with pytest.raises(NotTrained):
        HidsPipeline.load(tmp_path)
    flows = generate(2000, seed=0)
    with pytest.raises(MissingBenign):
        train_pipeline(flows.subset(np.flatnonzero(~flows.is_benign)))
    with pytest.raises(MissingAttacks):
        train_pipeline(flows.subset(np.flatnonzero(flows.is_benign)))
    with pytest.raises(BadConfig):
        train_pipeline(flows, PipelineConfig(regime="rf3"))


def test_bundle_round_trip_is_identical(trained, tmp_path):
    pipe, bundle, test = trained
    back = HidsPipeline.load(bundle)
    X = pipe.scaler.transform(test.features[:500])
    assert [v.to_dict() for v in back.classify_batch(X)] == [v.to_dict() for v in pipe.classify_batch(X)]
    pipe.drain_quarantine()
    manifest = json.loads((bundle / "manifest.json").read_text())
    assert manifest["scaler_fingerprint"] == pipe.scaler.fingerprint()
    assert set(manifest["sha256"]) == {"scaler", "root", "verify", "category", "subtype"}


def test_per_category_mode_trains_and_round_trips(tmp_path):
    flows = generate(6000, seed=0)
    cfg = PipelineConfig(regime="rf2", subtype_mode="per-category", forest=ForestConfig(n_trees=5))
    pipe = train_pipeline(flows, cfg)
    assert isinstance(pipe.subtype_clfs, dict) and "Benign" not in pipe.category_clf.classes
    pipe.save(tmp_path)
    back = HidsPipeline.load(tmp_path)
    X = pipe.scaler.transform(flows.features[:300])
    assert [v.final for v in back.classify_batch(X)] == [v.final for v in pipe.classify_batch(X)]


def test_cv10_on_separable_data_is_perfect():
    flows = generate(6000, seed=0, spread=0.01)
    cfg = PipelineConfig(root="mlc", forest=ForestConfig(n_trees=30), occ=OccConfig(n_trees=30))
    res = eval_cv10(flows, cfg, n_folds=3)
    for level in ("root", "category_full", "category_routed", "subtype_full", "subtype_routed"):
        assert res.reports[level].accuracy == 100.0, level
    # verify is calibrated to flag the top 1% of known attacks, so end to end sits just below 100
    assert res.reports["end_to_end"].accuracy > 98.0
    assert set(res.to_dict()["reports"]) >= {"root", "category_full", "subtype_full", "end_to_end"}
    assert "root" in res.to_text()


def test_zero_day_rejects_bad_holdouts():
    flows = generate(3000, seed=0)
    with pytest.raises(UnknownCategory):
        eval_zero_day(flows, "Benign")
    with pytest.raises(UnknownCategory):
        eval_zero_day(flows, "Nope")
    only = flows.subset(np.flatnonzero(flows.is_benign | (flows.category == "DDoS")))
    with pytest.raises(UnknownCategory):
        eval_zero_day(only, "DDoS")
