"""Metrics, forests and one-class detectors."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hids import occ
from hids.artifact import Artifact
from hids.errors import BadConfig, BadQuantile, DimensionMismatch, EmptyInput, EmptyScores, LengthMismatch
from hids.forest import ForestConfig, Leaf, RandomForestModel, Split, fit_forest, fit_tree
from hids.metrics import average_reports, classification_report, confusion

from oracles import lof_brute

# -- metrics -------------------------------------------------------------------------


def test_report_known_values():
    rep = classification_report(["a", "a", "b", "b"], ["a", "b", "b", "b"])
    assert rep.accuracy == 75.0
    assert rep.row("a") == {"precision": 100.0, "recall": 50.0, "f1": pytest.approx(200 / 3), "support": 2.0}
    assert rep.row("b")["precision"] == pytest.approx(200 / 3)


def test_absent_predicted_class_scores_zero_not_nan():
    rep = classification_report(["Benign", "DoS"], ["DoS", "DoS"], classes=["Benign", "DoS"])
    assert rep.row("Benign") == {"precision": 0.0, "recall": 0.0, "f1": 0.0, "support": 1.0}
    assert "0.00" in rep.to_text()


def test_confusion_errors_and_extra_labels():
    with pytest.raises(LengthMismatch):
        confusion(["a"], ["a", "b"])
    with pytest.raises(LengthMismatch):
        confusion([], [])
    cm = confusion(["a", "z"], ["a", "q"], classes=["a"])
    assert cm.classes == ("a", "q", "z") and cm.total == 2


def test_average_reports_per_class_over_folds_that_have_it():
    r1 = classification_report(["a", "b"], ["a", "b"])
    r2 = classification_report(["a", "a"], ["a", "b"])
    avg = average_reports([r1, r2])
    assert avg.accuracy == 75.0
    assert avg.row("a")["recall"] == pytest.approx(75.0)


# -- forests -------------------------------------------------------------------------


def test_tree_finds_single_midpoint_split():
    X = np.array([[0.0], [1.0], [2.0], [3.0]])
    tree = fit_tree(X, ["n", "n", "y", "y"], ForestConfig(max_features=1))
    root = tree.root
    assert isinstance(root, Split) and root.feature == 0 and root.threshold == 1.5
    assert isinstance(root.left, Leaf) and isinstance(root.right, Leaf)


def test_pure_node_is_a_leaf():
    tree = fit_tree(np.random.default_rng(0).normal(size=(10, 3)), ["x"] * 10)
    assert isinstance(tree.root, Leaf) and tree.n_nodes == 1


def test_forest_is_deterministic_and_round_trips():
    rng = np.random.default_rng(0)
    X = rng.normal(size=(400, 5))
    y = np.where(X[:, 0] + X[:, 1] > 0, "p", "q")
    cfg = ForestConfig(n_trees=7, seed=3)
    a, b = fit_forest(X, y, cfg), fit_forest(X, y, cfg)
    assert np.array_equal(a.predict_proba(X), b.predict_proba(X))
    back = RandomForestModel.from_artifact(Artifact.from_bytes(a.to_artifact().to_bytes()))
    assert np.array_equal(back.predict_proba(X), a.predict_proba(X))
    assert (a.predict_batch(X)[0] == y).mean() > 0.95
    label, proba = a.predict(X[0])
    assert label in ("p", "q") and proba.sum() == pytest.approx(1.0)


def test_forest_ties_go_to_first_class():
    X = np.zeros((4, 2))
    model = fit_forest(X, ["b", "a", "b", "a"], ForestConfig(n_trees=3, bootstrap=False), classes=["b", "a"])
    assert model.predict_batch(X)[0].tolist() == ["b"] * 4


def test_forest_validation():
    X = np.zeros((3, 2))
    with pytest.raises(BadConfig):
        fit_forest(X, ["a"] * 3, ForestConfig(max_features=5))
    with pytest.raises(BadConfig):
        fit_forest(X, ["a"] * 3, ForestConfig(n_trees=0))
    with pytest.raises(EmptyInput):
        fit_forest(np.zeros((0, 2)), [], ForestConfig())
    model = fit_forest(X, ["a", "b", "a"], ForestConfig(n_trees=2))
    with pytest.raises(DimensionMismatch):
        model.predict_proba(np.zeros((1, 3)))


def test_max_depth_limits_tree():
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 3))
    y = rng.integers(0, 2, 200).astype(str)
    stump = fit_tree(X, y, ForestConfig(max_depth=1))
    assert stump.n_nodes == 3


# -- one-class -------------------------------------------------------------------------


def test_average_path_length_values():
    assert occ.average_path_length(0) == 0.0 and occ.average_path_length(1) == 0.0
    assert occ.average_path_length(2) == 1.0
    assert occ.average_path_length(256) == pytest.approx(2 * (math.log(255) + 0.5772156649) - 2 * 255 / 256,
                                                         rel=1e-3)


@pytest.mark.parametrize("kind", occ.KINDS)
def test_outliers_score_higher_and_threshold_separates(kind):
    rng = np.random.default_rng(0)
    X = rng.normal(size=(1500, 4)) * 0.05 + 0.5
    model = occ.fit(kind, X, occ.OccConfig(n_trees=50))
    far = np.full((20, 4), 3.0)
    assert model.score(far).min() > model.score(X[:200]).max() * 0.999
    assert model.is_anomalous(far).all()
    assert model.is_anomalous(X).mean() < 0.05
    assert model.predict(far[0]) == occ.ANOMALOUS and model.predict(np.full(4, 0.5)) == occ.IN_CLASS
    back = occ.OneClassModel.from_artifact(Artifact.from_bytes(model.to_artifact().to_bytes()))
    assert np.array_equal(back.score(far), model.score(far)) and back.threshold == model.threshold


def test_iforest_score_bounds_and_depth():
    rng = np.random.default_rng(2)
    m = occ.IsolationForestModel.fit(rng.normal(size=(600, 3)), occ.OccConfig(n_trees=20))
    assert m.psi == 256 and m.max_depth == 8
    s = m.score(rng.normal(size=(100, 3)) * 4)
    assert ((s > 0) & (s < 1)).all()
    assert (m.path_length(rng.normal(size=(50, 3))) <= m.max_depth + occ.average_path_length(256)).all()


def test_usfad_scores_in_unit_interval_and_grow_outside_the_range():
    rng = np.random.default_rng(3)
    m = occ.UsfadForest.fit(rng.uniform(size=(500, 2)), occ.OccConfig(n_trees=30))
    inside = m.score(rng.uniform(0.2, 0.8, size=(50, 2)))
    outside = m.score(np.array([[1.5, 0.5], [3.0, 0.5], [30.0, 0.5]]))
    assert ((inside >= 0) & (inside < 1)).all() and (outside < 1).all()
    assert outside[0] > inside.max()
    assert outside[0] < outside[1] < outside[2]  # no saturation at the top


def test_usfad_and_iforest_monotone_outside_range_1d():
    X = np.random.default_rng(4).uniform(size=(400, 1))
    grid = np.linspace(1.0, 5.0, 30)[:, None]
    for kind in ("usfad", "iforest"):
        det = occ.fit(kind, X, occ.OccConfig(n_trees=40)).detector
        s = det.score(grid)
        assert (np.diff(s) >= -1e-12).all(), kind
        assert s.min() >= det.score(np.array([[0.5]]))[0]


def test_calibrate_quantile_semantics():
    assert occ.calibrate([1.0, 2.0, 3.0, 4.0], 0.5) == 2.5
    with pytest.raises(EmptyScores):
        occ.calibrate([], 0.9)
    with pytest.raises(BadQuantile):
        occ.calibrate([1.0], 1.0)
    with pytest.raises(BadQuantile):
        occ.calibrate([1.0], 0.0)


@settings(max_examples=30, deadline=None)
@given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=200), st.floats(0.01, 0.99))
def test_calibrated_threshold_flags_at_most_the_tail(scores, q):
    t = occ.calibrate(scores, q)
    frac = np.mean(np.asarray(scores) > t)
    assert frac <= 1 - q + 1.0 / len(scores) + 1e-12


def test_lof_ties_and_duplicates_match_oracle_relatively():
    rng = np.random.default_rng(7)
    for _ in range(10):
        P = np.round(rng.normal(size=(60, 2)) * 2, 0)  # many exact ties and duplicates
        Q = np.vstack([np.round(rng.normal(size=(10, 2)) * 2, 0), P[:3]])
        model = occ.LofModel.fit(P, occ.OccConfig(k=5))
        train, novel = lof_brute(P, Q, 5)
        assert np.allclose(model.training_scores, train, rtol=1e-12, atol=1e-9)
        assert np.allclose(model.score(Q), novel, rtol=1e-12, atol=1e-9)


def test_lof_guards():
    with pytest.raises(BadConfig):
        occ.LofModel.fit(np.zeros((5, 2)), occ.OccConfig(k=5))
    with pytest.raises(BadConfig):
        occ.fit("svm", np.zeros((10, 2)))
    with pytest.raises(EmptyInput):
        occ.fit("usfad", np.zeros((2, 2)))
    m = occ.fit("lof", np.random.default_rng(0).normal(size=(50, 2)), occ.OccConfig(k=3))
    with pytest.raises(DimensionMismatch):
        m.score(np.zeros((1, 3)))
