"""Root network, Reptile and the SGD baseline."""

from __future__ import annotations

import csv

import numpy as np
import pytest

from hids.artifact import Artifact
from hids.dataset import Episode, fit_scaler
from hids.errors import BadConfig, DimensionMismatch, EmptyFamily
from hids.meta import (ATTACK, NORMAL, MetaClassifier, MlpParams, ReptileConfig, TaskFamily, TrainLog, forward,
                       interpolate, loss, mlc_predict, reptile_train, sgd_baseline_train, sgd_steps,
                       train_meta_classifier)
from hids.synthetic import generate


def _episode(rng, name="t", n=64, d=3):
    X = rng.normal(size=(n, d))
    y = (X[:, 0] > 0).astype(np.int64)
    return Episode(name, np.arange(n), X, y)


def test_flat_round_trip_and_shapes():
    p = MlpParams.xavier(5, np.random.default_rng(0), hidden=7)
    back = MlpParams.from_flat(p.flat(), 5, 7)
    assert all(np.array_equal(a, b) for a, b in zip(p.blocks().values(), back.blocks().values()))
    assert p.flat().size == 5 * 7 + 7 + 7 * 2 + 2


def test_forward_is_a_distribution_and_zero_params_are_uniform():
    p = MlpParams.zeros(4)
    P = forward(p, np.random.default_rng(0).normal(size=(6, 4)))
    assert np.allclose(P, 0.5)
    assert loss(p, np.zeros((3, 4)), np.array([0, 1, 1])) == pytest.approx(np.log(2))
    q = MlpParams.xavier(4, np.random.default_rng(1))
    assert np.allclose(forward(q, np.ones((2, 4))).sum(axis=1), 1.0)


def test_mlc_predict_ties_to_attack_and_checks_width():
    p = MlpParams.zeros(3)
    assert mlc_predict(p, np.zeros(3)) == ATTACK
    p.b2[:] = [1.0, 0.0]
    assert mlc_predict(p, np.zeros(3)) == NORMAL
    with pytest.raises(DimensionMismatch):
        mlc_predict(p, np.zeros(4))


def test_sgd_steps_reduce_episode_loss():
    rng = np.random.default_rng(0)
    ep = _episode(rng)
    p0 = MlpParams.xavier(3, rng)
    p1 = sgd_steps(p0, ep, 50, 0.2, 16, np.random.default_rng(1))
    assert loss(p1, ep.features, ep.labels) < loss(p0, ep.features, ep.labels)


def test_interpolate_edges_exact():
    rng = np.random.default_rng(0)
    a, b = rng.normal(size=10), rng.normal(size=10)
    assert np.array_equal(interpolate(a, b, 0.0), a)
    assert np.array_equal(interpolate(a, b, 1.0), b)


def test_family_needs_two_tasks():
    rng = np.random.default_rng(0)
    with pytest.raises(EmptyFamily):
        TaskFamily([_episode(rng)])


def test_config_validation():
    for bad in (ReptileConfig(meta_lr=1.5), ReptileConfig(meta_lr=-0.1), ReptileConfig(inner_steps=0),
                ReptileConfig(batch_size=0)):
        with pytest.raises(BadConfig):
            bad.validate()


def test_reptile_log_matches_step_norm_identity_and_anneal(tmp_path):
    rng = np.random.default_rng(0)
    fam = TaskFamily([_episode(rng, "a"), _episode(rng, "b")])
    log = TrainLog()
    cfg = ReptileConfig(iterations=20, anneal=True)
    reptile_train(fam, cfg, log=log)
    assert len(log.rows) == 20
    for r in log.rows:
        assert r["step_norm"] == pytest.approx(r["expected_step_norm"], rel=1e-9, abs=1e-15)
    lrs = [r["meta_lr"] for r in log.rows]
    assert lrs[0] == cfg.meta_lr and all(x > y for x, y in zip(lrs, lrs[1:]))
    path = tmp_path / "log.csv"
    log.write_csv(path)
    rows = list(csv.DictReader(path.open()))
    assert len(rows) == 20 and rows[0]["task"] in ("a", "b")


def test_training_is_deterministic():
    rng = np.random.default_rng(0)
    fam = TaskFamily([_episode(rng, "a"), _episode(rng, "b")])
    cfg = ReptileConfig(iterations=10)
    assert np.array_equal(reptile_train(fam, cfg).flat(), reptile_train(fam, cfg).flat())
    assert np.array_equal(sgd_baseline_train(fam, cfg).flat(), sgd_baseline_train(fam, cfg).flat())


def test_meta_classifier_separates_synthetic_and_round_trips():
    flows = generate(6000, seed=0)
    X = fit_scaler(flows).transform(flows.features)
    for kind in ("mlc", "sgd"):
        clf = train_meta_classifier(flows, X, kind, ReptileConfig(iterations=100))
        acc = np.mean(clf.is_attack(X) == ~flows.is_benign)
        assert acc > 0.97, (kind, acc)
        assert 0 < clf.data_fraction < 1 and clf.samples_used <= 256 * len(clf.tasks)
        back = MetaClassifier.from_artifact(Artifact.from_bytes(clf.to_artifact().to_bytes()))
        assert back.kind == kind and np.array_equal(back.proba(X[:50]), clf.proba(X[:50]))
    with pytest.raises(BadConfig):
        train_meta_classifier(flows, X, "adam")
