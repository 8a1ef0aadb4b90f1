"""Command-line entry points and run configuration."""

from __future__ import annotations

import json

import pytest

from hids.cli import main
from hids.config import RunConfig
from hids.errors import ConfigError

SMALL = ["--set", "synthetic_records=3000", "--set", "folds=2", "--set", "n_trees=3", "--set", "occ_trees=10"]


def test_config_file_and_overrides(tmp_path):
    p = tmp_path / "run.conf"
    p.write_text("# comment\nroot = mlc\nmeta_lr = 0.5\nanneal = yes\nn_trees=7\n")
    cfg = RunConfig.from_file(p, {"n-trees": "9"})
    assert (cfg.root, cfg.meta_lr, cfg.anneal, cfg.n_trees) == ("mlc", 0.5, True, 9)
    assert RunConfig.from_file(_write(tmp_path, cfg.to_text())) == cfg
    with pytest.raises(ConfigError):
        RunConfig().updated({"colour": "red"})
    with pytest.raises(ConfigError):
        RunConfig().updated({"n_trees": "many"})
    with pytest.raises(ConfigError):
        RunConfig.from_file(_write(tmp_path, "just words\n"))
    with pytest.raises(ConfigError):
        RunConfig(quantile=1.0).pipeline_config()


def _write(tmp_path, text):
    p = tmp_path / "other.conf"
    p.write_text(text)
    return p


def test_exit_codes(tmp_path, capsys):
    assert main(["train", "--set", "colour=red"]) == 2
    assert main(["train", "--config", str(tmp_path / "none.conf")]) == 2
    assert main(["eval", "--protocol", "bogus", *SMALL, "--reports", str(tmp_path)]) == 2
    assert main(["eval", "--protocol", "zeroday:Benign", *SMALL, "--reports", str(tmp_path)]) == 1
    assert main(["serve", "--role", "cloud", "--bundle", str(tmp_path / "nothing")]) == 1
    assert main(["replay", "x.csv", "--target", "127.0.0.1:1", "--rate", "0"]) == 0
    err = capsys.readouterr().err
    assert "unknown config key" in err and "UnknownCategory" in err and "NotTrained" in err


def test_synth_ingest_train(tmp_path, capsys):
    assert main(["synth", "--out", str(tmp_path / "d"), "--records", "2500"]) == 0
    csv_path = tmp_path / "d" / "synthetic.csv"
    assert main(["ingest", str(csv_path), "--schema", str(tmp_path / "d" / "synthetic.schema"),
                 "--out", str(tmp_path / "flows.hids")]) == 0
    out = capsys.readouterr().out
    assert "Benign" in out and "sha256" in out
    bundle = tmp_path / "b"
    assert main(["train", "--data", str(tmp_path / "flows.hids"), "--artifacts", str(bundle),
                 "--set", "n_trees=3", "--set", "occ_trees=10"]) == 0
    assert (bundle / "manifest.json").is_file() and (bundle / "run.conf").is_file()
    assert "data fraction" in capsys.readouterr().out


def test_eval_reports_are_byte_identical_across_runs(tmp_path):
    runs = []
    for name in ("a", "b"):
        rep = tmp_path / name
        assert main(["eval", "--protocol", "cv10", *SMALL, "--reports", str(rep)]) == 0
        runs.append(((rep / "cv10.txt").read_bytes(), (rep / "cv10.json").read_bytes()))
    assert runs[0] == runs[1]
    payload = json.loads(runs[0][1])
    assert payload["folds"] == 2 and "end_to_end" in payload["reports"]


def test_zero_day_all_writes_mean(tmp_path):
    assert main(["eval", "--protocol", "zeroday:all", *SMALL, "--reports", str(tmp_path)]) == 0
    payload = json.loads((tmp_path / "zeroday_all.json").read_text())
    assert set(payload["holdouts"]) == {"Spoofing", "Recon", "MQTT", "DoS", "DDoS"} and "mean" in payload
