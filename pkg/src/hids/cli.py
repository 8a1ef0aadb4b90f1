"""``hids`` command line: synth, ingest, train, eval, serve, replay.

Exit codes: 0 success, 1 runtime failure, 2 usage or configuration error.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys
import time
from pathlib import Path

import numpy as np

from . import synthetic
from .config import SYNTHETIC, RunConfig
from .dataset import FlowSet, Schema, load_ciciomt_dir, load_csv
from .errors import ConfigError, HidsError
from .metrics import average_reports
from .meta import TrainLog
from .pipeline import HidsPipeline, eval_cv10, eval_zero_day, train_pipeline
from .taxonomy import BENIGN


def load_data(path: str, schema: str = "", seed: int = 0, n_synthetic: int = synthetic.DEFAULT_RECORDS) -> FlowSet:
    """FlowSet from a CSV (+ schema), a dataset artifact, a CICIoMT2024 directory or "synthetic"."""
    if path == SYNTHETIC:
        return synthetic.generate(n_synthetic, seed)
    p = Path(path)
    if p.is_dir():
        return load_ciciomt_dir(p)
    if not p.exists():
        raise ConfigError(f"data file not found: {path}")
    if p.suffix == ".csv":
        schema_path = Path(schema) if schema else p.with_suffix(".schema")
        return load_csv(p, Schema.from_file(schema_path))
    return FlowSet.load(p)


def distribution_table(flows: FlowSet) -> str:
    rows = flows.distribution("subcategory")
    width = max([len("Class")] + [len(r[0]) for r in rows])
    lines = [f"{'Class':<{width}}  {'Records':>10}  {'Percentage':>10}"]
    lines += [f"{c:<{width}}  {n:>10d}  {pct:>10.2f}" for c, n, pct in rows]
    lines.append(f"{'Total':<{width}}  {len(flows):>10d}  {sum(r[2] for r in rows):>10.2f}")
    return "\n".join(lines) + "\n"


def _run_config(args) -> RunConfig:
    overrides = {}
    for item in args.set or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        overrides[k] = v
    for key in ("data", "schema", "root", "verify", "regime", "subtype_mode", "seed", "artifacts", "reports",
                "quarantine"):
        v = getattr(args, key, None)
        if v is not None:
            overrides[key] = str(v)
    base = RunConfig.from_file(args.config) if args.config else RunConfig()
    return base.updated(overrides)


# -- subcommands ------------------------------------------------------------------


def cmd_synth(args) -> int:
    csv_path, schema_path = synthetic.write_bundle(args.out, args.records, args.seed)
    print(f"wrote {csv_path} and {schema_path} ({args.records} records)")
    return 0


def cmd_ingest(args) -> int:
    schema_path = Path(args.schema)
    if not schema_path.is_file():
        raise ConfigError(f"schema file not found: {args.schema}")
    flows = load_csv(args.csv, Schema.from_file(schema_path))
    digest = flows.save(args.out)
    sys.stdout.write(distribution_table(flows))
    print(f"wrote {args.out} (sha256 {digest})")
    return 0


def cmd_train(args) -> int:
    cfg = _run_config(args)
    pcfg = cfg.pipeline_config()
    flows = load_data(cfg.data, cfg.schema, cfg.seed, cfg.synthetic_records)
    log = TrainLog() if pcfg.root == "mlc" else None
    t0 = time.perf_counter()
    pipe = train_pipeline(flows, pcfg, log=log)
    elapsed = time.perf_counter() - t0
    out = pipe.save(cfg.artifacts, data_fingerprint=flows.fingerprint())
    (out / "run.conf").write_text(cfg.to_text(), encoding="utf-8")
    if log is not None:
        log.write_csv(out / "train_log.csv")
    info = pipe.info
    print(f"records          {len(flows)}")
    print(f"root             {pipe.root.kind}  trained on {info['root_samples']} records")
    print(f"data fraction    {info['root_data_fraction'] * 100:.4f}% "
          f"({info['root_samples']} of {len(flows)} records)")
    if "root_tasks" in info:
        print(f"root tasks       {', '.join(info['root_tasks'])}")
    if hasattr(pipe.root, "threshold"):
        print(f"root threshold   {pipe.root.threshold:.6g}")
    print(f"verify           {pipe.verify.kind}  threshold {pipe.verify.threshold:.6g}")
    print(f"regime           {pipe.regime}")
    print(f"category classes {', '.join(pipe.category_clf.classes)}")
    if isinstance(pipe.subtype_clfs, dict):
        for cat, m in pipe.subtype_clfs.items():
            print(f"subtype[{cat}]  {len(m.classes)} classes")
    else:
        print(f"subtype classes  {len(pipe.subtype_clfs.classes)}")
    print(f"trained in       {elapsed:.1f}s")
    print(f"bundle           {out}")
    return 0


def cmd_eval(args) -> int:
    cfg = _run_config(args)
    pcfg = cfg.pipeline_config()
    flows = load_data(cfg.data, cfg.schema, cfg.seed, cfg.synthetic_records)
    protocol = args.protocol
    reports = Path(cfg.reports)
    reports.mkdir(parents=True, exist_ok=True)
    if protocol == "cv10":
        result = eval_cv10(flows, pcfg, n_folds=cfg.folds, seed=cfg.seed)
        text, payload = result.to_text(), result.to_dict()
    elif protocol.startswith("zeroday:"):
        target = protocol.split(":", 1)[1]
        cats = [c for c in flows.taxonomy.categories if c != BENIGN and np.any(flows.category == c)]
        targets = cats if target == "all" else [target]
        results = [eval_zero_day(flows, t, pcfg, n_folds=cfg.folds, seed=cfg.seed) for t in targets]
        text = "".join(r.to_text() for r in results)
        payload = {"protocol": protocol, "holdouts": {r.extras["holdout"]: r.to_dict() for r in results}}
        if len(results) > 1:
            mean = average_reports([next(iter(r.reports.values())) for r in results])
            text += "\n" + mean.to_text(title="zeroday:mean") + "\n"
            payload["mean"] = mean.to_dict()
    else:
        raise ConfigError(f"unknown protocol {protocol!r}; expected cv10 or zeroday:CATEGORY")
    stem = protocol.replace(":", "_")
    (reports / f"{stem}.txt").write_text(text, encoding="utf-8")
    (reports / f"{stem}.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    sys.stdout.write(text)
    print(f"reports written to {reports / stem}.{{txt,json}}")
    return 0


def cmd_serve(args) -> int:
    from .tierd.node import run_node

    run_node(args.role, args.bundle, args.listen, args.upstream, args.quarantine)
    return 0


def cmd_replay(args) -> int:
    from .tierd.replay import replay

    rate = float("inf") if args.rate in ("max", "inf") else float(args.rate)
    if rate <= 0:
        print("rate 0: nothing sent")
        return 0
    flows = load_data(args.file, args.schema or "")
    X = flows.features if args.limit is None else flows.features[: args.limit]
    result = replay(X, args.target, rate)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            for v in result.verdicts:
                fh.write(json.dumps(v, sort_keys=True) + "\n")
    sys.stdout.write(result.to_text())
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="hids", description="Hierarchical intrusion detection toolkit")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth", help="write the bundled synthetic dataset (CSV + schema)")
    s.add_argument("--out", default="data")
    s.add_argument("--records", type=int, default=synthetic.DEFAULT_RECORDS)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_synth)

    s = sub.add_parser("ingest", help="validate a CSV and write a dataset artifact")
    s.add_argument("csv")
    s.add_argument("--schema", required=True)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_ingest)

    def run_opts(sp):
        sp.add_argument("--config", help="key = value config file")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config key")
        sp.add_argument("--data")
        sp.add_argument("--schema")
        sp.add_argument("--root", choices=["usfad", "lof", "iforest", "mlc", "sgd"])
        sp.add_argument("--verify", choices=["usfad", "lof", "iforest"])
        sp.add_argument("--regime", choices=["rf1", "rf2"])
        sp.add_argument("--subtype-mode", dest="subtype_mode", choices=["pooled", "per-category"])
        sp.add_argument("--seed", type=int)
        sp.add_argument("--artifacts", help="bundle directory")
        sp.add_argument("--reports", help="report directory")
        sp.add_argument("--quarantine")

    s = sub.add_parser("train", help="train all levels and write a pipeline bundle")
    run_opts(s)
    s.set_defaults(func=cmd_train)

    s = sub.add_parser("eval", help="cv10 or zeroday:CATEGORY evaluation")
    run_opts(s)
    s.add_argument("--protocol", default="cv10")
    s.set_defaults(func=cmd_eval)

    s = sub.add_parser("serve", help="run one tier node")
    s.add_argument("--role", required=True, help="near-edge, far-edge or cloud")
    s.add_argument("--bundle", required=True)
    s.add_argument("--listen", default="127.0.0.1:0")
    s.add_argument("--upstream")
    s.add_argument("--quarantine")
    s.set_defaults(func=cmd_serve)

    s = sub.add_parser("replay", help="stream records to a near-edge node")
    s.add_argument("file")
    s.add_argument("--target", required=True)
    s.add_argument("--rate", default="max", help="flows per second, or 'max'")
    s.add_argument("--schema")
    s.add_argument("--limit", type=int)
    s.add_argument("--out", help="write verdicts as NDJSON")
    s.set_defaults(func=cmd_replay)
    return p


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"hids: error: {exc}", file=sys.stderr)
        return 2
    except (HidsError, OSError, ValueError) as exc:
        print(f"hids: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
