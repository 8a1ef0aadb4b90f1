"""Flat ``key = value`` run configuration shared by the CLI subcommands."""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass, fields
from pathlib import Path

from .errors import ConfigError
from .forest import ForestConfig
from .meta import ReptileConfig
from .occ import OccConfig
from .pipeline import PipelineConfig

SYNTHETIC = "synthetic"


@dataclass
class RunConfig:
    seed: int = 0
    data: str = SYNTHETIC  # CSV, dataset artifact, CICIoMT2024 directory, or "synthetic"
    schema: str = ""  # defaults to the CSV's .schema sidecar
    synthetic_records: int = 150_000
    artifacts: str = "artifacts/bundle"
    reports: str = "reports"
    quarantine: str = ""
    root: str = "usfad"
    verify: str = "usfad"
    regime: str = "rf1"
    subtype_mode: str = "pooled"
    folds: int = 10
    # forests
    n_trees: int = 100
    max_features: int = 0  # 0: ceil(sqrt(F))
    max_depth: int = 0  # 0: unlimited
    min_leaf: int = 1
    # one-class detectors
    occ_trees: int = 100
    subsample: int = 256
    lof_k: int = 20
    quantile: float = 0.99
    calibration_fraction: float = 0.2
    lof_max_train: int = 4096
    # meta-learning
    inner_steps: int = 5
    inner_lr: float = 0.02
    meta_lr: float = 0.1
    iterations: int = 200
    batch_size: int = 32
    anneal: bool = False

    @classmethod
    def keys(cls) -> list[str]:
        return [f.name for f in fields(cls)]

    def updated(self, overrides: dict[str, str]) -> "RunConfig":
        """Copy with string-valued overrides coerced to each field's type."""
        types = {f.name: f.type for f in fields(self)}
        values = {}
        for raw_key, raw in overrides.items():
            key = raw_key.strip().replace("-", "_")
            if key not in types:
                raise ConfigError(f"unknown config key {raw_key!r}")
            values[key] = _coerce(key, types[key], str(raw).strip())
        return dataclasses.replace(self, **values)

    @classmethod
    def from_file(cls, path: str | Path, overrides: dict[str, str] | None = None) -> "RunConfig":
        p = Path(path)
        if not p.is_file():
            raise ConfigError(f"config file not found: {path}")
        pairs = {}
        for lineno, line in enumerate(p.read_text(encoding="utf-8").splitlines(), 1):
            line = line.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ConfigError(f"{path}:{lineno}: expected key = value")
            k, v = line.split("=", 1)
            pairs[k.strip()] = v.strip()
        cfg = cls().updated(pairs)
        return cfg.updated(overrides) if overrides else cfg

    def to_text(self) -> str:
        return "".join(f"{f.name} = {_fmt(getattr(self, f.name))}\n" for f in fields(self))

    def pipeline_config(self) -> PipelineConfig:
        cfg = PipelineConfig(
            root=self.root, verify=self.verify, regime=self.regime, subtype_mode=self.subtype_mode,
            occ=OccConfig(n_trees=self.occ_trees, subsample=self.subsample, k=self.lof_k, quantile=self.quantile,
                          calibration_fraction=self.calibration_fraction, lof_max_train=self.lof_max_train,
                          seed=self.seed),
            forest=ForestConfig(n_trees=self.n_trees, max_features=self.max_features or None,
                                max_depth=self.max_depth or None, min_leaf=self.min_leaf, seed=self.seed),
            reptile=ReptileConfig(inner_steps=self.inner_steps, inner_lr=self.inner_lr, meta_lr=self.meta_lr,
                                  iterations=self.iterations, batch_size=self.batch_size, seed=self.seed,
                                  anneal=self.anneal),
        )
        cfg.validate()
        if not 0.0 < self.quantile < 1.0:
            raise ConfigError("quantile must lie in (0, 1)")
        return cfg


def _fmt(v) -> str:
    return ("true" if v else "false") if isinstance(v, bool) else str(v)


def _coerce(key: str, typ, raw: str):
    typ = typ if isinstance(typ, str) else typ.__name__
    try:
        if typ == "bool":
            low = raw.lower()
            if low in ("1", "true", "yes", "on"):
                return True
            if low in ("0", "false", "no", "off"):
                return False
            raise ValueError(raw)
        if typ == "int":
            return int(raw)
        if typ == "float":
            return float(raw)
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {raw!r} as {typ}") from None
    return raw
