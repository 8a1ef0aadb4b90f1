"""Seeded Gaussian-mixture stand-in for the CICIoMT2024 flow tables.

Every subtype is one Gaussian blob. All attacks share elevated traffic-rate
features (so an attack-vs-benign boundary generalises across categories),
each category raises its own pair of signature features (so categories are
far apart), and subtypes step along their category's signature.
Raw units differ wildly per feature so min-max scaling matters.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .dataset import FlowSet, Schema, write_csv
from .taxonomy import BENIGN, DEFAULT_TAXONOMY, Taxonomy

FEATURE_NAMES = [
    "Rate", "Srate", "Header_Length", "Duration", "Tot sum", "Min", "Max",
    "AVG", "IAT", "Number", "Variance", "Protocol Type",
]

DEFAULT_RECORDS = 150_000


def class_weights(taxonomy: Taxonomy = DEFAULT_TAXONOMY, benign: float = 0.2) -> dict[str, float]:
    """Benign gets ``benign``; categories share the rest equally, split evenly over subtypes."""
    cats = [c for c in taxonomy.categories if c != BENIGN]
    weights = {BENIGN: benign}
    for cat in cats:
        subs = taxonomy.subtypes_of(cat)
        for s in subs:
            weights[s] = (1.0 - benign) / len(cats) / len(subs)
    return weights


def generate(n_records: int = DEFAULT_RECORDS, seed: int = 0, n_features: int = 12,
             weights: dict[str, float] | None = None, spread: float = 0.08,
             taxonomy: Taxonomy = DEFAULT_TAXONOMY, layout_seed: int = 0) -> FlowSet:
    """Sample ``n_records`` flows. ``layout_seed`` fixes the class geometry and
    per-feature units; ``seed`` only drives sampling, so different seeds give
    independent draws from the same distribution."""
    cats = [c for c in taxonomy.categories if c != BENIGN]
    if n_features < 2 + 2 * len(cats):
        raise ValueError(f"need at least {2 + 2 * len(cats)} features for {len(cats)} categories")
    weights = class_weights(taxonomy) if weights is None else weights
    layout = np.random.default_rng([layout_seed, n_features])
    rng = np.random.default_rng(seed)

    subs = [s for s in taxonomy.subcategories if weights.get(s, 0) > 0]
    w = np.array([weights[s] for s in subs], dtype=np.float64)
    counts = np.floor(w / w.sum() * n_records).astype(np.int64)
    # hand out the rounding remainder to the heaviest classes
    for i in np.argsort(-w, kind="stable")[: n_records - counts.sum()]:
        counts[i] += 1

    base = layout.uniform(0.5, 1.5, size=n_features)
    scale = 10.0 ** layout.uniform(0.0, 3.0, size=n_features)
    blocks, labels = [], []
    sds = {s: spread * layout.uniform(0.8, 1.2, size=n_features) for s in taxonomy.subcategories}
    for sub, n in zip(subs, counts):
        cat = taxonomy.category_of(sub)
        center = base.copy()
        if cat != BENIGN:
            c = cats.index(cat)
            center[0] += 1.0 + 0.3 * c
            center[1] += 1.0 + 0.2 * c
            sig = 2 + 2 * c
            center[sig] += 3.0
            center[sig + 1] += 3.0
            center[sig] += 0.6 * taxonomy.subtypes_of(cat).index(sub)
        blocks.append(center + sds[sub] * rng.standard_normal((n, n_features)))
        labels.append(np.full(n, sub, dtype=object))
    X = np.clip(np.vstack(blocks), 0.0, None) * scale
    order = rng.permutation(len(X))
    names = (FEATURE_NAMES + [f"f{j:02d}" for j in range(len(FEATURE_NAMES), n_features)])[:n_features]
    return FlowSet(X[order], np.concatenate(labels)[order], names, taxonomy)


def write_bundle(out_dir: str | Path, n_records: int = DEFAULT_RECORDS, seed: int = 0) -> tuple[Path, Path]:
    """Write ``synthetic.csv`` and its ``synthetic.schema`` sidecar; returns both paths."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    flows = generate(n_records, seed)
    csv_path, schema_path = out / "synthetic.csv", out / "synthetic.schema"
    write_csv(csv_path, flows, "Label")
    schema_path.write_text(Schema("Label", list(flows.feature_names)).to_text(), encoding="utf-8")
    return csv_path, schema_path
