"""Three-granularity label taxonomy for IoMT flow records.

The default table has Benign plus 18 attack subtypes in five categories.
Labels in the wild come in several spellings ("DDoS SYN",
"TCP_IP-DDoS-SYN", "ddos_syn"); :meth:`Taxonomy.resolve` folds them onto the
canonical names.
"""

from __future__ import annotations

import re
from dataclasses import dataclass
from pathlib import Path

BENIGN = "Benign"
ATTACK = "Attack"

CATEGORIES = ("Benign", "DDoS", "DoS", "Recon", "Spoofing", "MQTT")

DEFAULT_SUBCATEGORIES: dict[str, str] = {
    "Benign": "Benign",
    "ARP Spoofing": "Spoofing",
    "Ping Sweep": "Recon",
    "Recon VulScan": "Recon",
    "OS Scan": "Recon",
    "Port Scan": "Recon",
    "Malformed Data": "MQTT",
    "DoS Connect Flood": "MQTT",
    "DDoS Connect Flood": "MQTT",
    "DoS Publish Flood": "MQTT",
    "DDoS Publish Flood": "MQTT",
    "DoS TCP": "DoS",
    "DoS ICMP": "DoS",
    "DoS SYN": "DoS",
    "DoS UDP": "DoS",
    "DDoS SYN": "DDoS",
    "DDoS TCP": "DDoS",
    "DDoS ICMP": "DDoS",
    "DDoS UDP": "DDoS",
}

# Dataset-native prefixes ("TCP_IP-DoS-UDP", "MQTT-Malformed_Data", "Recon-OS_Scan").
_PREFIXES = ("tcpip", "mqtt", "recon")


def _key(name: str) -> str:
    k = re.sub(r"[^0-9a-z]", "", name.lower())
    for p in _PREFIXES:
        if k.startswith(p) and len(k) > len(p):
            return k[len(p):]
    return k


@dataclass(frozen=True)
class LabelTriple:
    binary: str
    category: str
    subcategory: str

    @property
    def is_benign(self) -> bool:
        return self.binary == BENIGN


class Taxonomy:
    """Maps subcategory names to their owning category."""

    def __init__(self, mapping: dict[str, str] | None = None):
        mapping = dict(DEFAULT_SUBCATEGORIES if mapping is None else mapping)
        if mapping.get(BENIGN) != BENIGN:
            mapping[BENIGN] = BENIGN
        for sub, cat in mapping.items():
            if (cat == BENIGN) != (sub == BENIGN):
                raise ValueError(f"only Benign may map to category Benign (got {sub!r} -> {cat!r})")
        self.mapping = mapping
        self._lookup: dict[str, str] = {}
        for sub in mapping:
            k = _key(sub)
            if k in self._lookup and self._lookup[k] != sub:
                raise ValueError(f"ambiguous subcategory names {sub!r} and {self._lookup[k]!r}")
            self._lookup[k] = sub

    @property
    def subcategories(self) -> list[str]:
        return list(self.mapping)

    @property
    def categories(self) -> list[str]:
        seen: list[str] = []
        for cat in self.mapping.values():
            if cat not in seen:
                seen.append(cat)
        return seen

    def resolve(self, name: str) -> str | None:
        """Canonical subcategory for ``name``, or None if unknown."""
        return self._lookup.get(_key(str(name)))

    def category_of(self, subcategory: str) -> str:
        return self.mapping[subcategory]

    def subtypes_of(self, category: str) -> list[str]:
        return [s for s, c in self.mapping.items() if c == category]

    def triple(self, subcategory: str) -> LabelTriple:
        cat = self.mapping[subcategory]
        return LabelTriple(BENIGN if cat == BENIGN else ATTACK, cat, subcategory)

    def with_category(self, category: str) -> bool:
        return category in self.mapping.values()

    @classmethod
    def from_text(cls, text: str, source: str = "<taxonomy>") -> "Taxonomy":
        """Parse ``subcategory=category`` lines; '#' starts a comment."""
        mapping: dict[str, str] = {}
        for lineno, raw in enumerate(text.splitlines(), 1):
            line = raw.split("#", 1)[0].strip()
            if not line:
                continue
            if "=" not in line:
                raise ValueError(f"{source}:{lineno}: expected subcategory=category")
            sub, cat = (s.strip() for s in line.split("=", 1))
            mapping[sub] = cat
        return cls(mapping)

    @classmethod
    def from_file(cls, path: str | Path) -> "Taxonomy":
        return cls.from_text(Path(path).read_text(encoding="utf-8"), str(path))

    def to_text(self) -> str:
        return "".join(f"{s}={c}\n" for s, c in self.mapping.items())


DEFAULT_TAXONOMY = Taxonomy()
