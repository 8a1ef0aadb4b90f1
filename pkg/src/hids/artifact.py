"""Versioned binary container for fitted models and datasets.

Layout (all integers little-endian)::

    b"HIDS" | u16 format version | u16 len + kind tag (utf-8)
    | u32 len + metadata JSON (utf-8, sorted keys)
    | u32 array count
    | per array: u16 len + name, u8 dtype code, u8 ndim, u64 * ndim shape, raw bytes
    | 32-byte SHA-256 of everything before it

Arrays are stored C-contiguous in little-endian byte order.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any

import numpy as np

from .errors import ArtifactError

MAGIC = b"HIDS"
FORMAT_VERSION = 1

_DTYPES = {
    1: np.dtype("<f8"),
    2: np.dtype("<i8"),
    3: np.dtype("<i4"),
    4: np.dtype("u1"),
    5: np.dtype("<f4"),
}
_CODES = {(dt.kind, dt.itemsize): code for code, dt in _DTYPES.items()}


@dataclass
class Artifact:
    kind: str
    meta: dict[str, Any] = field(default_factory=dict)
    arrays: dict[str, np.ndarray] = field(default_factory=dict)

    def to_bytes(self) -> bytes:
        buf = io.BytesIO()
        buf.write(MAGIC)
        buf.write(struct.pack("<H", FORMAT_VERSION))
        kind = self.kind.encode("utf-8")
        buf.write(struct.pack("<H", len(kind)) + kind)
        meta = json.dumps(self.meta, sort_keys=True, separators=(",", ":")).encode("utf-8")
        buf.write(struct.pack("<I", len(meta)) + meta)
        buf.write(struct.pack("<I", len(self.arrays)))
        for name, arr in self.arrays.items():
            arr = np.asarray(arr)
            if arr.dtype == np.bool_:
                arr = arr.astype("u1")
            code = _CODES.get((arr.dtype.kind, arr.dtype.itemsize))
            if code is None:
                raise ArtifactError(f"unsupported dtype {arr.dtype} for array {name!r}")
            raw = np.ascontiguousarray(arr, dtype=_DTYPES[code])
            bname = name.encode("utf-8")
            buf.write(struct.pack("<H", len(bname)) + bname)
            buf.write(struct.pack("<BB", code, raw.ndim))
            buf.write(struct.pack(f"<{raw.ndim}Q", *raw.shape))
            buf.write(raw.tobytes())
        body = buf.getvalue()
        return body + hashlib.sha256(body).digest()

    @classmethod
    def from_bytes(cls, data: bytes) -> "Artifact":
        if len(data) < 4 + 2 + 32 or data[:4] != MAGIC:
            raise ArtifactError("not a HIDS artifact (bad magic)")
        body, digest = data[:-32], data[-32:]
        if hashlib.sha256(body).digest() != digest:
            raise ArtifactError("artifact checksum mismatch")
        mv = memoryview(body)
        pos = 4
        (version,) = struct.unpack_from("<H", mv, pos)
        pos += 2
        if version != FORMAT_VERSION:
            raise ArtifactError(f"unsupported artifact format version {version}")
        (n,) = struct.unpack_from("<H", mv, pos)
        pos += 2
        kind = bytes(mv[pos:pos + n]).decode("utf-8")
        pos += n
        (n,) = struct.unpack_from("<I", mv, pos)
        pos += 4
        meta = json.loads(bytes(mv[pos:pos + n]).decode("utf-8"))
        pos += n
        (count,) = struct.unpack_from("<I", mv, pos)
        pos += 4
        arrays: dict[str, np.ndarray] = {}
        for _ in range(count):
            (n,) = struct.unpack_from("<H", mv, pos)
            pos += 2
            name = bytes(mv[pos:pos + n]).decode("utf-8")
            pos += n
            code, ndim = struct.unpack_from("<BB", mv, pos)
            pos += 2
            shape = struct.unpack_from(f"<{ndim}Q", mv, pos)
            pos += 8 * ndim
            dt = _DTYPES.get(code)
            if dt is None:
                raise ArtifactError(f"unknown dtype code {code}")
            nbytes = int(np.prod(shape, dtype=np.int64)) * dt.itemsize
            arrays[name] = np.frombuffer(body, dtype=dt, count=nbytes // dt.itemsize,
                                         offset=pos).reshape(shape).copy()
            pos += nbytes
        if pos != len(body):
            raise ArtifactError("trailing bytes in artifact")
        return cls(kind, meta, arrays)

    def save(self, path: str | Path) -> str:
        """Write to ``path``; returns the hex SHA-256 of the file contents."""
        data = self.to_bytes()
        Path(path).write_bytes(data)
        return hashlib.sha256(data).hexdigest()

    @classmethod
    def load(cls, path: str | Path) -> "Artifact":
        return cls.from_bytes(Path(path).read_bytes())

    def expect(self, kind: str) -> "Artifact":
        if self.kind != kind and not self.kind.startswith(kind + ":"):
            raise ArtifactError(f"expected artifact kind {kind!r}, found {self.kind!r}")
        return self

    def debug_json(self) -> str:
        """Human-readable dump, for inspection only (not loadable)."""
        doc = {
            "kind": self.kind,
            "format_version": FORMAT_VERSION,
            "meta": self.meta,
            "arrays": {k: {"dtype": str(v.dtype), "shape": list(v.shape), "data": v.tolist()}
                       for k, v in self.arrays.items()},
        }
        return json.dumps(doc, indent=1, sort_keys=True)


def fingerprint(data: bytes) -> str:
    return hashlib.sha256(data).hexdigest()
