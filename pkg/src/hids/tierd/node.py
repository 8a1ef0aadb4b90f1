"""Tier node services: NearEdge (root), FarEdge (verify + quarantine), Cloud (category + subtype).

Every node loads its models from the same pipeline bundle, scales the raw
features carried by each Flow with the shared scaler, and answers with a
Verdict carrying the same id. Each inbound connection gets its own lazily
opened upstream connection, so a Benign-only client never causes upstream
traffic. Upstream failures produce degraded verdicts, never Normal ones.
"""

from __future__ import annotations

import asyncio
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from ..artifact import Artifact
from ..dataset import MinMaxScaler
from ..errors import ArtifactMismatch, DimensionMismatch, HidsError, ProtocolError, UpstreamUnavailable
from ..occ import OneClassModel
from ..pipeline import (ATTACK, KNOWN, NORMAL, ROOT, UNKNOWN, UNKNOWN_SHORT, VERIFY, Quarantine, Verdict,
                        load_manifest, load_root, load_subtypes, root_decision, upper_verdicts, verify_decision)
from ..forest import RandomForestModel
from .protocol import TierMessage, parse_address, read_message, write_message

log = logging.getLogger("hids.tierd")

NEAR_EDGE, FAR_EDGE, CLOUD = "NearEdge", "FarEdge", "Cloud"
ROLES = (NEAR_EDGE, FAR_EDGE, CLOUD)
_ALIASES = {"nearedge": NEAR_EDGE, "near": NEAR_EDGE, "faredge": FAR_EDGE, "far": FAR_EDGE, "cloud": CLOUD}

# final labels of verdicts that could not be completed upstream
DEGRADED_ATTACK = "Attack"
DEGRADED_KNOWN = "KnownAttack"


def parse_role(name: str) -> str:
    role = _ALIASES.get(name.replace("-", "").replace("_", "").lower())
    if role is None:
        raise ValueError(f"unknown role {name!r}; expected one of {ROLES}")
    return role


@dataclass
class NodeRole:
    role: str
    bundle: Path
    upstream: tuple[str, int] | None = None


class Upstream:
    """One outbound connection with its own id stream and a scaler handshake."""

    def __init__(self, address: tuple[str, int], role: str, scaler_fp: str, timeout: float = 5.0):
        self.address = address
        self.role = role
        self.scaler_fp = scaler_fp
        self.timeout = timeout
        self._reader = self._writer = None
        self._next_id = 1

    async def _connect(self) -> None:
        try:
            self._reader, self._writer = await asyncio.wait_for(
                asyncio.open_connection(*self.address), self.timeout)
        except (OSError, asyncio.TimeoutError) as exc:
            raise UpstreamUnavailable(f"cannot reach {self.address[0]}:{self.address[1]}: {exc}") from None
        self._next_id = 1
        reply = await self._exchange(TierMessage("Health", self._take_id(),
                                                 {"role": self.role, "scaler": self.scaler_fp}))
        if reply.kind != "Health" or reply.payload.get("status") != "ok":
            await self.close()
            raise ArtifactMismatch(f"upstream {self.address} rejected handshake: {reply.payload}")

    def _take_id(self) -> int:
        i = self._next_id
        self._next_id += 1
        return i

    async def _exchange(self, msg: TierMessage) -> TierMessage:
        try:
            await write_message(self._writer, msg)
            reply = await asyncio.wait_for(read_message(self._reader), self.timeout)
        except (OSError, ProtocolError, asyncio.TimeoutError) as exc:
            await self.close()
            raise UpstreamUnavailable(f"upstream {self.address} failed: {exc!r}") from None
        if reply is None:
            await self.close()
            raise UpstreamUnavailable(f"upstream {self.address} closed the connection")
        if reply.id != msg.id:
            await self.close()
            raise UpstreamUnavailable(f"upstream replied to id {reply.id}, expected {msg.id}")
        return reply

    async def request(self, kind: str, payload: dict) -> TierMessage:
        if self._writer is None:
            await self._connect()
        return await self._exchange(TierMessage(kind, self._take_id(), payload))

    async def notify(self, kind: str, payload: dict) -> None:
        if self._writer is None:
            await self._connect()
        try:
            await write_message(self._writer, TierMessage(kind, self._take_id(), payload))
        except OSError as exc:
            await self.close()
            raise UpstreamUnavailable(str(exc)) from None

    async def close(self) -> None:
        if self._writer is not None:
            w, self._writer, self._reader = self._writer, None, None
            w.close()
            try:
                await w.wait_closed()
            except OSError:
                pass


class TierNode:
    def __init__(self, role: str, scaler: MinMaxScaler, models: dict, upstream: tuple[str, int] | None = None,
                 quarantine_path: str | Path | None = None):
        self.role = role
        self.scaler = scaler
        self.scaler_fp = scaler.fingerprint()
        self.models = models
        self.upstream = upstream
        self.quarantine = Quarantine(quarantine_path) if role == FAR_EDGE else None
        self.notices = 0
        self.stats = {"flows": 0, "forwarded": 0, "degraded": 0}
        if role != CLOUD and upstream is None:
            raise ValueError(f"{role} needs an upstream address")

    @classmethod
    def from_bundle(cls, role: str, bundle: str | Path, upstream: tuple[str, int] | None = None,
                    quarantine_path: str | Path | None = None) -> "TierNode":
        d = Path(bundle)
        manifest = load_manifest(d)
        scaler = MinMaxScaler.from_artifact(Artifact.load(d / "scaler.hids"))
        if role == NEAR_EDGE:
            models = {"root": load_root(d / "root.hids")}
        elif role == FAR_EDGE:
            models = {"verify": OneClassModel.from_artifact(Artifact.load(d / "verify.hids"))}
        else:
            models = {"category": RandomForestModel.from_artifact(Artifact.load(d / "category.hids")),
                      "subtype": load_subtypes(d, manifest)}
        return cls(role, scaler, models, upstream, quarantine_path)

    # -- request handling ---------------------------------------------------------

    def _scale(self, payload: dict) -> tuple[np.ndarray, np.ndarray]:
        raw = np.asarray(payload.get("features", []), dtype=np.float64)
        if raw.ndim != 1 or raw.shape[0] != self.scaler.n_features:
            raise DimensionMismatch(self.scaler.n_features, raw.shape[-1] if raw.ndim else 0)
        return raw, self.scaler.transform(raw[None, :])

    async def _flow(self, payload: dict, upstream: Upstream | None) -> dict:
        self.stats["flows"] += 1
        raw, X = self._scale(payload)
        if self.role == NEAR_EDGE:
            attack, score = root_decision(self.models["root"], X)
            info = {"root": ATTACK if attack[0] else NORMAL, "root_score": float(score[0])}
            if not attack[0]:
                verdict = Verdict(NORMAL, ROOT, info)
                return {**verdict.to_dict(), "hops": [self.role]}
            return await self._forward(payload, upstream, info, Verdict(DEGRADED_ATTACK, ROOT, info, degraded=True))
        if self.role == FAR_EDGE:
            unknown, score = verify_decision(self.models["verify"], X)
            if unknown[0]:
                info = {"verify": UNKNOWN_SHORT, "verify_score": float(score[0])}
                verdict = Verdict(UNKNOWN, VERIFY, info)
                rid = self.quarantine.append(raw, verdict)
                try:
                    await upstream.notify("QuarantineNotice", {"record_id": rid, "features": raw.tolist()})
                except HidsError as exc:
                    log.warning("quarantine notice for record %d not delivered: %s", rid, exc)
                return {**verdict.to_dict(), "hops": [self.role]}
            info = {"verify": KNOWN, "verify_score": float(score[0])}
            return await self._forward(payload, upstream, info, Verdict(DEGRADED_KNOWN, VERIFY, info, degraded=True))
        verdict = upper_verdicts(self.models["category"], self.models["subtype"], X)[0]
        return {**verdict.to_dict(), "hops": [self.role]}

    async def _forward(self, payload: dict, upstream: Upstream, info: dict, fallback: Verdict) -> dict:
        self.stats["forwarded"] += 1
        try:
            reply = await upstream.request("Flow", {"features": payload["features"]})
            if reply.kind != "Verdict":
                raise UpstreamUnavailable(f"expected a Verdict, got {reply.kind}")
        except (UpstreamUnavailable, ArtifactMismatch) as exc:
            self.stats["degraded"] += 1
            log.warning("%s: upstream unavailable, degraded verdict: %s", self.role, exc)
            return {**fallback.to_dict(), "hops": [self.role], "error": str(exc)}
        out = dict(reply.payload)
        out["raw"] = {**info, **out.get("raw", {})}
        out["hops"] = [self.role] + list(out.get("hops", []))
        return out

    def _health(self, payload: dict) -> dict:
        theirs = payload.get("scaler")
        status = "ok" if theirs is None or theirs == self.scaler_fp else "mismatch"
        return {"role": self.role, "scaler": self.scaler_fp, "status": status}

    async def handle(self, reader: asyncio.StreamReader, writer: asyncio.StreamWriter) -> None:
        peer = writer.get_extra_info("peername")
        upstream = Upstream(self.upstream, self.role, self.scaler_fp) if self.upstream else None
        last_id = -1
        try:
            while True:
                try:
                    msg = await read_message(reader)
                except (ProtocolError, OSError) as exc:
                    log.warning("%s: dropping %s: %s", self.role, peer, exc)
                    break
                if msg is None:
                    break
                if msg.id <= last_id:
                    log.warning("%s: non-increasing id %d from %s", self.role, msg.id, peer)
                    break
                last_id = msg.id
                if msg.kind == "Health":
                    reply = self._health(msg.payload)
                    await write_message(writer, TierMessage("Health", msg.id, reply))
                    if reply["status"] != "ok":
                        break
                elif msg.kind == "Flow":
                    try:
                        out = await self._flow(msg.payload, upstream)
                    except HidsError as exc:
                        out = {"final": "Invalid", "stage": ROOT, "raw": {}, "corrected": False,
                               "degraded": True, "hops": [self.role], "error": str(exc)}
                    await write_message(writer, TierMessage("Verdict", msg.id, out))
                elif msg.kind == "QuarantineNotice" and self.role == CLOUD:
                    self.notices += 1
                    log.info("cloud: quarantine notice for record %s", msg.payload.get("record_id"))
                else:
                    log.warning("%s: unexpected %s frame from %s", self.role, msg.kind, peer)
                    break
        except (ConnectionError, OSError):
            pass
        finally:
            if upstream is not None:
                await upstream.close()
            writer.close()
            try:
                await writer.wait_closed()
            except (ConnectionError, OSError):
                pass

    async def start(self, host: str, port: int) -> asyncio.AbstractServer:
        return await asyncio.start_server(self.handle, host, port)


async def serve(node: TierNode, host: str, port: int, ready=None) -> None:
    server = await node.start(host, port)
    bound = server.sockets[0].getsockname()
    if ready is not None:
        ready(bound[0], bound[1])
    async with server:
        await server.serve_forever()


def run_node(role: str, bundle: str | Path, listen: str, upstream: str | None = None,
             quarantine_path: str | Path | None = None) -> None:
    """Run a node until interrupted; prints ``READY <role> <host>:<port>`` once listening."""
    role = parse_role(role)
    host, port = parse_address(listen)
    node = TierNode.from_bundle(role, bundle, parse_address(upstream) if upstream else None, quarantine_path)

    def ready(h, p):
        print(f"READY {role} {h}:{p}", flush=True)
        sys.stdout.flush()

    try:
        asyncio.run(serve(node, host, port, ready))
    except KeyboardInterrupt:
        pass
