"""Load driver: stream flow records to a NearEdge node and collect verdicts."""

from __future__ import annotations

import asyncio
import time
from collections import Counter
from dataclasses import dataclass, field

import numpy as np

from ..errors import ConnectionLost, ProtocolError
from .protocol import TierMessage, parse_address, read_message, write_message

WINDOW = 64  # max in-flight flows per connection


@dataclass
class ReplayResult:
    verdicts: list[dict]
    latencies_ms: np.ndarray
    reconnects: int = 0
    elapsed_s: float = 0.0
    stage_counts: Counter = field(default_factory=Counter)
    final_counts: Counter = field(default_factory=Counter)

    def percentiles(self) -> dict[str, float]:
        if len(self.latencies_ms) == 0:
            return {"p50": float("nan"), "p95": float("nan"), "p99": float("nan")}
        p = np.percentile(self.latencies_ms, [50, 95, 99])
        return {"p50": float(p[0]), "p95": float(p[1]), "p99": float(p[2])}

    def summary(self) -> dict:
        return {"sent": len(self.verdicts), "elapsed_s": self.elapsed_s, "reconnects": self.reconnects,
                "stages": dict(self.stage_counts), "finals": dict(self.final_counts),
                "latency_ms": self.percentiles()}

    def to_text(self) -> str:
        lines = [f"flows      {len(self.verdicts)}", f"elapsed_s  {self.elapsed_s:.3f}",
                 f"reconnects {self.reconnects}"]
        lines += [f"stage {k:<9}{v}" for k, v in sorted(self.stage_counts.items())]
        lines += [f"{k} {v:.3f} ms" for k, v in self.percentiles().items()]
        return "\n".join(lines) + "\n"


async def _session(host, port, features, pending: list[int], verdicts, latencies, rate, t0,
                   timeout: float) -> None:
    """Send every index in ``pending`` (in order) over one connection; fill results as replies arrive.

    Raises ConnectionLost if the connection drops; indices that got a reply
    are removed from ``pending`` so a retry resumes with the rest.
    """
    try:
        reader, writer = await asyncio.wait_for(asyncio.open_connection(host, port), timeout)
    except (OSError, asyncio.TimeoutError) as exc:
        raise ConnectionLost(f"cannot connect to {host}:{port}: {exc}") from None
    inflight: dict[int, tuple[int, float]] = {}
    window = asyncio.Semaphore(WINDOW)
    todo = list(pending)

    async def receive():
        try:
            while inflight or todo_left[0]:
                msg = await read_message(reader)
                if msg is None:
                    raise ConnectionLost("target closed the connection")
                if msg.id not in inflight:
                    raise ProtocolError(f"reply for unknown id {msg.id}")
                idx, sent = inflight.pop(msg.id)
                latencies[idx] = (time.perf_counter() - sent) * 1000.0
                verdicts[idx] = msg.payload
                window.release()
        finally:
            for _ in range(WINDOW):  # unblock a sender waiting for window space
                window.release()

    todo_left = [len(todo)]
    recv = asyncio.create_task(receive())
    try:
        for msg_id, idx in enumerate(todo, start=1):
            if rate != float("inf"):
                delay = t0 + idx / rate - time.perf_counter()
                if delay > 0:
                    await asyncio.sleep(delay)
            await window.acquire()
            if recv.done():
                recv.result()
            inflight[msg_id] = (idx, time.perf_counter())
            todo_left[0] -= 1
            await write_message(writer, TierMessage("Flow", msg_id, {"features": features[idx].tolist()}))
        await recv
    except (OSError, asyncio.IncompleteReadError, ProtocolError) as exc:
        raise ConnectionLost(str(exc)) from None
    finally:
        if not recv.done():
            recv.cancel()
        pending[:] = [i for i in pending if verdicts[i] is None]
        writer.close()
        try:
            await writer.wait_closed()
        except OSError:
            pass


async def replay_async(features: np.ndarray, host: str, port: int, rate: float = float("inf"),
                       max_reconnects: int = 3, timeout: float = 10.0) -> ReplayResult:
    """Send every row of raw ``features`` as a Flow at ``rate`` flows/second.

    ``rate <= 0`` sends nothing. On a dropped connection the driver
    reconnects (fresh id stream) and resends flows that got no reply.
    """
    features = np.asarray(features, dtype=np.float64)
    if rate <= 0 or len(features) == 0:
        return ReplayResult([], np.zeros(0))
    verdicts: list[dict | None] = [None] * len(features)
    latencies = np.zeros(len(features))
    pending = list(range(len(features)))
    reconnects = 0
    t0 = time.perf_counter()
    while True:
        try:
            await _session(host, port, features, pending, verdicts, latencies, rate, t0, timeout)
            break
        except ConnectionLost:
            if not pending:
                break
            if reconnects >= max_reconnects:
                raise
            reconnects += 1
            await asyncio.sleep(0.2 * reconnects)
    result = ReplayResult(verdicts, latencies, reconnects, time.perf_counter() - t0)
    result.stage_counts = Counter(v["stage"] for v in verdicts)
    result.final_counts = Counter(v["final"] for v in verdicts)
    return result


def replay(features: np.ndarray, address: str, rate: float = float("inf"), **kw) -> ReplayResult:
    host, port = parse_address(address)
    return asyncio.run(replay_async(features, host, port, rate, **kw))
