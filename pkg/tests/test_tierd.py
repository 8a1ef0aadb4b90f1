"""Wire codec and in-process tier nodes."""

from __future__ import annotations

import asyncio
import json
import struct

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from hids.errors import ArtifactMismatch, BadVersion, FrameTooLarge, MalformedJson, ProtocolError, UnknownKind
from hids.pipeline import ROOT
from hids.tierd.node import CLOUD, DEGRADED_ATTACK, FAR_EDGE, NEAR_EDGE, TierNode, Upstream, parse_role
from hids.tierd.protocol import (KINDS, MAX_FRAME, FrameDecoder, TierMessage, decode, decode_body, encode,
                                 parse_address, read_message, write_message)
from hids.tierd.replay import replay_async

# -- codec ---------------------------------------------------------------------------

_json = st.recursive(st.none() | st.booleans() | st.integers(-2**53, 2**53) | st.text(max_size=10)
                     | st.floats(allow_nan=False, allow_infinity=False),
                     lambda inner: st.lists(inner, max_size=4) | st.dictionaries(st.text(max_size=5), inner,
                                                                                  max_size=4), max_leaves=12)


@settings(max_examples=100, deadline=None)
@given(st.sampled_from(KINDS), st.integers(0, 2**64 - 1), st.dictionaries(st.text(max_size=8), _json, max_size=5))
def test_codec_round_trip(kind, msg_id, payload):
    msg = TierMessage(kind, msg_id, payload)
    frame = encode(msg)
    assert struct.unpack(">I", frame[:4])[0] == len(frame) - 4
    assert decode(frame) == msg
    dec = FrameDecoder()
    got = []
    for i in range(0, len(frame), 3):  # drip-feed
        got += dec.feed(frame[i:i + 3])
    assert got == [msg] and dec.pending == 0


def test_key_order_on_the_wire():
    body = encode(TierMessage("Flow", 7, {"features": [1.5]}))[4:]
    assert body == b'{"v":1,"kind":"Flow","id":7,"payload":{"features":[1.5]}}'


def test_oversize_and_truncated_frames():
    big = TierMessage("Flow", 1, {"x": "a" * (2 << 20)})
    with pytest.raises(FrameTooLarge):
        encode(big)
    with pytest.raises(FrameTooLarge):
        decode(struct.pack(">I", MAX_FRAME + 1))
    with pytest.raises(FrameTooLarge):
        FrameDecoder().feed(struct.pack(">I", 2 << 20))
    with pytest.raises(ProtocolError):
        decode(b"\x00\x00")
    frame = encode(TierMessage("Health", 1, {}))
    with pytest.raises(ProtocolError):
        decode(frame[:-1])
    dec = FrameDecoder()
    assert dec.feed(frame[:2]) == [] and dec.needed() == 2


def test_bad_bodies():
    with pytest.raises(MalformedJson):
        decode_body(b"{not json")
    with pytest.raises(MalformedJson):
        decode_body(b'{"v":1,"kind":"Flow","id":1}')
    with pytest.raises(MalformedJson):
        decode_body(b'{"v":1,"kind":"Flow","id":1,"payload":[]}')
    with pytest.raises(BadVersion):
        decode_body(b'{"v":2,"kind":"Flow","id":1,"payload":{}}')
    with pytest.raises(UnknownKind):
        decode_body(b'{"v":1,"kind":"Ping","id":1,"payload":{}}')
    with pytest.raises(ProtocolError):
        decode_body(b'{"v":1,"kind":"Flow","id":-1,"payload":{}}')
    with pytest.raises(ProtocolError):
        encode(TierMessage("Flow", 2**64, {}))
    with pytest.raises(ProtocolError):
        encode(TierMessage("Flow", 1, {"x": float("nan")}))


def test_address_and_role_parsing():
    assert parse_address("0.0.0.0:9000") == ("0.0.0.0", 9000)
    assert parse_address(":7") == ("127.0.0.1", 7)
    with pytest.raises(ValueError):
        parse_address("host")
    assert parse_role("far-edge") == FAR_EDGE and parse_role("CLOUD") == CLOUD
    with pytest.raises(ValueError):
        parse_role("fog")


# -- nodes ---------------------------------------------------------------------------


async def _start(node: TierNode):
    server = await node.start("127.0.0.1", 0)
    return server, server.sockets[0].getsockname()[:2]


async def _chain(bundle, quarantine=None, with_upper=True):
    servers, nodes = [], {}
    up = None
    if with_upper:
        cloud = TierNode.from_bundle(CLOUD, bundle)
        s, up = await _start(cloud)
        servers.append(s)
        far = TierNode.from_bundle(FAR_EDGE, bundle, up, quarantine)
        s, up = await _start(far)
        servers.append(s)
        nodes.update({CLOUD: cloud, FAR_EDGE: far})
    else:
        probe = await asyncio.start_server(lambda r, w: None, "127.0.0.1", 0)
        up = probe.sockets[0].getsockname()[:2]
        probe.close()
        await probe.wait_closed()  # nothing listens here any more
    near = TierNode.from_bundle(NEAR_EDGE, bundle, up)
    s, addr = await _start(near)
    servers.append(s)
    nodes[NEAR_EDGE] = near
    return servers, nodes, addr


async def _close(servers):
    for s in servers:
        s.close()
        await s.wait_closed()


def _benign_root_rows(pipe, test, n=200):
    X = test.features[test.is_benign]
    v = pipe.classify_raw(X)
    pipe.drain_quarantine()
    return X[[i for i, x in enumerate(v) if x.stage == ROOT]][:n]


def test_wire_matches_local_and_quarantines(trained, tmp_path):
    pipe, bundle, test = trained
    # a few attacks pushed far off their clusters so verify has something to quarantine
    odd = test.features[~test.is_benign][:5] * 3.0
    X = np.vstack([test.features[:400], odd])
    local = pipe.classify_raw(X)
    n_unknown = len(pipe.drain_quarantine())
    assert n_unknown > 0
    qpath = tmp_path / "q.ndjson"

    async def go():
        servers, nodes, (h, p) = await _chain(bundle, qpath)
        try:
            return await replay_async(X, h, p), nodes
        finally:
            await _close(servers)

    res, nodes = asyncio.run(go())
    assert [v["final"] for v in res.verdicts] == [v.final for v in local]
    assert [v["stage"] for v in res.verdicts] == [v.stage for v in local]
    assert not any(v["degraded"] for v in res.verdicts)
    for v in res.verdicts:
        depth = {"Root": 1, "Verify": 2}.get(v["stage"], 3)
        assert v["hops"] == [NEAR_EDGE, FAR_EDGE, CLOUD][:depth]
    assert len(qpath.read_text().splitlines()) == n_unknown == nodes[CLOUD].notices
    assert set(res.percentiles()) >= {"p50", "p99"}


def test_benign_answered_at_near_edge_without_any_upstream(trained):
    pipe, bundle, test = trained
    X = _benign_root_rows(pipe, test)

    async def go():
        servers, nodes, (h, p) = await _chain(bundle, with_upper=False)
        try:
            return await replay_async(X, h, p), nodes[NEAR_EDGE]
        finally:
            await _close(servers)

    res, near = asyncio.run(go())
    assert res.stage_counts == {"Root": len(X)} and near.stats["forwarded"] == 0
    assert all(v["hops"] == [NEAR_EDGE] and not v["degraded"] for v in res.verdicts)


def test_upstream_down_gives_degraded_attack_never_normal(trained):
    pipe, bundle, test = trained
    X = test.features[~test.is_benign][:50]
    local = pipe.classify_raw(X)
    pipe.drain_quarantine()
    flagged = [i for i, v in enumerate(local) if v.stage != ROOT]

    async def go():
        servers, _, (h, p) = await _chain(bundle, with_upper=False)
        try:
            return await replay_async(X, h, p)
        finally:
            await _close(servers)

    res = asyncio.run(go())
    for i in flagged:
        v = res.verdicts[i]
        assert v["final"] == DEGRADED_ATTACK and v["degraded"] and v["final"] != "Normal"


def test_handshake_mismatch_is_rejected(trained):
    _, bundle, _ = trained

    async def go():
        cloud = TierNode.from_bundle(CLOUD, bundle)
        server, addr = await _start(cloud)
        try:
            bad = Upstream(addr, FAR_EDGE, "not-the-fingerprint")
            with pytest.raises(ArtifactMismatch):
                await bad.request("Flow", {"features": [0.0]})
            good = Upstream(addr, FAR_EDGE, cloud.scaler_fp)
            reply = await good.request("Flow", {"features": [0.0] * cloud.scaler.n_features})
            await good.close()
            return reply
        finally:
            await _close([server])

    reply = asyncio.run(go())
    assert reply.kind == "Verdict" and reply.payload["hops"] == [CLOUD]


def test_bad_frames_and_ids_drop_the_connection(trained):
    _, bundle, _ = trained

    async def go():
        cloud = TierNode.from_bundle(CLOUD, bundle)
        server, addr = await _start(cloud)
        out = []
        try:
            r, w = await asyncio.open_connection(*addr)
            w.write(struct.pack(">I", 5) + b"{oops")
            await w.drain()
            out.append(await read_message(r))
            w.close()
            r, w = await asyncio.open_connection(*addr)
            await write_message(w, TierMessage("Health", 5, {}))
            out.append((await read_message(r)).payload["status"])
            await write_message(w, TierMessage("Health", 5, {}))  # id did not increase
            out.append(await read_message(r))
            w.close()
            r, w = await asyncio.open_connection(*addr)
            await write_message(w, TierMessage("Flow", 1, {"features": [1.0, 2.0]}))
            out.append((await read_message(r)).payload)
            w.close()
        finally:
            await _close([server])
        return out

    dropped, status, dropped2, invalid = asyncio.run(go())
    assert dropped is None and status == "ok" and dropped2 is None
    assert invalid["final"] == "Invalid" and invalid["degraded"]


def test_replay_rate_zero_sends_nothing():
    res = asyncio.run(replay_async(np.zeros((10, 3)), "127.0.0.1", 1, rate=0))
    assert res.verdicts == [] and res.reconnects == 0


def test_replay_reconnects_and_resends(trained):
    pipe, bundle, test = trained
    X = test.features[:120]
    local = [v.final for v in pipe.classify_raw(X)]
    pipe.drain_quarantine()

    async def go():
        servers, nodes, near_addr = await _chain(bundle)
        near = nodes[NEAR_EDGE]
        seen = {"n": 0}

        async def flaky(reader, writer):
            seen["n"] += 1
            if seen["n"] == 1:  # answer a few flows and then hang up
                for _ in range(10):
                    msg = await read_message(reader)
                    if msg is None:
                        break
                writer.close()
                return
            await near.handle(reader, writer)

        proxy = await asyncio.start_server(flaky, "127.0.0.1", 0)
        h, p = proxy.sockets[0].getsockname()[:2]
        try:
            return await replay_async(X, h, p)
        finally:
            await _close(servers + [proxy])

    res = asyncio.run(go())
    assert res.reconnects >= 1
    assert [v["final"] for v in res.verdicts] == local
    assert json.dumps(res.summary())
