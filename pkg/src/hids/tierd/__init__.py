"""Networked near-edge / far-edge / cloud deployment of the pipeline."""

from .node import CLOUD, FAR_EDGE, NEAR_EDGE, ROLES, NodeRole, TierNode, parse_role, run_node
from .protocol import FrameDecoder, TierMessage, decode, encode
from .replay import ReplayResult, replay, replay_async

__all__ = [
    "CLOUD", "FAR_EDGE", "NEAR_EDGE", "ROLES", "NodeRole", "TierNode", "parse_role", "run_node",
    "FrameDecoder", "TierMessage", "decode", "encode", "ReplayResult", "replay", "replay_async",
]
