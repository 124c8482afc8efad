"""Pluggable consensus over a deterministic simulated validator network."""

from .engines import EngineKind, engine_for_height, leader_for_height
from .messages import ConsensusMessage, make_message, verify_message
from .sim import LiveCluster, SimConfig, SimTrace, run_simulation
from .validator import ValidatorNode

__all__ = [
    "EngineKind",
    "engine_for_height",
    "leader_for_height",
    "ConsensusMessage",
    "make_message",
    "verify_message",
    "SimConfig",
    "SimTrace",
    "run_simulation",
    "LiveCluster",
    "ValidatorNode",
]
