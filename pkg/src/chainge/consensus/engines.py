"""Engine selection and the PBFT per-height voting state machine.

Two engines exist. Devmode trusts a round-robin leader per height; PBFT
runs the three-phase vote with a crash/partition fault model. Which one
governs a height is a pure function of committed state: the algorithm
setting committed strictly before that height. Every node evaluates it
over the same committed chain, so no height can be processed under two
different engines.

Safety in the PBFT path rests on commit-locking: a node that has sent
COMMIT for a block id at some height never prepares or commits a
different id at that height, in any view. Two conflicting ids can
therefore never both assemble 2f+1 COMMITs, and observing 2f+1 COMMITs
is proof a height is decided (that set doubles as the catch-up
certificate for nodes that were cut off).
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

from ..families.settings import CONSENSUS_SETTING
from ..ledger import ChainStore
from .messages import COMMIT, PREPARE, ConsensusMessage, verify_message


class EngineKind(enum.Enum):
    DEVMODE = "devmode"
    PBFT = "pbft"


def leader_for_height(roster: tuple[str, ...], height: int) -> str:
    """Round-robin proposer over the ordered validator roster."""
    if not roster:
        raise ValueError("validator roster is empty")
    return roster[height % len(roster)]


def pbft_primary(roster: tuple[str, ...], height: int, view: int) -> str:
    # view changes walk the roster starting at the height's natural leader
    if not roster:
        raise ValueError("validator roster is empty")
    return roster[(height + view) % len(roster)]


def engine_for_height(chain: ChainStore, height: int) -> EngineKind:
    """Engine governing the given height: the setting committed strictly
    before it; the genesis value applies until the first change."""
    value = chain.setting_at(CONSENSUS_SETTING, height - 1)
    if value == EngineKind.PBFT.value:
        return EngineKind.PBFT
    return EngineKind.DEVMODE


def quorum(n: int) -> int:
    """2f+1 for the largest f tolerated by n validators (n >= 3f+1)."""
    f = (n - 1) // 3
    return 2 * f + 1


@dataclass
class PbftInstance:
    """Voting state for one height. Discarded once the height commits."""

    height: int
    roster: tuple[str, ...]
    view: int = 0
    # block_id -> block dict, as received in PRE_PREPAREs
    proposals: dict = field(default_factory=dict)
    # (view, block_id) -> set of senders
    prepares: dict = field(default_factory=dict)
    # block_id -> sender -> commit message dict (the certificate material)
    commits: dict = field(default_factory=dict)
    # first PRE_PREPARE block_id seen per (view, sender), for equivocation
    preprepared: dict = field(default_factory=dict)
    flagged: set = field(default_factory=set)
    # commit-lock: the single block id this node may ever COMMIT at height
    locked_id: str | None = None
    prepared_sent: set = field(default_factory=set)  # views we sent PREPARE in
    commit_sent_views: set = field(default_factory=set)

    def need(self) -> int:
        return quorum(len(self.roster))

    def record_preprepare(self, msg: ConsensusMessage) -> str | None:
        """Returns the accepted block_id, or None when discarded."""
        if msg.sender in self.flagged:
            return None
        key = (msg.view, msg.sender)
        seen = self.preprepared.get(key)
        if seen is not None and seen != msg.block_id:
            self.flagged.add(msg.sender)  # equivocation: two proposals, one slot
            return None
        self.preprepared[key] = msg.block_id
        return msg.block_id

    def record_prepare(self, msg: ConsensusMessage) -> bool:
        """Count a PREPARE; True once (view, id) holds a quorum."""
        senders = self.prepares.setdefault((msg.view, msg.block_id), set())
        senders.add(msg.sender)
        return len(senders) >= self.need()

    def record_commit(self, msg: ConsensusMessage) -> bool:
        """Count a COMMIT; True once the id holds a quorum across views."""
        by_sender = self.commits.setdefault(msg.block_id, {})
        by_sender[msg.sender] = msg.to_dict()
        return len(by_sender) >= self.need()

    def certificate(self, block_id: str) -> list[dict]:
        commits = list(self.commits.get(block_id, {}).values())
        return commits[: self.need()]

    def may_prepare(self, block_id: str) -> bool:
        return self.locked_id is None or self.locked_id == block_id

    def lock(self, block_id: str) -> None:
        # first commit wins and is final for this height
        if self.locked_id is None:
            self.locked_id = block_id


def verify_commit_certificate(
    cert: list[dict], height: int, block_id: str, roster: tuple[str, ...]
) -> bool:
    """A certificate is 2f+1 valid COMMIT signatures for (height, block_id)
    from distinct roster members; views may differ."""
    senders: set[str] = set()
    for item in cert:
        try:
            msg = ConsensusMessage.from_dict(item)
        except (KeyError, TypeError):
            return False
        if msg.kind != COMMIT or msg.height != height or msg.block_id != block_id:
            return False
        if msg.sender not in roster or msg.sender in senders:
            return False
        if not verify_message(msg):
            return False
        senders.add(msg.sender)
    return len(senders) >= quorum(len(roster))
