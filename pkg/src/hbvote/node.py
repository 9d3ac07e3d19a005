"""Level-0 voting centers."""

from __future__ import annotations

import os
from dataclasses import dataclass
from pathlib import Path

from .chain import Chain, Difficulty, HashDigest, VoteBlock, append, hash_of, mined


class NodeError(Exception):
    pass


class VotingPaused(NodeError):
    pass


class CenterUnavailable(NodeError):
    pass


class InvalidCandidate(NodeError):
    pass


class StaleAck(NodeError):
    pass


@dataclass(frozen=True)
class SyncAck:
    round: int
    flag: str  # "accept" | "decline"
    accepted_size: int = 0

    def __post_init__(self):
        if self.flag not in ("accept", "decline"):
            raise ValueError(f"bad flag {self.flag!r}")
        if self.flag == "decline" and self.accepted_size:
            raise ValueError("a decline acknowledges nothing")

    @property
    def accepted(self) -> bool:
        return self.flag == "accept"


@dataclass(frozen=True)
class Receipt:
    block_hash: HashDigest
    position: int


def write_count(path: Path, count: int) -> None:
    """Atomic replace: a reader sees the old count or the new one, never half."""
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(f"{count}\n", encoding="ascii")
    os.replace(tmp, path)


def read_count(path: Path) -> int:
    text = Path(path).read_text(encoding="ascii")
    if not text.endswith("\n") or not text[:-1].isdigit():
        raise ValueError(f"malformed count file {path}")
    return int(text[:-1])


class Syncable:
    """Pending-batch and acknowledgement bookkeeping shared by every level.

    ``accepted_count`` counts non-genesis blocks the upper level has committed.
    """

    chain: Chain
    accepted_count: int
    count_path: Path | None

    def _init_sync(self, count_path):
        self.accepted_count = 0
        self.paused = False
        self.round: int | None = None
        self.count_path = Path(count_path) if count_path else None
        if self.count_path:
            self.count_path.parent.mkdir(parents=True, exist_ok=True)
            write_count(self.count_path, 0)

    def pending_batch(self) -> list:
        return list(self.chain.blocks[1 + self.accepted_count:])

    def set_paused(self, flag: bool, round: int | None = None) -> None:
        self.paused = flag
        if round is not None:
            self.round = round

    def apply_ack(self, ack: SyncAck) -> None:
        if ack.round != self.round:
            raise StaleAck(f"ack for round {ack.round}, node is in round {self.round}")
        if not ack.accepted:
            return
        if ack.accepted_size > len(self.chain.blocks) - 1 - self.accepted_count:
            raise StaleAck("ack covers blocks this node never produced")
        self.accepted_count += ack.accepted_size
        if self.count_path:
            write_count(self.count_path, self.accepted_count)


class VotingNode(Syncable):
    """A voting center serving exactly one ballot box."""

    def __init__(self, node_id: str, ballot_box_id: str, election_id: str, registry,
                 difficulty: Difficulty = Difficulty(), count_path=None,
                 mining_budget: int = 2**26):
        self.node_id = node_id
        self.ballot_box_id = ballot_box_id
        self.registry = registry
        self.difficulty = difficulty
        self.mining_budget = mining_budget
        self.chain = Chain.new(election_id, 0)
        self.down = False
        self._init_sync(count_path)

    def cast_vote(self, credentials, candidate_id: str) -> Receipt:
        if self.down:
            raise CenterUnavailable(self.node_id)
        if self.paused:
            raise VotingPaused(self.node_id)
        if candidate_id not in self.registry.candidates_for(self.ballot_box_id):
            raise InvalidCandidate(f"{candidate_id!r} is not on the {self.ballot_box_id} ballot")
        token = self.registry.validate(credentials, self.node_id)
        try:
            draft = VoteBlock(self.chain.election_id, self.ballot_box_id, candidate_id,
                              self.chain.tip_hash)
            block = mined(draft, self.difficulty.at(0), self.mining_budget)
            self.chain = append(self.chain, block, self.difficulty)
        except BaseException:
            self.registry.release(token)
            raise
        # flag only after the block is in: a crash here leaves an unflagged voter, not a lost vote
        self.registry.mark_voted(token)
        return Receipt(hash_of(block), len(self.chain.blocks) - 1)
