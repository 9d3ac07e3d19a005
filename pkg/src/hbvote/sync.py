"""Inter-level sync rounds and DPoS finalization of batch blocks.

A round pauses the lower members, collects each member's pending batch (every
delegate of the upper chain receives its own copy), checks that all copies
agree, lets the round's proposer build a :class:`BatchBlock`, and finalizes
it once more than ``quorum`` of the delegates approve. A decline leaves the
lower counts untouched, so the next attempt resends the same data.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field, replace
from fractions import Fraction
from typing import Mapping, Sequence

from .chain import (
    BLANK, BatchBlock, Chain, Difficulty, HashDigest, Lineage, VoteBlock,
    batch_hash, block_fault, hash_of, mined,
)
from .node import SyncAck, Syncable


class SyncError(Exception):
    pass


class RoundAlreadyOpen(SyncError):
    pass


class NotProposer(SyncError):
    pass


class RetryCapExceeded(SyncError):
    def __init__(self, cluster_id: str, attempts: int, outcome: CycleOutcome | None = None):
        super().__init__(f"{cluster_id}: {attempts} consecutive declines")
        self.cluster_id = cluster_id
        self.attempts = attempts
        self.outcome = outcome


@dataclass(frozen=True)
class BatchSubmission:
    source_chain_id: str
    round: int
    blocks: tuple
    batch_hash: HashDigest

    @classmethod
    def of(cls, source: str, round: int, blocks: Sequence) -> BatchSubmission:
        blocks = tuple(blocks)
        return cls(source, round, blocks, batch_hash(blocks))

    def intact(self) -> bool:
        return batch_hash(self.blocks) == self.batch_hash


@dataclass(frozen=True)
class DelegateSet:
    ids: tuple[str, ...]
    quorum: Fraction = Fraction(2, 3)
    colluding: frozenset = frozenset()

    def __post_init__(self):
        if not self.ids:
            raise ValueError("a delegate set cannot be empty")
        object.__setattr__(self, "ids", tuple(self.ids))
        object.__setattr__(self, "colluding", frozenset(self.colluding))

    def proposer(self, round: int) -> str:
        return self.ids[round % len(self.ids)]

    def finalizes(self, approvals: int) -> bool:
        return approvals > self.quorum * len(self.ids)


@dataclass
class SyncRound:
    round: int
    level_pair: tuple[int, int]
    state: str = "collecting"  # open | collecting | deciding | acked
    submissions: dict = field(default_factory=dict)


@dataclass(frozen=True)
class Consistency:
    consistent: bool
    batches: dict  # source -> tuple of blocks, only when consistent
    reason: str = ""


@dataclass(frozen=True)
class Finalization:
    finalized: bool
    approvals: int
    reason: str = ""
    chain: Chain | None = None


class ClusterNode(Syncable):
    """An upper-level chain, replicated on every one of its delegates."""

    def __init__(self, cluster_id: str, level: int, election_id: str, members: Sequence[str],
                 delegates: DelegateSet | None = None, count_path=None):
        self.cluster_id = cluster_id
        self.level = level
        self.members = tuple(sorted(members))
        self.delegates = delegates or DelegateSet(self.members)
        genesis = Chain.new(election_id, level)
        self.replicas = {d: genesis for d in self.delegates.ids}
        self.lineage = Lineage(election_id)
        self.next_round = 0
        self.open: SyncRound | None = None
        self._init_sync(count_path)

    @property
    def chain(self) -> Chain:
        return self.replicas[self.delegates.ids[0]]

    def replicas_agree(self) -> bool:
        tips = {c.tip_hash for c in self.replicas.values()}
        return len(tips) == 1


def open_round(cluster: ClusterNode, round: int, members: Mapping[str, Syncable]) -> SyncRound:
    if cluster.open is not None:
        raise RoundAlreadyOpen(f"{cluster.cluster_id} round {cluster.open.round} is still open")
    if round < cluster.next_round:
        raise SyncError(f"round {round} does not follow {cluster.next_round - 1}")
    for member in members.values():
        member.set_paused(True, round=round)
    cluster.next_round = round + 1
    cluster.open = SyncRound(round, (cluster.level - 1, cluster.level))
    return cluster.open


def check_consistency(submissions: Sequence[BatchSubmission], expected_sources) -> Consistency:
    """Unanimity: every expected source reported and all its copies agree."""
    by_source: dict[str, list[BatchSubmission]] = {}
    for sub in submissions:
        by_source.setdefault(sub.source_chain_id, []).append(sub)
    missing = sorted(set(expected_sources) - set(by_source))
    if missing:
        return Consistency(False, {}, "silent: " + " ".join(missing))
    batches = {}
    for source in sorted(by_source):
        subs = by_source[source]
        if any(not s.intact() for s in subs):
            return Consistency(False, {}, f"{source}: batch hash does not match its blocks")
        if len({s.batch_hash for s in subs}) != 1:
            return Consistency(False, {}, f"{source}: divergent batches")
        batches[source] = subs[0].blocks
    return Consistency(True, batches)


def propose_block(proposer: str, round: int, agreed_batches: Mapping[str, Sequence],
                  upper_chain: Chain, delegates: DelegateSet,
                  difficulty: Difficulty = Difficulty()) -> BatchBlock:
    if proposer != delegates.proposer(round):
        raise NotProposer(f"{proposer} is not the proposer of round {round}")
    lotb = tuple(b for source in sorted(agreed_batches) for b in agreed_batches[source])
    block = BatchBlock(upper_chain.election_id, upper_chain.level, round, upper_chain.tip_hash, lotb)
    pattern = difficulty.at(upper_chain.level)
    if pattern.zero_bits:
        block = mined(block, pattern)
    return block


def verify_proposal(proposal, chain: Chain, difficulty: Difficulty,
                    lineage: Lineage | None = None) -> str | None:
    """One honest delegate's check against its own replica."""
    if not isinstance(proposal, BatchBlock) or proposal.level != chain.level:
        return "not a batch block for this level"
    if proposal.prev_hash != chain.tip_hash:
        return "prev_hash does not extend the replica tip"
    why = block_fault(proposal, chain.level, chain.election_id, difficulty)
    if why:
        return why
    if lineage is not None:
        return lineage.fault(proposal.lotb)
    return None


def dpos_finalize(delegates: DelegateSet, proposal, upper_chain: Chain,
                  difficulty: Difficulty = Difficulty(), lineage: Lineage | None = None,
                  replicas: Mapping[str, Chain] | None = None) -> Finalization:
    approvals = 0
    reasons = []
    for d in delegates.ids:
        if d in delegates.colluding:
            approvals += 1
            continue
        replica = replicas[d] if replicas else upper_chain
        why = verify_proposal(proposal, replica, difficulty, lineage)
        if why is None:
            approvals += 1
        else:
            reasons.append(why)
    if not delegates.finalizes(approvals):
        reason = reasons[0] if reasons else "quorum not reached"
        return Finalization(False, approvals, reason)
    return Finalization(True, approvals, "", Chain(upper_chain.level, upper_chain.blocks + (proposal,)))


def corrupt_batch(blocks: Sequence, election_id: str) -> tuple:
    """What a Byzantine member sends instead of its real batch."""
    blocks = list(blocks)
    if not blocks:
        forged = VoteBlock(election_id, "forged", BLANK, HashDigest(bytes(32)))
        return (forged,)
    first = blocks[0]
    if isinstance(first, VoteBlock):
        other = "FORGED" if first.candidate_id == BLANK else BLANK
        blocks[0] = replace(first, candidate_id=other)
    else:
        blocks[0] = replace(first, round=first.round + 1)
    return tuple(blocks)


class Network:
    """Seeded latency model: every message takes ``latency_ms`` plus jitter."""

    def __init__(self, latency_ms: int = 100, jitter_ms: int = 20, seed=0):
        self.latency_ms = latency_ms
        self.jitter_ms = jitter_ms
        self.rng = random.Random(f"net:{seed}")

    def delay(self) -> int:
        return self.latency_ms + (self.rng.randint(0, self.jitter_ms) if self.jitter_ms else 0)

    @property
    def timeout_ms(self) -> int:
        return 3 * (self.latency_ms + self.jitter_ms)


@dataclass
class CycleOutcome:
    accepted: bool
    t_end: int
    attempts: int
    acks: dict = field(default_factory=dict)
    log: list = field(default_factory=list)


def run_sync_cycle(cluster: ClusterNode, members: Mapping[str, Syncable], t_open: int,
                   net: Network, difficulty: Difficulty = Difficulty(), retry_cap: int = 10,
                   faults: dict | None = None, kind: str = "scheduled",
                   resume: bool = True) -> CycleOutcome:
    """Pause, collect, check, propose, finalize and acknowledge until accepted.

    ``faults`` maps ``(source, round)`` to ``"drop"`` or ``"byzantine"``; a
    matching entry is consumed when that round runs. Raises
    :class:`RetryCapExceeded` after ``retry_cap`` consecutive declines; the
    members stay in sync with the last decline either way.
    """
    faults = faults if faults is not None else {}
    election_id = cluster.chain.election_id
    n_delegates = len(cluster.delegates.ids)
    outcome = CycleOutcome(False, t_open, 0)
    t = t_open
    while True:
        rnd = cluster.next_round
        sync = open_round(cluster, rnd, members)
        deadline = t + net.timeout_ms
        arrivals = []
        submissions = []
        sizes = {}
        for source in sorted(members):
            blocks = tuple(members[source].pending_batch())
            sizes[source] = len(blocks)
            fault = faults.pop((source, rnd), None)
            if fault == "drop":
                continue
            arrive = t + net.delay() + net.delay()
            if arrive > deadline:
                continue
            arrivals.append(arrive)
            honest = BatchSubmission.of(source, rnd, blocks)
            bad = BatchSubmission.of(source, rnd, corrupt_batch(blocks, election_id)) if fault == "byzantine" else None
            for j in range(n_delegates):
                received = bad if bad is not None and (j % 2 == 1 or n_delegates == 1) else honest
                submissions.append(received)
            sync.submissions[source] = honest
        t_collect = max(arrivals) if len(arrivals) == len(members) else deadline
        sync.state = "deciding"
        consistency = check_consistency(submissions, members)
        approvals = 0
        if consistency.consistent:
            proposer = cluster.delegates.proposer(rnd)
            proposal = propose_block(proposer, rnd, consistency.batches, cluster.chain,
                                     cluster.delegates, difficulty)
            fin = dpos_finalize(cluster.delegates, proposal, cluster.chain, difficulty,
                                cluster.lineage, cluster.replicas)
            t_decided = t_collect + net.delay() + net.delay()
            approvals = fin.approvals
            accepted, reason = fin.finalized, fin.reason
            if accepted:
                for d in cluster.replicas:
                    cluster.replicas[d] = fin.chain
                cluster.lineage.commit(proposal.lotb, strict=False)
        else:
            t_decided = t_collect
            accepted, reason = False, consistency.reason
        t_end = t_decided + net.delay()
        acks = {}
        for source in sorted(members):
            ack = SyncAck(rnd, "accept", sizes[source]) if accepted else SyncAck(rnd, "decline")
            members[source].apply_ack(ack)
            acks[source] = ack
        sync.state = "acked"
        cluster.open = None
        outcome.log.append({
            "round": rnd,
            "cluster": cluster.cluster_id,
            "levels": [cluster.level - 1, cluster.level],
            "kind": kind,
            "attempt": outcome.attempts,
            "t_open_ms": t,
            "duration_ms": t_end - t,
            "flag": "accept" if accepted else "decline",
            "approvals": approvals,
            "reason": reason,
            "batch_sizes": sizes,
        })
        outcome.attempts += 1
        outcome.acks = acks
        outcome.t_end = t_end
        t = t_end
        if accepted:
            outcome.accepted = True
            break
        if outcome.attempts >= retry_cap:
            break
    if resume:
        for member in members.values():
            member.set_paused(False)
    if not outcome.accepted:
        raise RetryCapExceeded(cluster.cluster_id, outcome.attempts, outcome)
    return outcome
