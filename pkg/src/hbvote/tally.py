"""Counting from the top chains and third-party audit of exported chain files."""

from __future__ import annotations

import json
from collections import Counter
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

from .chain import (
    BLANK, Chain, Difficulty, Genesis, Lineage, PatternLike, VoteBlock, as_difficulty,
    block_fault, hash_of, iter_votes, validate_chain,
)
from .chainio import ParseError, dumps_block, parse_line, read_lines
from .registry import CandidateRegistry, UnknownBallotBox


class InvalidChain(ValueError):
    pass


class UnknownCandidate(ValueError):
    pass


@dataclass(frozen=True)
class Tie:
    candidates: tuple[str, ...]


@dataclass
class TallyResult:
    regions: dict[str, dict[str, int]]
    total: int
    winners: dict[str, str | Tie | None]

    def to_json(self) -> dict:
        out = {}
        for region, counts in self.regions.items():
            winner = self.winners[region]
            if isinstance(winner, Tie):
                winner = {"tie": list(winner.candidates)}
            out[region] = {"total": sum(counts.values()), "counts": dict(counts), "winner": winner}
        return {"total": self.total, "regions": out}

    def format(self) -> str:
        lines = [f"total votes: {self.total}"]
        for region, counts in self.regions.items():
            winner = self.winners[region]
            if isinstance(winner, Tie):
                shown = "tie " + "/".join(winner.candidates)
            else:
                shown = winner or "-"
            parts = " ".join(f"{c}={n}" for c, n in counts.items())
            lines.append(f"  {region}: {parts}  winner: {shown}")
        return "\n".join(lines)


def flatten(top_chain: Chain, patterns: PatternLike) -> list[VoteBlock]:
    """Every vote under ``top_chain``, chain order then lotb order."""
    fault = validate_chain(top_chain, patterns)
    if fault:
        raise InvalidChain(f"block {fault.index}: {fault.reason}")
    return list(iter_votes(top_chain.body()))


def flatten_all(chains: Iterable[Chain], patterns: PatternLike) -> list[VoteBlock]:
    votes = []
    for chain in chains:
        votes.extend(flatten(chain, patterns))
    return votes


def region_candidates(region_map: Mapping[str, str], candidates: CandidateRegistry) -> dict[str, list[str]]:
    """Per region, the union of its boxes' ballots in first-seen order, BLANK last."""
    order: dict[str, list[str]] = {}
    for box in sorted(region_map):
        seen = order.setdefault(region_map[box], [])
        for cand in candidates.candidates_for(box):
            if cand != BLANK and cand not in seen:
                seen.append(cand)
    return {r: order[r] + [BLANK] for r in sorted(order)}


def tally(votes: Iterable[VoteBlock], region_map: Mapping[str, str],
          candidates: CandidateRegistry) -> TallyResult:
    per_box = Counter((v.ballot_box_id, v.candidate_id) for v in votes)
    return tally_counts(per_box, region_map, candidates)


def tally_counts(per_box: Mapping[tuple[str, str], int], region_map: Mapping[str, str],
                 candidates: CandidateRegistry) -> TallyResult:
    """Same as :func:`tally`, from ``(box, candidate) -> count`` pairs."""
    layout = region_candidates(region_map, candidates)
    regions = {r: dict.fromkeys(cands, 0) for r, cands in layout.items()}
    allowed: dict[str, list[str]] = {}
    for (box, cand), n in sorted(per_box.items()):
        if box not in region_map:
            raise UnknownBallotBox(f"vote for unknown ballot box {box!r}")
        if box not in allowed:
            allowed[box] = candidates.candidates_for(box)
        if cand not in allowed[box]:
            raise UnknownCandidate(f"{cand!r} is not on the {box} ballot")
        regions[region_map[box]][cand] += n
    winners: dict[str, str | Tie | None] = {}
    for region, counts in regions.items():
        top = max(counts.values())
        if top == 0:
            winners[region] = None
            continue
        best = tuple(c for c, n in counts.items() if n == top)
        winners[region] = best[0] if len(best) == 1 else Tie(best)
    return TallyResult(regions, sum(per_box.values()), winners)


@dataclass
class PublicRecord:
    """Everything an outside auditor needs: no registry, no simulator state."""

    election_id: str
    difficulty: Difficulty
    candidates: CandidateRegistry
    regions: dict[str, str]
    heads: dict[str, dict] = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "election_id": self.election_id,
            "zero_bits": list(self.difficulty.bits),
            "candidates": self.candidates.to_json(),
            "regions": dict(self.regions),
            "heads": self.heads,
        }

    @classmethod
    def from_json(cls, data: dict) -> PublicRecord:
        return cls(data["election_id"], Difficulty(tuple(data["zero_bits"])),
                   CandidateRegistry.from_json(data["candidates"]), dict(data["regions"]),
                   dict(data.get("heads", {})))

    @classmethod
    def load(cls, path) -> PublicRecord:
        return cls.from_json(json.loads(Path(path).read_text(encoding="utf-8")))


@dataclass(frozen=True)
class Finding:
    path: str
    line: int
    message: str

    def __str__(self):
        return f"{self.path}:{self.line}: {self.message}"


@dataclass
class AuditReport:
    findings: list[Finding]
    tally: TallyResult | None
    blocks: int = 0

    @property
    def ok(self) -> bool:
        return not self.findings

    def to_json(self) -> dict:
        return {
            "ok": self.ok,
            "blocks": self.blocks,
            "findings": [{"path": f.path, "line": f.line, "message": f.message} for f in self.findings],
            "tally": self.tally.to_json() if self.tally else None,
        }


class AuditParseError(ParseError):
    def __init__(self, path: str, err: ParseError):
        super().__init__(err.line, err.message)
        self.path = path

    def __str__(self):
        return f"{self.path}:{self.line}: {self.message}"


def audit_file(path, public: PublicRecord) -> tuple[list[Finding], list[VoteBlock], int]:
    """Check one exported chain; returns findings, admissible votes and block count."""
    name = str(path)
    try:
        lines = read_lines(path)
        blocks = [parse_line(text, i) for i, text in enumerate(lines, start=1)]
    except ParseError as err:
        raise AuditParseError(name, err) from None
    findings: list[Finding] = []

    def flag(line, message):
        findings.append(Finding(name, line, message))

    for i, (text, block) in enumerate(zip(lines, blocks), start=1):
        if dumps_block(block) != text:
            flag(i, "non-canonical encoding")
    first = blocks[0]
    if not isinstance(first, Genesis):
        flag(1, "first block is not a genesis block")
        return findings, [], len(blocks)
    if first.election_id != public.election_id:
        flag(1, f"election {first.election_id!r} is not {public.election_id!r}")
    level = first.level
    lineage = Lineage(public.election_id)
    box = None
    votes: list[VoteBlock] = []
    for i in range(1, len(blocks)):
        block, lineno = blocks[i], i + 1
        if isinstance(block, Genesis):
            flag(lineno, "genesis block inside the chain")
            continue
        if block.prev_hash != hash_of(blocks[i - 1]):
            flag(lineno, "prev_hash does not match the previous line")
        why = block_fault(block, level, public.election_id, public.difficulty)
        if why:
            flag(lineno, why)
        if level == 0:
            box = box or getattr(block, "ballot_box_id", None)
            if isinstance(block, VoteBlock) and block.ballot_box_id != box:
                flag(lineno, f"ballot box changes from {box} to {block.ballot_box_id}")
            block_votes = [block] if isinstance(block, VoteBlock) else []
        else:
            lotb = getattr(block, "lotb", ())
            why = lineage.fault(lotb)
            if why:
                flag(lineno, why)
            lineage.commit(lotb, strict=False)
            block_votes = list(iter_votes(lotb))
        for vote in block_votes:
            if vote.ballot_box_id not in public.regions or vote.ballot_box_id not in public.candidates:
                flag(lineno, f"UnknownBallotBox: {vote.ballot_box_id}")
            elif vote.candidate_id not in public.candidates.candidates_for(vote.ballot_box_id):
                flag(lineno, f"UnknownCandidate: {vote.candidate_id} on {vote.ballot_box_id}")
            else:
                votes.append(vote)
    if public.heads:
        head = public.heads.get(Path(path).stem)
        if head is None:
            flag(len(blocks), "no published head for this chain")
        else:
            if head["level"] != level:
                flag(1, f"level {level} differs from the published level {head['level']}")
            if head["length"] != len(blocks):
                flag(len(blocks), f"{len(blocks)} blocks, published head says {head['length']}")
            if head["head"] != hash_of(blocks[-1]).hex:
                flag(len(blocks), "tip does not match the published head")
    return findings, votes, len(blocks)


def audit(paths: str | Path | Sequence, public: PublicRecord) -> AuditReport:
    """Re-verify exported chains and recount them from scratch.

    Raises :class:`AuditParseError` when a file cannot be decoded at all.
    """
    if isinstance(paths, (str, Path)):
        paths = [paths]
    findings: list[Finding] = []
    votes: list[VoteBlock] = []
    n_blocks = 0
    for path in paths:
        f, v, n = audit_file(path, public)
        findings.extend(f)
        votes.extend(v)
        n_blocks += n
    return AuditReport(findings, tally(votes, public.regions, public.candidates), n_blocks)
