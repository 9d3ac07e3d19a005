"""Block types, canonical hashing, nonce mining and chain validation.

Level-0 chains hold one :class:`VoteBlock` per cast ballot. Chains at level
1 and above hold :class:`BatchBlock` values whose ``lotb`` ("list of the
blocks") carries every child block committed in one sync round.

Every block hashes as SHA-256 over a ``|``-delimited pre-image, so field
values may not contain ``|`` or ``,``.
"""

from __future__ import annotations

import hashlib
from dataclasses import dataclass, field, replace
from functools import cached_property
from typing import Iterable, NamedTuple, Sequence, Union

BLANK = "BLANK"
DEFAULT_MINING_BUDGET = 2**26
_DELIMITERS = ("|", ",")


class ChainError(Exception):
    pass


class IllegalCharacter(ChainError, ValueError):
    pass


class MiningBudgetExceeded(ChainError):
    pass


class BrokenLink(ChainError):
    pass


class PatternViolation(ChainError):
    pass


class LevelMismatch(ChainError):
    pass


@dataclass(frozen=True)
class HashDigest:
    raw: bytes

    def __post_init__(self):
        if not isinstance(self.raw, bytes) or len(self.raw) != 32:
            raise ValueError("a digest is exactly 32 bytes")

    @property
    def hex(self) -> str:
        return self.raw.hex()

    @classmethod
    def from_hex(cls, text: str) -> HashDigest:
        if len(text) != 64 or text != text.lower():
            raise ValueError(f"not a lowercase 64-char hex digest: {text!r}")
        return cls(bytes.fromhex(text))

    @classmethod
    def of(cls, data: bytes) -> HashDigest:
        return cls(hashlib.sha256(data).digest())

    def __str__(self) -> str:
        return self.hex

    def __repr__(self) -> str:
        return f"HashDigest({self.hex[:12]}...)"


@dataclass(frozen=True)
class DifficultyPattern:
    """Required number of leading zero bits in a block digest."""

    zero_bits: int = 0

    def __post_init__(self):
        if not 0 <= self.zero_bits <= 256:
            raise ValueError("zero_bits must be within 0..256")


@dataclass(frozen=True)
class Difficulty:
    """Per-level difficulty; levels past the end of ``bits`` need no work."""

    bits: tuple[int, ...] = (8,)

    def at(self, level: int) -> DifficultyPattern:
        if level < len(self.bits):
            return DifficultyPattern(self.bits[level])
        return DifficultyPattern(0)


PatternLike = Union[DifficultyPattern, Difficulty]


def as_difficulty(patterns: PatternLike) -> Difficulty:
    """A bare pattern applies to level 0 only."""
    if isinstance(patterns, Difficulty):
        return patterns
    return Difficulty((patterns.zero_bits,))


def _check_delimiters(**fields: str) -> None:
    for name, value in fields.items():
        if not isinstance(value, str):
            raise TypeError(f"{name} must be a str, got {type(value).__name__}")
        for d in _DELIMITERS:
            if d in value:
                raise IllegalCharacter(f"{name} contains delimiter {d!r}: {value!r}")


@dataclass(frozen=True)
class Genesis:
    election_id: str
    level: int

    def __post_init__(self):
        _check_delimiters(election_id=self.election_id)

    def preimage(self) -> bytes:
        return f"G|{self.election_id}|{self.level}".encode()

    @cached_property
    def digest(self) -> HashDigest:
        return HashDigest.of(self.preimage())


@dataclass(frozen=True)
class VoteBlock:
    """One ballot. Carries no voter identity."""

    election_id: str
    ballot_box_id: str
    candidate_id: str
    prev_hash: HashDigest
    nonce: str = "0"

    level = 0

    def __post_init__(self):
        _check_delimiters(
            election_id=self.election_id,
            ballot_box_id=self.ballot_box_id,
            candidate_id=self.candidate_id,
            nonce=self.nonce,
        )

    def prefix(self) -> bytes:
        return (
            f"V|{self.election_id}|{self.ballot_box_id}|{self.candidate_id}"
            f"|{self.prev_hash.hex}|"
        ).encode()

    def preimage(self) -> bytes:
        return self.prefix() + self.nonce.encode()

    @cached_property
    def digest(self) -> HashDigest:
        return HashDigest.of(self.preimage())


@dataclass(frozen=True)
class BatchBlock:
    election_id: str
    level: int
    round: int
    prev_hash: HashDigest
    lotb: tuple = ()
    nonce: str = ""

    def __post_init__(self):
        _check_delimiters(election_id=self.election_id, nonce=self.nonce)
        if self.level < 1:
            raise LevelMismatch("batch blocks live at level 1 or above")
        if not isinstance(self.lotb, tuple):
            object.__setattr__(self, "lotb", tuple(self.lotb))

    def prefix(self) -> bytes:
        children = ",".join(hash_of(c).hex for c in self.lotb)
        return (
            f"B|{self.election_id}|{self.level}|{self.round}"
            f"|{self.prev_hash.hex}|{children}|"
        ).encode()

    def preimage(self) -> bytes:
        return self.prefix() + self.nonce.encode()

    @cached_property
    def digest(self) -> HashDigest:
        return HashDigest.of(self.preimage())


Block = Union[Genesis, VoteBlock, BatchBlock]


def canonical_bytes(block: Block) -> bytes:
    return block.preimage()


def hash_of(block: Block) -> HashDigest:
    # blocks are frozen, so the cached digest can never go stale
    return block.digest


def _leading_zero_ok(raw: bytes, zero_bits: int) -> bool:
    if zero_bits == 0:
        return True
    if zero_bits <= 64:
        return int.from_bytes(raw[:8], "big") >> (64 - zero_bits) == 0
    return int.from_bytes(raw, "big") >> (256 - zero_bits) == 0


def matches_pattern(digest: HashDigest | bytes, pattern: DifficultyPattern) -> bool:
    raw = digest.raw if isinstance(digest, HashDigest) else digest
    return _leading_zero_ok(raw, pattern.zero_bits)


def mine(draft: VoteBlock | BatchBlock, pattern: DifficultyPattern,
         budget: int = DEFAULT_MINING_BUDGET) -> str:
    """Return the smallest decimal nonce whose block digest fits ``pattern``.

    Candidates are tried in order 0, 1, 2, ...; the answer therefore depends
    only on the draft's other fields.
    """
    bits = pattern.zero_bits
    base = hashlib.sha256(draft.prefix())
    for n in range(budget):
        h = base.copy()
        h.update(str(n).encode())
        if _leading_zero_ok(h.digest(), bits):
            return str(n)
    raise MiningBudgetExceeded(f"no nonce within {budget} attempts at {bits} zero bits")


def mined(draft, pattern: DifficultyPattern, budget: int = DEFAULT_MINING_BUDGET):
    """The draft with its mined nonce filled in."""
    return replace(draft, nonce=mine(draft, pattern, budget))


@dataclass(frozen=True)
class Chain:
    level: int
    blocks: tuple = field(default_factory=tuple)

    @classmethod
    def new(cls, election_id: str, level: int) -> Chain:
        return cls(level, (Genesis(election_id, level),))

    @property
    def election_id(self) -> str:
        return self.blocks[0].election_id

    @property
    def tip(self) -> Block:
        return self.blocks[-1]

    @property
    def tip_hash(self) -> HashDigest:
        return hash_of(self.blocks[-1])

    def __len__(self) -> int:
        return len(self.blocks)

    def body(self) -> tuple:
        """Blocks after genesis."""
        return self.blocks[1:]


class ChainFault(NamedTuple):
    index: int
    reason: str


def block_fault(block, level: int, election_id: str, patterns: PatternLike) -> str | None:
    """Why ``block`` is not valid at ``level`` on its own, or None.

    Checks shape, election, nonce pattern and (recursively) every lotb child.
    Link checks against neighbours are the caller's job.
    """
    patterns = as_difficulty(patterns)
    if block.election_id != election_id:
        return f"election {block.election_id!r} != {election_id!r}"
    if level == 0:
        if not isinstance(block, VoteBlock):
            return f"expected a vote block at level 0, got {type(block).__name__}"
        if not block.nonce.isdigit() or not block.nonce.isascii():
            return f"nonce {block.nonce!r} is not a decimal integer"
        if not matches_pattern(hash_of(block), patterns.at(0)):
            return "digest does not match the level-0 pattern"
        return None
    if not isinstance(block, BatchBlock):
        return f"expected a batch block at level {level}, got {type(block).__name__}"
    if block.level != level:
        return f"batch level {block.level} at chain level {level}"
    pattern = patterns.at(level)
    if pattern.zero_bits:
        if not block.nonce.isdigit() or not block.nonce.isascii():
            return f"nonce {block.nonce!r} is not a decimal integer"
        if not matches_pattern(hash_of(block), pattern):
            return f"digest does not match the level-{level} pattern"
    elif block.nonce and not (block.nonce.isdigit() and block.nonce.isascii()):
        return f"nonce {block.nonce!r} is not a decimal integer"
    for j, child in enumerate(block.lotb):
        why = block_fault(child, level - 1, election_id, patterns)
        if why:
            return f"lotb[{j}]: {why}"
    return None


def append(chain: Chain, block, patterns: PatternLike) -> Chain:
    """Return ``chain`` extended by ``block``; the input chain is untouched."""
    if block.prev_hash != chain.tip_hash:
        raise BrokenLink("prev_hash does not match the chain tip")
    if block.election_id != chain.election_id:
        raise LevelMismatch(f"block of election {block.election_id!r} on {chain.election_id!r}")
    kind = VoteBlock if chain.level == 0 else BatchBlock
    if not isinstance(block, kind) or block.level != chain.level:
        raise LevelMismatch(f"{type(block).__name__} cannot join a level-{chain.level} chain")
    why = block_fault(block, chain.level, chain.election_id, patterns)
    if why:
        raise PatternViolation(why)
    return Chain(chain.level, chain.blocks + (block,))


def validate_chain(chain: Chain, patterns: PatternLike) -> ChainFault | None:
    """First failing block of ``chain`` as ``(index, reason)``; None when valid."""
    blocks = chain.blocks
    if not blocks:
        return ChainFault(0, "chain has no genesis block")
    first = blocks[0]
    if not isinstance(first, Genesis) or first.level != chain.level:
        return ChainFault(0, "first block is not this level's genesis")
    election_id = first.election_id
    for i in range(1, len(blocks)):
        block = blocks[i]
        if block.prev_hash != hash_of(blocks[i - 1]):
            return ChainFault(i, "prev_hash does not match the previous block")
        why = block_fault(block, chain.level, election_id, patterns)
        if why:
            return ChainFault(i, why)
    return None


def iter_votes(blocks: Iterable) -> Iterable[VoteBlock]:
    """Depth-first unwrap of blocks down to votes, in lotb order."""
    for block in blocks:
        if isinstance(block, VoteBlock):
            yield block
        elif isinstance(block, BatchBlock):
            yield from iter_votes(block.lotb)


def batch_hash(blocks: Sequence) -> HashDigest:
    return HashDigest.of(",".join(hash_of(b).hex for b in blocks).encode())


class Lineage:
    """Committed history seen from one chain, used to admit new lotb children.

    Every vote must continue its ballot box's sequence (starting from the
    level-0 genesis), every child batch must extend the level-L genesis or a
    batch nobody has extended yet, and no block may be committed twice.
    """

    def __init__(self, election_id: str):
        self.election_id = election_id
        self.vote_tips: dict[str, HashDigest] = {}
        self.open_batches: dict[int, set] = {}
        self.seen: set = set()
        self._genesis: dict[int, HashDigest] = {}

    def genesis_hash(self, level: int) -> HashDigest:
        if level not in self._genesis:
            self._genesis[level] = Genesis(self.election_id, level).digest
        return self._genesis[level]

    def fault(self, children: Sequence) -> str | None:
        """Reason the children cannot be committed next, or None. No mutation."""
        scratch = _Scratch(self)
        return scratch.walk(children)

    def commit(self, children: Sequence, strict: bool = True) -> None:
        """Record children as committed. With ``strict=False`` a faulty batch
        (one a colluding quorum forced through) is absorbed anyway."""
        scratch = _Scratch(self, strict)
        why = scratch.walk(children)
        if why and strict:
            raise BrokenLink(why)
        self.vote_tips.update(scratch.tips)
        self.seen |= scratch.seen
        for level, claimed in scratch.claimed.items():
            self.open_batches.get(level, set()).difference_update(claimed)
        for level, opened in scratch.opened.items():
            self.open_batches.setdefault(level, set()).update(opened)

    @classmethod
    def of_chain(cls, chain: Chain) -> Lineage:
        lineage = cls(chain.election_id)
        for block in chain.body():
            lineage.commit(block.lotb)
        return lineage


class _Scratch:
    def __init__(self, base: Lineage, strict: bool = True):
        self.base = base
        self.strict = strict
        self.error: str | None = None
        self.tips: dict[str, HashDigest] = {}
        self.seen: set = set()
        self.claimed: dict[int, set] = {}
        self.opened: dict[int, set] = {}

    def walk(self, children) -> str | None:
        for child in children:
            why = self._admit(child)
            if why:
                self.error = self.error or why
                if self.strict:
                    return why
        return self.error

    def _admit(self, child) -> str | None:
        h = hash_of(child)
        if h in self.seen or h in self.base.seen:
            return f"block {h.hex[:12]} committed twice"
        self.seen.add(h)
        if isinstance(child, VoteBlock):
            box = child.ballot_box_id
            expected = self.tips.get(box) or self.base.vote_tips.get(box) or self.base.genesis_hash(0)
            self.tips[box] = h
            if child.prev_hash != expected:
                return f"vote sequence of {box} broken at {h.hex[:12]}"
            return None
        if isinstance(child, BatchBlock):
            level = child.level
            prev = child.prev_hash
            claimed = self.claimed.setdefault(level, set())
            opened = self.opened.setdefault(level, set())
            why = None
            if prev in opened:
                opened.discard(prev)
            elif prev in self.base.open_batches.get(level, ()) and prev not in claimed:
                claimed.add(prev)
            elif prev != self.base.genesis_hash(level):
                why = f"level-{level} batch {h.hex[:12]} extends an unknown or taken block"
            opened.add(h)
            if why and self.strict:
                return why
            return self.walk(child.lotb) or why
        return f"unexpected {type(child).__name__} inside lotb"
