"""Line-delimited JSON chain files.

One block per line, genesis first. Every object carries the same keys in the
same order; keys a block kind does not use are ``null``. Encoding is compact
(no insignificant whitespace), so each block has exactly one valid line.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

from .chain import BatchBlock, Chain, Genesis, HashDigest, IllegalCharacter, VoteBlock

KEYS = ("kind", "election_id", "level", "round", "ballot_box_id",
        "candidate_id", "prev_hash", "nonce", "lotb")


class ParseError(ValueError):
    def __init__(self, line: int, message: str = "unparseable block"):
        super().__init__(f"line {line}: {message}")
        self.line = line
        self.message = message


def block_to_obj(block) -> dict:
    if isinstance(block, Genesis):
        values = ("genesis", block.election_id, block.level, None, None, None, None, None, None)
    elif isinstance(block, VoteBlock):
        values = ("vote", block.election_id, 0, None, block.ballot_box_id,
                  block.candidate_id, block.prev_hash.hex, block.nonce, None)
    elif isinstance(block, BatchBlock):
        values = ("batch", block.election_id, block.level, block.round, None, None,
                  block.prev_hash.hex, block.nonce, [block_to_obj(c) for c in block.lotb])
    else:
        raise TypeError(f"not a block: {block!r}")
    return dict(zip(KEYS, values))


def dumps_block(block) -> str:
    return json.dumps(block_to_obj(block), ensure_ascii=False, separators=(",", ":"))


def _int(value, name):
    # bool is an int subclass; reject it explicitly
    if type(value) is not int or value < 0:
        raise ValueError(f"{name} must be a non-negative integer")
    return value


def _str(value, name):
    if type(value) is not str:
        raise ValueError(f"{name} must be a string")
    return value


def _null(obj, *names):
    for name in names:
        if obj[name] is not None:
            raise ValueError(f"{name} must be null for a {obj['kind']} block")


def obj_to_block(obj):
    if type(obj) is not dict or tuple(obj) != KEYS:
        raise ValueError("keys missing, extra or out of order")
    kind = obj["kind"]
    election_id = _str(obj["election_id"], "election_id")
    if kind == "genesis":
        _null(obj, "round", "ballot_box_id", "candidate_id", "prev_hash", "nonce", "lotb")
        return Genesis(election_id, _int(obj["level"], "level"))
    if kind == "vote":
        _null(obj, "round", "lotb")
        if obj["level"] != 0 or type(obj["level"]) is not int:
            raise ValueError("vote blocks have level 0")
        return VoteBlock(election_id, _str(obj["ballot_box_id"], "ballot_box_id"),
                         _str(obj["candidate_id"], "candidate_id"),
                         HashDigest.from_hex(_str(obj["prev_hash"], "prev_hash")),
                         _str(obj["nonce"], "nonce"))
    if kind == "batch":
        _null(obj, "ballot_box_id", "candidate_id")
        if type(obj["lotb"]) is not list:
            raise ValueError("lotb must be a list")
        return BatchBlock(election_id, _int(obj["level"], "level"), _int(obj["round"], "round"),
                          HashDigest.from_hex(_str(obj["prev_hash"], "prev_hash")),
                          tuple(obj_to_block(c) for c in obj["lotb"]),
                          _str(obj["nonce"], "nonce"))
    raise ValueError(f"unknown kind {kind!r}")


def parse_line(text: str, lineno: int):
    """Decode one line into a block, raising :class:`ParseError` on any defect
    of syntax or shape. Canonical encoding is checked separately."""
    try:
        obj = json.loads(text, object_pairs_hook=_strict_pairs)
        return obj_to_block(obj)
    except (ValueError, TypeError, IllegalCharacter) as exc:
        raise ParseError(lineno, str(exc)) from None


def _strict_pairs(pairs):
    obj = {}
    for key, value in pairs:
        if key in obj:
            raise ValueError(f"duplicate key {key!r}")
        obj[key] = value
    return obj


def read_lines(path: str | os.PathLike) -> list[str]:
    """Raw lines of a chain file; the final newline is required."""
    data = Path(path).read_bytes()
    if not data:
        raise ParseError(1, "empty file")
    try:
        text = data.decode("utf-8")
    except UnicodeDecodeError as exc:
        line = data[: exc.start].count(b"\n") + 1
        raise ParseError(line, "invalid UTF-8") from None
    if not text.endswith("\n"):
        raise ParseError(text.count("\n") + 1, "missing final newline")
    return text[:-1].split("\n")


def load_chain(path: str | os.PathLike) -> Chain:
    """Strict import: every line must parse and be canonically encoded."""
    blocks = []
    for lineno, text in enumerate(read_lines(path), start=1):
        block = parse_line(text, lineno)
        if dumps_block(block) != text:
            raise ParseError(lineno, "non-canonical encoding")
        blocks.append(block)
    first = blocks[0]
    if not isinstance(first, Genesis):
        raise ParseError(1, "first line is not a genesis block")
    return Chain(first.level, tuple(blocks))


def dump_chain(chain: Chain) -> str:
    return "".join(dumps_block(b) + "\n" for b in chain.blocks)


def save_chain(chain: Chain, path: str | os.PathLike) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(dump_chain(chain))
