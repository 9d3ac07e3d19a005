"""Mock e-government registry: authentication and the voted flag.

The registry is the only holder of voter identities. It hands out single-use
:class:`AuthToken` values; nothing it returns ever reaches a block.
"""

from __future__ import annotations

import hashlib
import itertools
import json
import threading
from dataclasses import dataclass
from pathlib import Path

from .chain import BLANK, HashDigest


class RegistryError(Exception):
    pass


class UnknownVoter(RegistryError):
    pass


class WrongPassword(RegistryError):
    pass


class WrongStation(RegistryError):
    pass


class AlreadyVoted(RegistryError):
    pass


class VoteInProgress(AlreadyVoted):
    """An unconsumed token already exists for this voter."""


class TokenAlreadyConsumed(RegistryError):
    pass


class TokenExpired(RegistryError):
    pass


class UnknownBallotBox(RegistryError, KeyError):
    def __str__(self):
        return Exception.__str__(self)


@dataclass(frozen=True)
class Credentials:
    voter_id: str
    password: str

    def __post_init__(self):
        if not self.voter_id or not self.password:
            raise ValueError("credentials need a voter id and a password")


@dataclass(frozen=True)
class Candidate:
    candidate_id: str
    name: str = ""


@dataclass(frozen=True)
class AuthToken:
    serial: int
    voter_id: str
    ballot_box_id: str
    issued_round: int


@dataclass
class VoterRecord:
    voter_id: str
    password_digest: HashDigest
    assigned_ballot_box: str
    voted: bool = False
    reassigned_to: str | None = None

    @property
    def effective_ballot_box(self) -> str:
        return self.reassigned_to or self.assigned_ballot_box


class CandidateRegistry:
    """Ballot box -> ordered candidates. ``BLANK`` is always offered last."""

    def __init__(self, boxes: dict[str, list[Candidate]] | None = None):
        self.boxes: dict[str, tuple[Candidate, ...]] = {}
        for box, candidates in (boxes or {}).items():
            self.add_box(box, candidates)

    def add_box(self, ballot_box_id: str, candidates) -> None:
        cands = tuple(c if isinstance(c, Candidate) else Candidate(*c) for c in candidates)
        ids = [c.candidate_id for c in cands]
        if BLANK in ids or len(set(ids)) != len(ids):
            raise ValueError(f"bad candidate list for {ballot_box_id}: {ids}")
        self.boxes[ballot_box_id] = cands

    def candidates_for(self, ballot_box_id: str) -> list[str]:
        try:
            cands = self.boxes[ballot_box_id]
        except KeyError:
            raise UnknownBallotBox(f"unknown ballot box {ballot_box_id!r}") from None
        return [c.candidate_id for c in cands] + [BLANK]

    def __contains__(self, ballot_box_id) -> bool:
        return ballot_box_id in self.boxes

    def to_json(self) -> dict:
        return {box: [[c.candidate_id, c.name] for c in cands] for box, cands in self.boxes.items()}

    @classmethod
    def from_json(cls, data: dict) -> CandidateRegistry:
        return cls({box: [Candidate(*c) for c in cands] for box, cands in data.items()})


def password_digest(salt: str, password: str) -> HashDigest:
    return HashDigest.of((salt + password).encode())


class Registry:
    """Voters, stations and candidates for one election.

    ``validate`` and ``mark_voted`` take a lock, so at most one token per voter
    is ever outstanding and the voted flag flips at most once.
    """

    def __init__(self, candidates: CandidateRegistry, stations: dict[str, str], salt: str = ""):
        self.candidates = candidates
        self.stations = dict(stations)  # node id -> ballot box it serves
        self.salt = salt
        self.voters: dict[str, VoterRecord] = {}
        self.round = 0
        self._lock = threading.Lock()
        self._serials = itertools.count()
        self._outstanding: dict[int, AuthToken] = {}
        self._consumed: set[int] = set()
        self._holder: dict[str, int] = {}  # voter id -> outstanding serial
        for box in self.stations.values():
            if box not in candidates:
                raise UnknownBallotBox(f"station serves unregistered box {box!r}")

    def add_voter(self, voter_id: str, password: str, ballot_box_id: str) -> None:
        if voter_id in self.voters:
            raise ValueError(f"duplicate voter id {voter_id!r}")
        if ballot_box_id not in self.candidates:
            raise UnknownBallotBox(f"unknown ballot box {ballot_box_id!r}")
        self.voters[voter_id] = VoterRecord(voter_id, password_digest(self.salt, password), ballot_box_id)

    def _record(self, voter_id: str) -> VoterRecord:
        try:
            return self.voters[voter_id]
        except KeyError:
            raise UnknownVoter(voter_id) from None

    def validate(self, credentials: Credentials, node_id: str) -> AuthToken:
        with self._lock:
            rec = self._record(credentials.voter_id)
            if password_digest(self.salt, credentials.password) != rec.password_digest:
                raise WrongPassword(credentials.voter_id)
            if self.stations.get(node_id) != rec.effective_ballot_box:
                raise WrongStation(f"{node_id} does not serve the voter's ballot box")
            if rec.voted:
                raise AlreadyVoted(credentials.voter_id)
            if rec.voter_id in self._holder:
                raise VoteInProgress(credentials.voter_id)
            token = AuthToken(next(self._serials), rec.voter_id, rec.effective_ballot_box, self.round)
            self._outstanding[token.serial] = token
            self._holder[rec.voter_id] = token.serial
            return token

    def mark_voted(self, token: AuthToken) -> None:
        with self._lock:
            if token.serial in self._consumed:
                raise TokenAlreadyConsumed(str(token.serial))
            if self._outstanding.get(token.serial) != token:
                raise TokenExpired(str(token.serial))
            rec = self.voters[token.voter_id]
            del self._outstanding[token.serial]
            del self._holder[token.voter_id]
            self._consumed.add(token.serial)
            rec.voted = True

    def release(self, token: AuthToken) -> None:
        """Drop an unused token, e.g. when the cast failed after validation."""
        with self._lock:
            if self._outstanding.pop(token.serial, None) is not None:
                del self._holder[token.voter_id]

    def end_round(self) -> None:
        """Expire every outstanding token and advance the round counter."""
        with self._lock:
            self._outstanding.clear()
            self._holder.clear()
            self.round += 1

    def candidates_for(self, ballot_box_id: str) -> list[str]:
        return self.candidates.candidates_for(ballot_box_id)

    def reassign(self, voter_id: str, new_ballot_box_id: str) -> None:
        with self._lock:
            rec = self._record(voter_id)
            if rec.voted:
                raise AlreadyVoted(voter_id)
            if new_ballot_box_id not in self.candidates:
                raise UnknownBallotBox(f"unknown ballot box {new_ballot_box_id!r}")
            rec.reassigned_to = new_ballot_box_id

    def voted_count(self) -> int:
        return sum(rec.voted for rec in self.voters.values())


def load_registry(voters_path, candidates_path, stations: dict[str, str], salt: str = "") -> tuple[Registry, dict[str, str]]:
    """Read the voter and candidate files.

    Voters: one ``{"voter_id", "password", "ballot_box_id"}`` object per line.
    Candidates: one ``{"ballot_box_id", "candidates": [{"candidate_id", "name"}]}``
    object per line. Returns the registry and the plain passwords (the
    workload needs them to cast).
    """
    candidates = CandidateRegistry()
    for line in Path(candidates_path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            candidates.add_box(obj["ballot_box_id"],
                               [Candidate(c["candidate_id"], c.get("name", "")) for c in obj["candidates"]])
    registry = Registry(candidates, stations, salt)
    passwords = {}
    for line in Path(voters_path).read_text(encoding="utf-8").splitlines():
        if line.strip():
            obj = json.loads(line)
            registry.add_voter(obj["voter_id"], obj["password"], obj["ballot_box_id"])
            passwords[obj["voter_id"]] = obj["password"]
    return registry, passwords
