"""Deterministic discrete-event simulation of an election day.

Time is simulated in integer milliseconds. Voters arrive uniformly over the
day, each sync interval every cluster runs a sync cycle (voting at its
centers pauses for ``pause_s`` or until the cycle completes, whichever is
later), and after the polls close one drain cycle per chain commits
everything left. All randomness comes from ``random.Random`` streams keyed by
the seed, so equal (config, faults) give equal runs.
"""

from __future__ import annotations

import heapq
import itertools
import json
import logging
import random
import string
from collections import Counter
from dataclasses import dataclass, field, replace
from pathlib import Path

from .chain import Chain, Difficulty, iter_votes, validate_chain
from .chainio import save_chain
from .config import ConfigInvalid, ElectionConfig
from .node import CenterUnavailable, VotingNode, VotingPaused
from .registry import AlreadyVoted, Candidate, CandidateRegistry, Credentials, Registry, load_registry
from .sync import ClusterNode, Network, RetryCapExceeded, run_sync_cycle
from .tally import InvalidChain, PublicRecord, TallyResult, flatten, tally, tally_counts

log = logging.getLogger(__name__)

FAULT_KINDS = ("tamper", "byzantine_submission", "center_down", "drop_submission")


class UnknownEntity(KeyError):
    def __str__(self):
        return Exception.__str__(self)


@dataclass(frozen=True)
class Fault:
    kind: str
    node: str
    at_s: float | None = None
    round: int | None = None
    block_index: int | None = None

    def __post_init__(self):
        if self.kind not in FAULT_KINDS:
            raise ValueError(f"unknown fault kind {self.kind!r}")
        timed = self.kind in ("tamper", "center_down")
        if timed and self.at_s is None:
            raise ValueError(f"{self.kind} needs at_s")
        if not timed and self.round is None:
            raise ValueError(f"{self.kind} needs round")
        if self.kind == "tamper" and self.block_index is None:
            raise ValueError("tamper needs block_index")

    @property
    def at_ms(self) -> int:
        return int(round(self.at_s * 1000))


def load_faults(path) -> list[Fault]:
    """One JSON object per line, e.g. ``{"kind": "drop_submission", "node": "c00-n01", "round": 3}``."""
    faults = []
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip() or line.lstrip().startswith("#"):
            continue
        try:
            faults.append(Fault(**json.loads(line)))
        except (TypeError, ValueError) as exc:
            raise ConfigInvalid(f"{path}:{lineno}: {exc}") from None
    return faults


def _width(n: int) -> int:
    return max(2, len(str(n - 1)))


@dataclass
class System:
    config: ElectionConfig
    difficulty: Difficulty
    registry: Registry
    passwords: dict[str, str]
    centers: dict[str, VotingNode]
    grid: list[list[str]]  # cluster index -> ordered center ids
    levels: list[dict[str, ClusterNode]]  # levels[k - 1] holds the level-k chains
    region_map: dict[str, str]
    net: Network
    run_dir: Path | None = None
    submission_faults: dict = field(default_factory=dict)
    incidents: list = field(default_factory=list)
    events: list = field(default_factory=list)
    round_log: list = field(default_factory=list)
    box_to_center: dict = field(default_factory=dict)

    def members_of(self, cluster: ClusterNode) -> dict:
        if cluster.level == 1:
            return {m: self.centers[m] for m in cluster.members}
        below = self.levels[cluster.level - 2]
        return {m: below[m] for m in cluster.members}

    def top_chains(self) -> list[Chain]:
        if not self.levels:
            return [c.chain for c in self.centers.values()]
        return [c.chain for c in self.levels[-1].values()]

    def entity(self, node_id: str):
        if node_id in self.centers:
            return self.centers[node_id]
        for level in self.levels:
            if node_id in level:
                return level[node_id]
        raise UnknownEntity(f"no node {node_id!r} in the topology")

    def incident(self, kind: str, entity: str, detail: str, t_ms: int | None = None) -> None:
        self.incidents.append({"kind": kind, "entity": entity, "detail": detail, "t_ms": t_ms})


def synthetic_candidates(config: ElectionConfig, boxes_by_cluster: list[list[str]]) -> CandidateRegistry:
    """Party list shared by all regions, plus an independent in every other region."""
    parties = [Candidate(f"P{k + 1}", f"Party {k + 1}") for k in range(config.candidates)]
    registry = CandidateRegistry()
    for i, boxes in enumerate(boxes_by_cluster):
        ballot = list(parties)
        if i % 2 == 0:
            ballot.append(Candidate(f"IND{i}", f"Independent {i}"))
        for box in boxes:
            registry.add_box(box, ballot)
    return registry


def build_topology(config: ElectionConfig, run_dir=None) -> System:
    """Centers, clusters, upper chains and a populated registry."""
    config.validate()
    rng = random.Random(f"topology:{config.seed}")
    cw, nw = _width(config.clusters), _width(config.centers_per_cluster)
    grid = [[f"c{i:0{cw}d}-n{j:0{nw}d}" for j in range(config.centers_per_cluster)]
            for i in range(config.clusters)]
    cluster_ids = [f"c{i:0{cw}d}" for i in range(config.clusters)]
    box_of = {cid: f"box-{cid}" for row in grid for cid in row}
    stations = {cid: box for cid, box in box_of.items()}
    region_map = {box_of[cid]: cluster_ids[i] for i, row in enumerate(grid) for cid in row}
    if config.region_file:
        override = json.loads(Path(config.region_file).read_text(encoding="utf-8"))
        if set(override) != set(region_map):
            raise ConfigInvalid("region file must map exactly the topology's ballot boxes")
        region_map = {box: override[box] for box in region_map}

    if config.candidates_file and config.voters_file:
        registry, passwords = load_registry(config.voters_file, config.candidates_file,
                                            stations, config.salt)
        missing = set(stations.values()) - set(registry.candidates.boxes)
        if missing:
            raise ConfigInvalid(f"candidate file lacks boxes: {sorted(missing)[:3]}")
    elif config.candidates_file or config.voters_file:
        raise ConfigInvalid("voters_file and candidates_file go together")
    else:
        candidates = synthetic_candidates(config, [[box_of[c] for c in row] for row in grid])
        registry = Registry(candidates, stations, config.salt)
        boxes = [box_of[c] for row in grid for c in row]
        alphabet = string.ascii_letters + string.digits
        vw = len(str(config.voters))
        passwords = {}
        for k in range(config.voters):
            voter_id = f"voter-{k:0{vw}d}"
            password = "pw-" + "".join(rng.choice(alphabet) for _ in range(12))
            registry.add_voter(voter_id, password, boxes[k % len(boxes)])
            passwords[voter_id] = password

    run_dir = Path(run_dir) if run_dir else None
    difficulty = Difficulty(config.zero_bits)

    def count_path(node_id):
        return run_dir / "counts" / f"{node_id}.count" if run_dir else None

    centers = {
        cid: VotingNode(cid, box_of[cid], config.election_id, registry, difficulty,
                        count_path(cid), config.mining_budget)
        for row in grid for cid in row
    }
    levels: list[dict[str, ClusterNode]] = []
    if config.levels >= 2:
        levels.append({
            cluster_ids[i]: ClusterNode(cluster_ids[i], 1, config.election_id, row,
                                        count_path=count_path(cluster_ids[i]))
            for i, row in enumerate(grid)
        })
    for level in range(2, config.levels):
        below = sorted(levels[-1])
        top_id = f"l{level}"
        levels.append({top_id: ClusterNode(top_id, level, config.election_id, below,
                                           count_path=count_path(top_id))})
    system = System(config, difficulty, registry, passwords, centers, grid, levels, region_map,
                    Network(config.latency_ms, config.jitter_ms, config.seed), run_dir)
    system.box_to_center = {box_of[c]: c for c in centers}
    return system


def nearest_center(system: System, down_id: str) -> str:
    """Closest live center by index distance, own cluster first."""
    for i, row in enumerate(system.grid):
        if down_id in row:
            ci, cj = i, row.index(down_id)
            break
    else:
        raise UnknownEntity(down_id)
    clusters = sorted(range(len(system.grid)), key=lambda i: (abs(i - ci), i))
    for i in clusters:
        row = system.grid[i]
        for j in sorted(range(len(row)), key=lambda j: (abs(j - cj), j)):
            if not system.centers[row[j]].down:
                return row[j]
    raise UnknownEntity("no live center left")


def inject(system: System, fault: Fault, t_ms: int | None = None) -> System:
    node = system.entity(fault.node)
    if fault.kind in ("byzantine_submission", "drop_submission"):
        kind = "byzantine" if fault.kind == "byzantine_submission" else "drop"
        system.submission_faults[(fault.node, fault.round)] = kind
    elif fault.kind == "tamper":
        if not isinstance(node, VotingNode):
            raise UnknownEntity(f"{fault.node} is not a voting center")
        blocks = list(node.chain.blocks)
        if not 1 <= fault.block_index < len(blocks):
            raise UnknownEntity(f"{fault.node} has no block {fault.block_index}")
        old = blocks[fault.block_index]
        ballot = system.registry.candidates_for(old.ballot_box_id)
        swapped = ballot[(ballot.index(old.candidate_id) + 1) % len(ballot)]
        blocks[fault.block_index] = replace(old, candidate_id=swapped)
        node.chain = Chain(0, tuple(blocks))
        log.info("tampered %s block %d: %s -> %s", fault.node, fault.block_index,
                 old.candidate_id, swapped)
    elif fault.kind == "center_down":
        if not isinstance(node, VotingNode):
            raise UnknownEntity(f"{fault.node} is not a voting center")
        node.down = True
        target = system.centers[nearest_center(system, fault.node)]
        moved = 0
        for rec in system.registry.voters.values():
            if not rec.voted and rec.effective_ballot_box == node.ballot_box_id:
                system.registry.reassign(rec.voter_id, target.ballot_box_id)
                moved += 1
        system.events.append({"kind": "center_down", "entity": fault.node, "t_ms": t_ms,
                              "reassigned": moved, "to": target.node_id})
    return system


@dataclass
class SimulationReport:
    config: ElectionConfig
    oracle: TallyResult
    tally: TallyResult | None
    union_level0: TallyResult
    metrics: dict
    incidents: list
    events: list
    heads: dict
    round_log: list
    chains: dict  # chain id -> Chain, grouped by level in export order

    @property
    def exact(self) -> bool:
        return self.tally is not None and self.tally.to_json() == self.oracle.to_json()

    def to_json(self) -> dict:
        return {
            "election_id": self.config.election_id,
            "seed": self.config.seed,
            "levels": self.config.levels,
            "topology": {
                "clusters": self.config.clusters,
                "centers": self.config.clusters * self.config.centers_per_cluster,
                "voters": self.metrics["voters"],
            },
            "tally_matches_oracle": self.exact,
            "union_level0_matches_top": (self.tally is not None
                                         and self.tally.to_json() == self.union_level0.to_json()),
            "metrics": self.metrics,
            "incidents": self.incidents,
            "events": self.events,
            "oracle_tally": self.oracle.to_json(),
            "tally": self.tally.to_json() if self.tally else None,
            "union_level0_tally": self.union_level0.to_json(),
            "heads": self.heads,
        }


class Simulation:
    def __init__(self, system: System, faults=()):
        self.system = system
        self.config = system.config
        self.faults = list(faults)
        self.queue: list = []
        self.seq = itertools.count()
        self.now = 0
        self.close_ms = self.config.election_duration_s * 1000
        self.oracle: Counter = Counter()
        self.metrics = Counter()
        self.resume_at: dict[str, int] = {}
        self.durations: list[int] = []

    def schedule(self, t: int, kind: str, payload=None) -> None:
        heapq.heappush(self.queue, (t, next(self.seq), kind, payload))

    def run(self) -> SimulationReport:
        cfg, system = self.config, self.system
        rng = random.Random(f"workload:{cfg.seed}")
        self.prefs = {}
        for voter_id in system.registry.voters:
            self.schedule(rng.randrange(self.close_ms), "arrive", voter_id)
            self.prefs[voter_id] = rng.random()
        self.weights = self._region_weights()
        for fault in self.faults:
            system.entity(fault.node)
            if fault.at_s is not None:
                self.schedule(fault.at_ms, "fault", fault)
            else:
                inject(system, fault)
        self.scheduled_rounds = cfg.election_duration_s // cfg.sync_interval_s if system.levels else 0
        for k in range(1, self.scheduled_rounds + 1):
            self.schedule(k * cfg.sync_interval_s * 1000, "tick", k)
        while self.queue:
            self.now, _, kind, payload = heapq.heappop(self.queue)
            getattr(self, "_on_" + kind)(payload)
        self._sync_all(max(self.now, self.close_ms), "drain")
        return self._report()

    def _region_weights(self) -> dict:
        rng = random.Random(f"preferences:{self.config.seed}")
        weights = {}
        for region in sorted(set(self.system.region_map.values())):
            weights[region] = rng.random()
        return weights

    def _choose(self, voter_id: str, box: str) -> str:
        ballot = self.system.registry.candidates_for(box)
        # a region-dependent skew keeps winners distinct without any extra state
        weight = self.weights[self.system.region_map[box]]
        skew = 1.0 + 2.0 * weight
        favourite = int(weight * (len(ballot) - 1))
        raw = [skew ** -abs(k - favourite) for k in range(len(ballot))]
        u = self.prefs[voter_id] * sum(raw)
        for cand, w in zip(ballot, raw):
            if u < w:
                return cand
            u -= w
        return ballot[-1]

    def _on_arrive(self, voter_id: str) -> None:
        system = self.system
        rec = system.registry.voters[voter_id]
        box = rec.effective_ballot_box
        node = system.centers[system.box_to_center[box]]
        candidate = self._choose(voter_id, box)
        try:
            node.cast_vote(Credentials(voter_id, system.passwords[voter_id]), candidate)
        except VotingPaused:
            self.metrics["paused_rejections"] += 1
            retry = max(self.resume_at.get(node.node_id, self.now), self.now + 1)
            if retry < self.close_ms:
                self.schedule(retry, "arrive", voter_id)
            else:
                self.metrics["unserved_voters"] += 1
            return
        except CenterUnavailable:
            self.metrics["unserved_voters"] += 1
            return
        except AlreadyVoted:
            self.metrics["repeat_attempts"] += 1
            return
        self.oracle[(box, candidate)] += 1
        self.metrics["casts_ok"] += 1

    def _on_fault(self, fault: Fault) -> None:
        inject(self.system, fault, self.now)

    def _on_tick(self, k: int) -> None:
        self.system.registry.end_round()
        self._sync_all(self.now, "scheduled")

    def _on_resume(self, payload) -> None:
        node_id, round = payload
        node = self.system.centers[node_id]
        if node.round == round:
            node.set_paused(False)

    def _sync_all(self, t: int, kind: str) -> None:
        system, cfg = self.system, self.config
        t_level = t
        for level, clusters in enumerate(system.levels, start=1):
            ends = [t_level]
            for cid in sorted(clusters):
                cluster = clusters[cid]
                members = system.members_of(cluster)
                try:
                    outcome = run_sync_cycle(cluster, members, t_level, system.net, system.difficulty,
                                             cfg.retry_cap, system.submission_faults, kind, resume=False)
                except RetryCapExceeded as exc:
                    outcome = exc.outcome
                    system.incident("retry_cap_exceeded", cid, str(exc), t_level)
                    self.metrics["retry_cap_exceeded"] += 1
                system.round_log.extend(outcome.log)
                self.durations.extend(e["duration_ms"] for e in outcome.log)
                ends.append(outcome.t_end)
                if level == 1:
                    resume = max(t_level + cfg.pause_s * 1000, outcome.t_end)
                    for member in members.values():
                        self.resume_at[member.node_id] = resume
                        self.schedule(resume, "resume", (member.node_id, member.round))
                else:
                    for member in members.values():
                        member.set_paused(False)
            t_level = max(ends)
        self.now = max(self.now, t_level)

    def _report(self) -> SimulationReport:
        system, cfg = self.system, self.config
        self._post_checks()
        oracle = tally_counts(self.oracle, system.region_map, system.registry.candidates)
        union = tally((v for c in system.centers.values() for v in c.chain.body()),
                      system.region_map, system.registry.candidates)
        top_votes = []
        for chain in system.top_chains():
            try:
                top_votes.extend(flatten(chain, system.difficulty))
            except InvalidChain:
                # already an incident; count what is there so the report shows the damage
                top_votes.extend(iter_votes(chain.body()))
        try:
            result = tally(top_votes, system.region_map, system.registry.candidates)
        except (KeyError, ValueError) as exc:
            system.incident("tally_failed", "top", str(exc))
            result = None
        chains = self.export_chains()
        heads = {
            cid: {"level": chain.level, "length": len(chain), "head": chain.tip_hash.hex}
            for cid, chain in chains.items()
        }
        log_by_cluster = Counter(e["cluster"] for e in system.round_log)
        flags = Counter(e["flag"] for e in system.round_log)
        committed = {"0": sum(len(c.chain.body()) for c in system.centers.values())}
        for level, clusters in enumerate(system.levels, start=1):
            committed[str(level)] = sum(
                sum(1 for _ in iter_votes(c.chain.body())) for c in clusters.values())
        durations = self.durations or [0]
        metrics = {
            "voters": len(system.registry.voters),
            "casts_ok": self.metrics["casts_ok"],
            "voted_flags": system.registry.voted_count(),
            "paused_rejections": self.metrics["paused_rejections"],
            "unserved_voters": self.metrics["unserved_voters"],
            "repeat_attempts": self.metrics["repeat_attempts"],
            "scheduled_rounds_per_cluster": self.scheduled_rounds,
            "drain_rounds_per_cluster": 1 if system.levels else 0,
            "round_attempts": sum(log_by_cluster.values()),
            "accepts": flags["accept"],
            "declines": flags["decline"],
            "retry_cap_exceeded": self.metrics["retry_cap_exceeded"],
            "sync_duration_ms": {"mean": round(sum(durations) / len(durations), 3),
                                 "max": max(durations)},
            "votes_committed": committed,
        }
        report = SimulationReport(cfg, oracle, result, union, metrics, system.incidents,
                                  system.events, heads, system.round_log, chains)
        if result is not None and not report.exact:
            system.incident("tally_mismatch", "top", "recount differs from the workload oracle")
        return report

    def _post_checks(self) -> None:
        system = self.system
        for cid, center in system.centers.items():
            fault = validate_chain(center.chain, system.difficulty)
            if fault:
                system.incident("chain_invalid", cid, f"block {fault.index}: {fault.reason}")
            if center.pending_batch():
                system.incident("uncommitted_votes", cid, f"{len(center.pending_batch())} votes never committed")
        for clusters in system.levels:
            for cid, cluster in clusters.items():
                if not cluster.replicas_agree():
                    system.incident("replica_divergence", cid, "delegate replicas differ")
                fault = validate_chain(cluster.chain, system.difficulty)
                if fault:
                    system.incident("chain_invalid", cid, f"block {fault.index}: {fault.reason}")

    def export_chains(self) -> dict:
        chains = {cid: c.chain for cid, c in sorted(self.system.centers.items())}
        for clusters in self.system.levels:
            chains.update({cid: c.chain for cid, c in sorted(clusters.items())})
        return chains


def run(config: ElectionConfig, fault_script=(), run_dir=None) -> SimulationReport:
    """Simulate one election day; writes the run directory when given one."""
    system = build_topology(config, run_dir)
    report = Simulation(system, fault_script).run()
    if run_dir:
        write_run_dir(report, system, run_dir)
    return report


def public_record(report: SimulationReport, system: System) -> PublicRecord:
    return PublicRecord(report.config.election_id, system.difficulty, system.registry.candidates,
                        system.region_map, report.heads)


def _dump_json(obj) -> str:
    return json.dumps(obj, indent=2, ensure_ascii=False) + "\n"


def write_run_dir(report: SimulationReport, system: System, run_dir) -> Path:
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    (run_dir / "config.txt").write_text(report.config.dumps(), encoding="utf-8")
    for cid, chain in report.chains.items():
        save_chain(chain, run_dir / "chains" / f"level{chain.level}" / f"{cid}.jsonl")
    with open(run_dir / "rounds.jsonl", "w", encoding="utf-8", newline="\n") as fh:
        for entry in report.round_log:
            fh.write(json.dumps(entry, ensure_ascii=False, separators=(",", ":")) + "\n")
    (run_dir / "report.json").write_text(_dump_json(report.to_json()), encoding="utf-8")
    (run_dir / "public.json").write_text(_dump_json(public_record(report, system).to_json()),
                                         encoding="utf-8")
    return run_dir
