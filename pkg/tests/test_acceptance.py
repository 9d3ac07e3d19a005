"""The eleven acceptance criteria, each printing one PASS/FAIL line.

Run alone with ``python3 tests/test_acceptance.py`` or as part of ``pytest``.
"""

import math
import threading
import time
from collections import Counter
from fractions import Fraction
from pathlib import Path

import pytest

from conftest import DESK, vote_chain
from hbvote.chain import BatchBlock, Chain, Difficulty, HashDigest, append, mined, VoteBlock
from hbvote.chainio import load_chain, save_chain
from hbvote.cli import main
from hbvote.node import VotingNode
from hbvote.registry import AlreadyVoted, Candidate, CandidateRegistry, Credentials, Registry
from hbvote.sim import Simulation, build_topology, load_faults, run, write_run_dir
from hbvote.sync import DelegateSet, dpos_finalize, propose_block
from hbvote.tally import PublicRecord, audit, flatten, tally

ROOT = Path(__file__).resolve().parent.parent
BYZANTINE = load_faults(ROOT / "configs" / "byzantine.faults")
DISASTER = load_faults(ROOT / "configs" / "disaster.faults")


@pytest.fixture
def verdict(capsys):
    def say(number, title, ok, detail=""):
        with capsys.disabled():
            print(f"\n[{'PASS' if ok else 'FAIL'}] criterion {number:>2}: {title}"
                  + (f" ({detail})" if detail else ""))
        assert ok, detail
    return say


@pytest.fixture(scope="module")
def desk(tmp_path_factory):
    out = tmp_path_factory.mktemp("acc") / "desk"
    t0 = time.perf_counter()
    system = build_topology(DESK, out)
    report = Simulation(system).run()
    write_run_dir(report, system, out)
    return system, report, out, time.perf_counter() - t0


def chain_files(out):
    return sorted((out / "chains").glob("level*/*.jsonl"))


def test_01_exact_recount(desk, verdict):
    _, report, _, seconds = desk
    data = report.to_json()
    ok = report.exact and data["union_level0_matches_top"] and seconds < 60
    verdict(1, "exact recount at desk scale", ok,
            f"{report.tally.total} votes, oracle match {report.exact}, "
            f"level-0 union match {data['union_level0_matches_top']}, {seconds:.1f} s")


def test_02_tamper_detection(desk, verdict, capsys):
    _, _, out, _ = desk
    code = main(["tamper", str(out), "--n", "1000", "--seed", "42"])
    lines = [ln for ln in capsys.readouterr().out.splitlines() if ln.startswith("mutations:")]
    verdict(2, "1,000 single-byte mutations all detected", code == 0, lines[-1] if lines else "")


def test_03_double_vote_prevention(desk, verdict):
    system, _, _, _ = desk
    by_box = {c.ballot_box_id: c for c in system.centers.values()}
    before = {cid: len(c.chain) for cid, c in system.centers.items()}
    refused = 0
    for voter_id, rec in system.registry.voters.items():
        center = by_box[rec.effective_ballot_box]
        center.paused = center.down = False
        try:
            center.cast_vote(Credentials(voter_id, system.passwords[voter_id]), "BLANK")
        except AlreadyVoted:
            refused += 1
    growth = sum(len(c.chain) - before[cid] for cid, c in system.centers.items())

    cands = CandidateRegistry({"box-r": [Candidate("A")]})
    reg = Registry(cands, {"n-r": "box-r"}, salt="race")
    reg.add_voter("racer", "pw", "box-r")
    node = VotingNode("n-r", "box-r", DESK.election_id, reg, Difficulty((8,)))
    wins, losses = [], []
    gate = threading.Barrier(100)

    def attempt():
        gate.wait()
        for _ in range(10):
            try:
                wins.append(node.cast_vote(Credentials("racer", "pw"), "A"))
            except AlreadyVoted:
                losses.append(1)

    threads = [threading.Thread(target=attempt) for _ in range(100)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    ok = (refused == len(system.registry.voters) == 10_000 and growth == 0
          and len(wins) == 1 and len(wins) + len(losses) == 1000 and len(node.chain) == 2)
    verdict(3, "replayed credentials refused, race yields one vote", ok,
            f"{refused} AlreadyVoted, chain growth {growth}, race {len(wins)}/{len(wins) + len(losses)}")


def test_04_decline_then_retry(tmp_path, verdict):
    byz = [f for f in BYZANTINE if f.kind == "byzantine_submission"]
    report = run(DESK, byz, tmp_path / "byz")
    fault = byz[0]
    cluster = fault.node.split("-")[0]
    log = [e for e in report.round_log if e["cluster"] == cluster]
    declines = [i for i, e in enumerate(log) if e["flag"] == "decline"]
    recovered = bool(declines) and log[declines[-1] + 1]["flag"] == "accept"
    resent = bool(declines) and log[declines[0] + 1]["batch_sizes"] == log[declines[0]]["batch_sizes"]
    ok = len(declines) >= 1 and recovered and resent and report.exact and not report.incidents
    verdict(4, "Byzantine submission declined, resent, accepted", ok,
            f"{len(declines)} decline(s) in {cluster}, tally exact {report.exact}")


def test_05_quorum_safety(verdict):
    difficulty = Difficulty((4,))
    upper = Chain.new("Q", 1)
    batches = {f"d{i}": vote_chain(3, "Q", f"box-{i}", bits=4).body() for i in range(4)}
    ids = tuple(sorted(batches))
    honest = propose_block(ids[0], 0, batches, upper, DelegateSet(ids), difficulty)
    # tampered: one vote flipped after the fact, so the lotb no longer links
    lotb = list(honest.lotb)
    lotb[1] = VoteBlock(lotb[1].election_id, lotb[1].ballot_box_id, "FORGED", lotb[1].prev_hash,
                        lotb[1].nonce)
    tampered = BatchBlock(honest.election_id, 1, 0, honest.prev_hash, tuple(lotb))
    one = dpos_finalize(DelegateSet(ids, colluding={ids[1]}), tampered, upper, difficulty)
    three = dpos_finalize(DelegateSet(ids, colluding=set(ids[1:])), tampered, upper, difficulty)
    threshold = DelegateSet(ids).quorum == Fraction(2, 3)
    ok = not one.finalized and one.approvals == 1 and three.finalized and three.approvals == 3 and threshold
    verdict(5, "1 of 4 colluding rejected, 3 of 4 colluding finalized", ok,
            f"approvals {one.approvals}/4 -> {one.finalized}, {three.approvals}/4 -> {three.finalized}")


def _occurs(blob: bytes, needles: set[bytes]) -> set[bytes]:
    found = set()
    for length in {len(n) for n in needles}:
        wanted = {n for n in needles if len(n) == length}
        found |= wanted & {blob[i:i + length] for i in range(len(blob) - length + 1)}
    return found


def test_06_anonymity(desk, verdict):
    system, _, out, _ = desk
    blob = b"\n".join(p.read_bytes() for p in chain_files(out))
    needles = {v.encode() for v in system.registry.voters} | {p.encode() for p in system.passwords.values()}
    hits = _occurs(blob, needles)
    verdict(6, "no voter id or password in any exported chain", not hits,
            f"{len(needles)} secrets over {len(blob)} bytes, {len(hits)} found")


def test_07_counting_speed(tmp_path, verdict):
    # 20 boxes x 5,000 votes at 4 zero bits; the count itself does not mine
    difficulty = Difficulty((4,))
    boxes = [f"box-{i:02d}" for i in range(20)]
    cands = CandidateRegistry({b: [Candidate("P1"), Candidate("P2"), Candidate("P3")] for b in boxes})
    regions = {b: f"r{i % 4}" for i, b in enumerate(boxes)}
    top = Chain.new("SPEED", 1)
    for i, box in enumerate(boxes):
        low = vote_chain(5000, "SPEED", box, bits=4, candidates=("P1", "P2", "P3", "BLANK"))
        top = append(top, BatchBlock("SPEED", 1, i, top.tip_hash, low.body()), difficulty)
    save_chain(top, tmp_path / "top.jsonl")
    loaded = load_chain(tmp_path / "top.jsonl")
    t0 = time.perf_counter()
    result = tally(flatten(loaded, difficulty), regions, cands)
    seconds = time.perf_counter() - t0
    ok = result.total == 100_000 and seconds < 5
    verdict(7, "flatten and tally of 100,000 votes under 5 s", ok,
            f"{result.total} votes in {seconds:.2f} s")


def test_08_pause_semantics(desk, verdict):
    _, report, _, _ = desk
    m = report.metrics
    per_cluster = Counter((e["cluster"], e["kind"]) for e in report.round_log)
    expected = DESK.election_duration_s // DESK.sync_interval_s
    rounds_ok = all(per_cluster[(c, "scheduled")] == expected and per_cluster[(c, "drain")] == 1
                    for c in ("c00", "c01"))
    ok = (expected == 96 and rounds_ok and m["paused_rejections"] > 0
          and m["unserved_voters"] == 0 and m["casts_ok"] == 10_000)
    verdict(8, "pauses reject and retry, 96 rounds plus a drain, nobody unserved", ok,
            f"{m['paused_rejections']} paused rejections retried, {m['unserved_voters']} unserved, "
            f"rounds {dict(per_cluster)}")


def test_09_disaster_recovery(tmp_path, verdict):
    out = tmp_path / "disaster"
    system = build_topology(DESK, out)
    report = Simulation(system, DISASTER).run()
    down = system.centers[DISASTER[0].node]
    top_votes = {v.digest for c in system.top_chains() for v in flatten(c, system.difficulty)}
    kept = all(v.digest in top_votes for v in down.chain.body())
    moved = [r for r in system.registry.voters.values() if r.reassigned_to]
    ok = (down.down and len(down.chain.body()) > 0 and kept and moved
          and all(r.voted for r in moved) and report.metrics["unserved_voters"] == 0
          and report.exact and not report.incidents)
    verdict(9, "downed center's votes kept, its voters served elsewhere", ok,
            f"{len(down.chain.body())} votes kept, {len(moved)} voters reassigned, exact {report.exact}")


def test_10_mining_statistics(verdict):
    pattern = Difficulty((8,)).at(0)
    drafts = [VoteBlock("MINE", "box-m", f"P{i % 4}", HashDigest.of(str(i).encode())) for i in range(100)]
    attempts = [int(mined(d, pattern).nonce) + 1 for d in drafts]
    again = [int(mined(d, pattern).nonce) + 1 for d in drafts]
    p = Fraction(1, 256)
    sigma_mean = math.sqrt((1 - p) / p**2) / math.sqrt(len(attempts))
    mean = sum(attempts) / len(attempts)
    ok = abs(mean - 256) <= 3 * sigma_mean and attempts == again
    verdict(10, "mean mining attempts within 3 sigma of 256, deterministic", ok,
            f"mean {mean:.1f}, 3 sigma {3 * sigma_mean:.1f}")


def test_11_determinism(tmp_path, verdict):
    dirs = [tmp_path / "a", tmp_path / "b"]
    for d in dirs:
        run(DESK, BYZANTINE, d)

    def exports(d):
        files = chain_files(d) + [d / "rounds.jsonl"]
        return {str(p.relative_to(d)): p.read_bytes() for p in files}

    a, b = (exports(d) for d in dirs)
    ok = a == b and len(a) == 23
    verdict(11, "identical inputs give byte-identical exports and round logs", ok,
            f"{len(a)} files compared")


def test_public_audit_agrees_with_simulator(desk):
    _, report, out, _ = desk
    public = PublicRecord.load(out / "public.json")
    result = audit(chain_files(out), public)
    assert result.ok


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
