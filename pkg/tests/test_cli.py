import json

import pytest

from hbvote.cli import main

CONF = """election_id = E1
clusters = 2
centers_per_cluster = 3
voters = 300
zero_bits = 4
election_duration_s = 3600
seed = 7
"""


@pytest.fixture
def conf(tmp_path, monkeypatch):
    monkeypatch.setenv("HBVOTE_OUT", str(tmp_path / "out"))
    path = tmp_path / "e.conf"
    path.write_text(CONF)
    return path


@pytest.fixture
def run_dir(conf, tmp_path):
    out = tmp_path / "run"
    assert main(["run", "--config", str(conf), "--out", str(out)]) == 0
    return out


def _snapshot(out):
    return {str(p.relative_to(out)): p.read_bytes()
            for p in sorted(out.rglob("*")) if p.is_file() and p.name != "metadata.json"}


def test_run_writes_run_directory(run_dir):
    for name in ("config.txt", "rounds.jsonl", "report.json", "public.json", "metadata.json"):
        assert (run_dir / name).is_file()
    assert len(list((run_dir / "chains" / "level0").glob("*.jsonl"))) == 6
    assert len(list((run_dir / "chains" / "level1").glob("*.jsonl"))) == 2
    assert json.loads((run_dir / "report.json").read_text())["tally_matches_oracle"]


def test_run_default_out_uses_env(conf, tmp_path):
    assert main(["run", "--config", str(conf)]) == 0
    assert (tmp_path / "out" / "E1-seed7" / "report.json").is_file()


def test_runs_are_byte_identical(conf, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    assert main(["run", "--config", str(conf), "--out", str(a)]) == 0
    assert main(["run", "--config", str(conf), "--out", str(b)]) == 0
    assert _snapshot(a) == _snapshot(b)


def test_seed_flag_changes_run(conf, tmp_path):
    a, b = tmp_path / "a", tmp_path / "b"
    main(["run", "--config", str(conf), "--out", str(a)])
    main(["run", "--config", str(conf), "--out", str(b), "--seed", "8"])
    assert _snapshot(a) != _snapshot(b)


def test_run_input_errors(conf, tmp_path):
    assert main(["run", "--config", str(tmp_path / "missing.conf")]) == 3
    bad = tmp_path / "bad.conf"
    bad.write_text("voters = 2000000\n")
    assert main(["run", "--config", str(bad)]) == 3
    faults = tmp_path / "f.faults"
    faults.write_text('{"kind": "drop_submission", "node": "c07-n00", "round": 1}\n')
    assert main(["run", "--config", str(conf), "--faults", str(faults)]) == 3
    occupied = tmp_path / "occupied"
    occupied.mkdir()
    (occupied / "keep.txt").write_text("mine")
    assert main(["run", "--config", str(conf), "--out", str(occupied)]) == 3
    assert (occupied / "keep.txt").exists()


def test_run_with_incident_exits_4(conf, tmp_path):
    faults = tmp_path / "f.faults"
    faults.write_text('{"kind": "tamper", "node": "c00-n00", "at_s": 1800, "block_index": 1}\n')
    assert main(["run", "--config", str(conf), "--faults", str(faults), "--out", str(tmp_path / "r")]) == 4


def test_tally(run_dir, tmp_path, capsys):
    assert main(["tally", str(run_dir)]) == 0
    assert "matches report tally: True" in capsys.readouterr().out
    report = json.loads((run_dir / "report.json").read_text())
    report["tally"]["total"] += 1
    (run_dir / "report.json").write_text(json.dumps(report))
    assert main(["tally", str(run_dir)]) == 2
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["tally", str(empty)]) == 3


def test_audit_exit_codes(run_dir, tmp_path):
    public = str(run_dir / "public.json")
    files = [str(p) for p in sorted((run_dir / "chains").rglob("*.jsonl"))]
    findings = tmp_path / "findings.json"
    assert main(["audit", *files, "--config", public, "--findings", str(findings)]) == 0
    assert json.loads(findings.read_text())["ok"] is True

    src = run_dir / "chains" / "level0" / "c00-n01.jsonl"
    lines = src.read_text().splitlines(keepends=True)
    lines[1] = lines[1].replace('"candidate_id":"P1"', '"candidate_id":"P2"') \
        if '"P1"' in lines[1] else lines[1].replace('"candidate_id":"', '"candidate_id":"P1', 1)
    edited = tmp_path / "edit" / src.name
    edited.parent.mkdir()
    edited.write_text("".join(lines))
    assert main(["audit", str(edited), "--config", public, "--findings", str(findings)]) == 2
    assert json.loads(findings.read_text())["findings"][0]["line"] == 2

    empty = tmp_path / "empty" / src.name
    empty.parent.mkdir()
    empty.write_bytes(b"")
    assert main(["audit", str(empty), "--config", public, "--findings", str(findings)]) == 3
    assert json.loads(findings.read_text())["parse_error"]["line"] == 1
    assert main(["audit", str(tmp_path / "nope.jsonl"), "--config", public]) == 3
    assert main(["audit", files[0], "--config", str(tmp_path / "nope.json")]) == 3


def test_audit_default_findings_path(run_dir, tmp_path):
    files = [str(p) for p in sorted((run_dir / "chains").rglob("*.jsonl"))]
    assert main(["audit", *files, "--config", str(run_dir / "public.json")]) == 0
    assert (tmp_path / "out" / "audit-findings.json").is_file()


def test_tamper(run_dir, capsys, tmp_path):
    assert main(["tamper", str(run_dir), "--n", "0"]) == 0
    assert main(["tamper", str(run_dir), "--n", "60", "--seed", "3"]) == 0
    assert "detection rate: 100.00%" in capsys.readouterr().out
    empty = tmp_path / "empty"
    empty.mkdir()
    assert main(["tamper", str(empty)]) == 3


@pytest.mark.parametrize("argv", [["frobnicate"], ["run"], ["tamper", "x", "--n", "many"]])
def test_usage_errors_are_input_errors(argv):
    with pytest.raises(SystemExit) as info:
        main(argv)
    assert info.value.code == 3
