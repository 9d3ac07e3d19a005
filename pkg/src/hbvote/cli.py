"""Command-line entry point: ``hbvote run | tally | audit | tamper``.

Exit codes: 0 ok, 2 audit findings (or tally mismatch), 3 bad input, 4 the
run finished but flagged incidents, 1 tamper detection below 100%.
"""

from __future__ import annotations

import argparse
import json
import os
import random
import shutil
import sys
import tempfile
import time
from pathlib import Path

from .chainio import ParseError, load_chain
from .config import ConfigInvalid, load_config
from .sim import load_faults, run
from .tally import AuditParseError, InvalidChain, PublicRecord, audit, flatten, tally

OUT_ENV = "HBVOTE_OUT"
EXIT_OK, EXIT_TAMPER_MISSED, EXIT_FINDINGS, EXIT_INPUT, EXIT_INCIDENTS = 0, 1, 2, 3, 4


def default_out() -> Path:
    return Path(os.environ.get(OUT_ENV, "runs"))


def _err(msg: str) -> None:
    print(f"error: {msg}", file=sys.stderr)


def cmd_run(args) -> int:
    try:
        config = load_config(args.config)
        if args.seed is not None:
            config = config.replace(seed=args.seed)
        if args.override_scale:
            config = config.replace(override_scale=True)
        config.validate()
        faults = load_faults(args.faults) if args.faults else []
    except (ConfigInvalid, OSError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    out = Path(args.out) if args.out else default_out() / f"{config.election_id}-seed{config.seed}"
    if out.exists() and any(out.iterdir()):
        if not (out / "report.json").exists():
            _err(f"{out} exists and is not a run directory")
            return EXIT_INPUT
        shutil.rmtree(out)
    try:
        report = run(config, faults, out)
    except (ConfigInvalid, KeyError) as exc:
        _err(str(exc))
        return EXIT_INPUT
    meta = {"created_unix": int(time.time()), "argv": sys.argv[1:]}
    (out / "metadata.json").write_text(json.dumps(meta, indent=2) + "\n", encoding="utf-8")
    print(f"run directory: {out}")
    print(report.tally.format() if report.tally else "no tally")
    m = report.metrics
    print(f"rounds: {m['round_attempts']} ({m['declines']} declined), "
          f"paused rejections: {m['paused_rejections']}, unserved: {m['unserved_voters']}")
    print(f"recount equals oracle: {report.exact}")
    for inc in report.incidents:
        print(f"INCIDENT {inc['kind']} {inc['entity']}: {inc['detail']}")
    return EXIT_INCIDENTS if report.incidents else EXIT_OK


def _chain_files(run_dir: Path) -> list[Path]:
    return sorted((run_dir / "chains").glob("level*/*.jsonl"))


def _top_files(run_dir: Path) -> list[Path]:
    files = _chain_files(run_dir)
    if not files:
        return []
    top = max(int(p.parent.name[len("level"):]) for p in files)
    return [p for p in files if p.parent.name == f"level{top}"]


def cmd_tally(args) -> int:
    run_dir = Path(args.run_dir)
    files = _top_files(run_dir)
    if not files or not (run_dir / "public.json").exists():
        _err(f"{run_dir} has no exported chains or public.json")
        return EXIT_INPUT
    public = PublicRecord.load(run_dir / "public.json")
    votes = []
    try:
        for path in files:
            votes.extend(flatten(load_chain(path), public.difficulty))
    except ParseError as exc:
        _err(f"{path}: {exc}")
        return EXIT_INPUT
    except InvalidChain as exc:
        print(f"{path}: invalid chain: {exc}")
        return EXIT_FINDINGS
    result = tally(votes, public.regions, public.candidates)
    print(result.format())
    report_path = run_dir / "report.json"
    if report_path.exists():
        recorded = json.loads(report_path.read_text(encoding="utf-8")).get("tally")
        same = recorded == result.to_json()
        print(f"matches report tally: {same}")
        if not same:
            return EXIT_FINDINGS
    return EXIT_OK


def cmd_audit(args) -> int:
    try:
        public = PublicRecord.load(args.config)
    except (OSError, ValueError, KeyError) as exc:
        _err(f"cannot read public record {args.config}: {exc}")
        return EXIT_INPUT
    missing = [p for p in args.chain_files if not Path(p).is_file()]
    if missing:
        _err(f"no such file: {missing[0]}")
        return EXIT_INPUT
    try:
        report = audit(args.chain_files, public)
    except AuditParseError as exc:
        print(f"parse error: {exc}")
        _write_findings(args, {"ok": False, "parse_error": {"path": exc.path, "line": exc.line,
                                                           "message": exc.message}})
        return EXIT_INPUT
    for finding in report.findings:
        print(f"FINDING {finding}")
    print(f"audited {report.blocks} blocks in {len(args.chain_files)} file(s): "
          + ("ok" if report.ok else f"{len(report.findings)} finding(s)"))
    if report.tally:
        print(report.tally.format())
    _write_findings(args, report.to_json())
    return EXIT_OK if report.ok else EXIT_FINDINGS


def _write_findings(args, payload) -> None:
    path = Path(args.findings) if args.findings else default_out() / "audit-findings.json"
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(payload, indent=2) + "\n", encoding="utf-8")


def mutation_detected(path: Path, public: PublicRecord) -> bool:
    try:
        return not audit(path, public).ok
    except ParseError:
        return True


def cmd_tamper(args) -> int:
    run_dir = Path(args.run_dir)
    files = _chain_files(run_dir)
    if not files or not (run_dir / "public.json").exists():
        _err(f"{run_dir} has no exported chains or public.json")
        return EXIT_INPUT
    public = PublicRecord.load(run_dir / "public.json")
    baseline = audit(files, public)
    if not baseline.ok:
        print(f"baseline exports already have {len(baseline.findings)} finding(s)")
        return EXIT_FINDINGS
    rng = random.Random(f"tamper:{args.seed}")
    originals: dict[Path, bytes] = {}
    detected = 0
    with tempfile.TemporaryDirectory(prefix="hbvote-tamper-") as tmp:
        for i in range(args.n):
            src = rng.choice(files)
            data = originals.setdefault(src, src.read_bytes())
            offset = rng.randrange(len(data))
            value = rng.choice([b for b in range(256) if b != data[offset]])
            mutated = bytearray(data)
            mutated[offset] = value
            # same file name: the published head is looked up by chain id
            copy = Path(tmp) / f"m{i}" / src.name
            copy.parent.mkdir()
            copy.write_bytes(bytes(mutated))
            if mutation_detected(copy, public):
                detected += 1
            else:
                print(f"MISSED {src.relative_to(run_dir)} byte {offset}: "
                      f"{data[offset]:#04x} -> {value:#04x}")
            shutil.rmtree(copy.parent)
    rate = 1.0 if args.n == 0 else detected / args.n
    print(f"mutations: {args.n}, detected: {detected}, detection rate: {rate:.2%}")
    return EXIT_OK if detected == args.n else EXIT_TAMPER_MISSED


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on bad usage, which here would read as "findings"
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="hbvote", description="Hierarchical blockchain e-voting simulator and auditor.")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("run", help="simulate an election day into a run directory")
    p.add_argument("--config", required=True, help="key = value election config")
    p.add_argument("--seed", type=int, help="overrides the config seed")
    p.add_argument("--faults", help="fault script, one JSON object per line")
    p.add_argument("--out", help=f"run directory (default ${OUT_ENV}/<election>-seed<seed>)")
    p.add_argument("--override-scale", action="store_true",
                   help="allow more than 1,000,000 voters")
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("tally", help="recount the top-level chains of a run directory")
    p.add_argument("run_dir")
    p.set_defaults(func=cmd_tally)

    p = sub.add_parser("audit", help="verify exported chain files against a public record")
    p.add_argument("chain_files", nargs="+")
    p.add_argument("--config", required=True, help="public.json of the election")
    p.add_argument("--findings", help="where to write the JSON findings")
    p.set_defaults(func=cmd_audit)

    p = sub.add_parser("tamper", help="mutate copies of the exports and measure audit detection")
    p.add_argument("run_dir")
    p.add_argument("--n", type=int, default=1000, help="number of single-byte mutations")
    p.add_argument("--seed", type=int, default=42)
    p.set_defaults(func=cmd_tamper)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.func(args)


if __name__ == "__main__":
    raise SystemExit(main())
