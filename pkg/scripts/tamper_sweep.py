"""Detection rate of the audit over several tamper seeds for one run directory.

    python3 scripts/tamper_sweep.py runs/desk --n 1000 --seeds 1 2 3
"""

import argparse
import contextlib
import io

from hbvote.cli import main as cli


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("run_dir")
    ap.add_argument("--n", type=int, default=1000)
    ap.add_argument("--seeds", type=int, nargs="+", default=[42])
    args = ap.parse_args()
    for seed in args.seeds:
        buf = io.StringIO()
        with contextlib.redirect_stdout(buf):
            code = cli(["tamper", args.run_dir, "--n", str(args.n), "--seed", str(seed)])
        summary = buf.getvalue().strip().splitlines()[-1]
        print(f"seed {seed}: {summary} (exit {code})")


if __name__ == "__main__":
    main()
