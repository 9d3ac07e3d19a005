"""Empirical mining cost per difficulty against the geometric expectation 2**bits.

    python3 scripts/mining_stats.py --drafts 200 --bits 4 8 12
"""

import argparse
import math
import statistics
import time

from hbvote.chain import DifficultyPattern, HashDigest, VoteBlock, mine


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--drafts", type=int, default=100)
    ap.add_argument("--bits", type=int, nargs="+", default=[4, 8, 12])
    args = ap.parse_args()
    print(f"{'bits':>4} {'expected':>9} {'mean':>9} {'3 sigma':>9} {'us/attempt':>10}")
    for bits in args.bits:
        drafts = [VoteBlock("STATS", "box", "P1", HashDigest.of(f"{bits}:{i}".encode()))
                  for i in range(args.drafts)]
        t0 = time.perf_counter()
        attempts = [int(mine(d, DifficultyPattern(bits))) + 1 for d in drafts]
        elapsed = time.perf_counter() - t0
        expected = 2**bits
        sigma_mean = math.sqrt(expected * (expected - 1)) / math.sqrt(args.drafts)
        print(f"{bits:>4} {expected:>9} {statistics.mean(attempts):>9.1f} {3 * sigma_mean:>9.1f}"
              f" {1e6 * elapsed / sum(attempts):>10.2f}")


if __name__ == "__main__":
    main()
