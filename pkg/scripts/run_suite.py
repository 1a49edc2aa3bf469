"""Run the acceptance criteria and write a JSON summary.

    python3 scripts/run_suite.py --out out --only 1,2,3
"""
import argparse
import sys

from mflab.cli import run_suite

if __name__ == "__main__":
    ap = argparse.ArgumentParser()
    ap.add_argument("--out", default="out")
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--only", type=lambda s: [int(x) for x in s.split(",")])
    a = ap.parse_args()
    sys.exit(run_suite(a.out, a.only, a.seed))
