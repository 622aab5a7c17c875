"""Run all policies on the two built-in test cases and print the cost/TV tables."""

import argparse
import dataclasses
from pathlib import Path

from vsltrack.cli import BUILTINS, format_table, run_scenario


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", type=Path, default=Path("results"))
    ap.add_argument("--samples", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()
    for name in ("test1", "test2"):
        s = dataclasses.replace(BUILTINS[name], samples=args.samples, seed=args.seed)
        results = run_scenario(s, args.out / name)
        print(f"== {name}")
        print(format_table(results), end="")
        for k, r in results.items():
            print(f"{k:>10} wall time {r.wall_time:.4g} s")


if __name__ == "__main__":
    main()
