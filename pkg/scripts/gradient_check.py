"""Compare the closed-form needle derivative with finite differences at several resolutions."""

import argparse
import dataclasses

import numpy as np

from vsltrack.cli import BUILTINS, gradient_check


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="test1", choices=sorted(BUILTINS))
    ap.add_argument("--cells", type=int, nargs="+", default=[100, 200])
    ap.add_argument("--count", type=int, default=20)
    ap.add_argument("--dv", type=float, default=1e-3)
    args = ap.parse_args()
    for j in args.cells:
        s = dataclasses.replace(BUILTINS[args.scenario], n_cells=j)
        rows = gradient_check(s, args.count, args.dv)
        err = np.array([r["rel_err"] for r in rows])
        print(f"J={j:4d}  points {len(err):3d}  max rel err {err.max():.3g}  median {np.median(err):.3g}")


if __name__ == "__main__":
    main()
