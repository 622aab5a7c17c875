"""Grid refinement of a fixed control against the exact outflow."""

import argparse

from vsltrack.cli import BUILTINS, convergence


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--scenario", default="test1", choices=sorted(BUILTINS))
    ap.add_argument("--levels", type=int, nargs="+", default=[1, 2, 4, 8])
    args = ap.parse_args()
    for r in convergence(BUILTINS[args.scenario], tuple(args.levels)):
        ratio = f"{r['ratio']:.4f}" if "ratio" in r else "-"
        print(f"J={r['cells']:5d}  dt={r['dt']:.5g}  L1={r['l1']:.6g}  ratio={ratio}")


if __name__ == "__main__":
    main()
