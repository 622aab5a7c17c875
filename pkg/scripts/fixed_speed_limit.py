"""Fixed-speed costs from the exact outflow on a fine time grid (resolution-free reference)."""

import argparse

import numpy as np

from vsltrack.cli import BUILTINS
from vsltrack.letmap import analytic_outflow
from vsltrack.model import Signal


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--dt", type=float, default=1e-4)
    args = ap.parse_args()
    for name in ("test1", "test2"):
        s = BUILTINS[name]
        p = s.params
        n = int(round(s.t_end / args.dt))
        inflow, target = s.inflow.sample(args.dt, n), s.target.sample(args.dt, n)
        costs = {}
        for speed in (p.v_max, p.v_min):
            v = Signal(0.0, args.dt, np.full(n, speed))
            out = analytic_outflow(v, inflow, p.road_length, rho0=s.initial_density, rho_cr=p.rho_cr)
            costs[speed] = float(np.sum((out.values - target.values) ** 2) * args.dt)
        print(f"{name}: J(v_max)={costs[p.v_max]:.6g}  J(v_min)={costs[p.v_min]:.6g}  "
              f"ratio={costs[p.v_max] / costs[p.v_min]:.4f}")


if __name__ == "__main__":
    main()
