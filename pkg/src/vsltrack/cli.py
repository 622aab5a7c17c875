"""Scenario files, experiment orchestration and the ``vsltrack`` command line.

A scenario file holds one ``key = value`` per line; ``#`` starts a comment.
Signals are a preset name with dotted parameters or a path to a ``t,value``
CSV file::

    inflow = sin-capped
    inflow.cap = 0.5
    target = data/target.csv
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .cost_variation import fd_variation, locally_constant_steps, needle_gradient
from .letmap import analytic_outflow, build_let
from .model import PRESETS, DensityField, DomainError, FluxParams, Signal
from .policies import (PolicyResult, fixed_speed, gradient_descent, instantaneous_policy,
                       random_exploration)
from .problem import TrackingProblem
from .solver import ConfigError, SimulationError, SolverConfig

log = logging.getLogger(__name__)

POLICIES = ("fixed-max", "fixed-min", "ip", "re", "gdm")
TABLE_LABELS = {"fixed-max": "v_max", "fixed-min": "v_min", "ip": "IP", "re": "RE-min", "gdm": "GDM"}

EXIT_OK, EXIT_USAGE, EXIT_VALIDATION, EXIT_COMPUTE, EXIT_IO = 0, 2, 3, 4, 5


class ScenarioError(ValueError):
    """Malformed scenario file; the message names the line or field."""


@dataclass(frozen=True)
class SignalSpec:
    preset: str | None = None
    params: dict = field(default_factory=dict)
    path: Path | None = None

    def sample(self, dt: float, n: int) -> Signal:
        if self.path is not None:
            sig = Signal.from_csv(self.path)
            return sig.resample(dt, n)
        fn = PRESETS[self.preset](**self.params)
        return Signal(0.0, dt, fn(dt * np.arange(n)))


@dataclass(frozen=True)
class Scenario:
    name: str = "custom"
    params: FluxParams = field(default_factory=FluxParams)
    n_cells: int = 100
    t_end: float = 15.0
    cfl_safety: float = 1.0
    initial_density: float | Path = 0.4
    inflow: SignalSpec = field(default_factory=lambda: SignalSpec("sin-capped"))
    target: SignalSpec = field(default_factory=lambda: SignalSpec("constant", {"value": 0.3}))
    control_dt: float | None = None
    policy: str = "all"
    samples: int = 1000
    seed: int = 0
    workers: int = 1
    gdm_eps: float = 1e-7
    gdm_max_iter: int = 200
    gdm_init: float | None = None

    def solver_config(self) -> SolverConfig:
        rho0 = self.initial_density
        if isinstance(rho0, Path):
            cells = _read_profile(rho0)
            rho0 = DensityField(self.params.road_length / len(cells), cells)
        return SolverConfig(self.n_cells, self.t_end, self.cfl_safety, rho0)

    def problem(self) -> TrackingProblem:
        cfg = self.solver_config()
        dt, n = cfg.grid(self.params)
        return TrackingProblem(self.params, cfg, self.inflow.sample(dt, n), self.target.sample(dt, n),
                               self.control_dt)

    def policies(self) -> tuple[str, ...]:
        return POLICIES if self.policy == "all" else (self.policy,)

    def to_text(self) -> str:
        """Round-trippable scenario file."""
        p = self.params
        lines = [f"name = {self.name}"]
        lines += [f"{k} = {getattr(p, k)!r}" for k in ("road_length", "rho_cr", "rho_max", "v_min", "v_max")]
        lines += [f"cells = {self.n_cells}", f"t_end = {self.t_end!r}", f"cfl_safety = {self.cfl_safety!r}",
                  f"initial_density = {self.initial_density}"]
        for key in ("inflow", "target"):
            spec = getattr(self, key)
            lines.append(f"{key} = {spec.path if spec.path is not None else spec.preset}")
            lines += [f"{key}.{k} = {v!r}" for k, v in spec.params.items()]
        if self.control_dt is not None:
            lines.append(f"control_dt = {self.control_dt!r}")
        lines += [f"policy = {self.policy}", f"samples = {self.samples}", f"seed = {self.seed}",
                  f"workers = {self.workers}", f"gdm.eps = {self.gdm_eps!r}",
                  f"gdm.max_iter = {self.gdm_max_iter}"]
        if self.gdm_init is not None:
            lines.append(f"gdm.init = {self.gdm_init!r}")
        return "\n".join(lines) + "\n"


def _read_profile(path: Path) -> np.ndarray:
    """Last column of a CSV with a header row."""
    try:
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
    except (OSError, ValueError) as exc:
        raise ScenarioError(f"{path}: cannot read density profile ({exc})") from None
    return data[:, -1]


BUILTINS = {
    "test1": Scenario(name="test1"),
    "test2": Scenario(name="test2", target=SignalSpec("abs-sin", {"amp": 0.4, "rate": 1.0, "phase": 0.3})),
    "steady": Scenario(name="steady", inflow=SignalSpec("constant", {"value": 0.3}),
                       target=SignalSpec("constant", {"value": 0.3}), initial_density=0.4),
}

_FLOAT_KEYS = {"road_length", "rho_cr", "rho_max", "v_min", "v_max", "t_end", "cfl_safety",
               "control_dt", "gdm.eps", "gdm.init"}
_INT_KEYS = {"cells", "samples", "seed", "workers", "gdm.max_iter"}


def parse_scenario(text: str, base_dir: Path | None = None, source: str = "<scenario>") -> Scenario:
    """Parse scenario text; relative CSV paths resolve against ``base_dir``."""
    base_dir = Path(".") if base_dir is None else base_dir
    raw: dict[str, tuple[int, str]] = {}
    for lineno, line in enumerate(text.splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ScenarioError(f"{source}:{lineno}: expected 'key = value', got {line!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if not key or not value:
            raise ScenarioError(f"{source}:{lineno}: empty key or value")
        if key in raw:
            raise ScenarioError(f"{source}:{lineno}: duplicate key {key!r}")
        raw[key] = (lineno, value)

    def number(key, kind):
        lineno, value = raw.pop(key)
        try:
            x = kind(value)
        except ValueError:
            raise ScenarioError(f"{source}:{lineno}: {key} must be {kind.__name__}, got {value!r}") from None
        if kind is float and not math.isfinite(x):
            raise ScenarioError(f"{source}:{lineno}: {key} must be finite")
        return x

    fields: dict = {}
    for key in sorted(_FLOAT_KEYS | _INT_KEYS):
        if key in raw:
            fields[key] = number(key, int if key in _INT_KEYS else float)

    def signal(key, default):
        spec_params = {}
        for k in [k for k in raw if k.startswith(key + ".")]:
            spec_params[k[len(key) + 1:]] = number(k, float)
        if key not in raw:
            if spec_params:
                return SignalSpec(default.preset, {**default.params, **spec_params}, default.path)
            return default
        lineno, value = raw.pop(key)
        if value in PRESETS:
            spec = SignalSpec(value, spec_params)
            try:
                PRESETS[value](**spec_params)
            except TypeError as exc:
                raise ScenarioError(f"{source}:{lineno}: bad parameters for {value!r}: {exc}") from None
            return spec
        path = base_dir / value
        if spec_params:
            raise ScenarioError(f"{source}:{lineno}: CSV signal {value!r} takes no parameters")
        if not path.is_file():
            raise ScenarioError(f"{source}:{lineno}: {key} is neither a preset {sorted(PRESETS)} "
                                f"nor an existing CSV file ({path})")
        return SignalSpec(path=path)

    name = raw.pop("name", (0, "custom"))[1]
    base = BUILTINS.get(raw.pop("base", (0, ""))[1], Scenario())
    inflow = signal("inflow", base.inflow)
    target = signal("target", base.target)

    rho0 = base.initial_density
    if "initial_density" in raw:
        lineno, value = raw.pop("initial_density")
        try:
            rho0 = float(value)
        except ValueError:
            rho0 = base_dir / value
            if not rho0.is_file():
                raise ScenarioError(f"{source}:{lineno}: initial_density is neither a number "
                                    f"nor an existing CSV file ({rho0})") from None

    policy = base.policy
    if "policy" in raw:
        lineno, policy = raw.pop("policy")
        if policy not in POLICIES + ("all",):
            raise ScenarioError(f"{source}:{lineno}: unknown policy {policy!r}")

    if raw:
        key, (lineno, _) = next(iter(raw.items()))
        raise ScenarioError(f"{source}:{lineno}: unknown key {key!r}")

    try:
        params = FluxParams(**{k: fields.get(k, getattr(base.params, k))
                               for k in ("road_length", "rho_cr", "rho_max", "v_min", "v_max")})
    except DomainError as exc:
        raise ScenarioError(f"{source}: {exc}") from None
    scenario = replace(
        base, name=name, params=params, inflow=inflow, target=target, initial_density=rho0,
        policy=policy,
        n_cells=fields.get("cells", base.n_cells), t_end=fields.get("t_end", base.t_end),
        cfl_safety=fields.get("cfl_safety", base.cfl_safety),
        control_dt=fields.get("control_dt", base.control_dt),
        samples=fields.get("samples", base.samples), seed=fields.get("seed", base.seed),
        workers=fields.get("workers", base.workers), gdm_eps=fields.get("gdm.eps", base.gdm_eps),
        gdm_max_iter=fields.get("gdm.max_iter", base.gdm_max_iter),
        gdm_init=fields.get("gdm.init", base.gdm_init))
    validate(scenario)
    return scenario


def validate(s: Scenario) -> None:
    """Reject infeasible settings before any compute."""
    if s.samples < 1:
        raise ScenarioError("samples must be >= 1")
    if s.workers < 1:
        raise ScenarioError("workers must be >= 1")
    if s.gdm_eps < 0 or s.gdm_max_iter < 1:
        raise ScenarioError("gdm.eps must be >= 0 and gdm.max_iter >= 1")
    if s.gdm_init is not None and not s.params.v_min <= s.gdm_init <= s.params.v_max:
        raise ScenarioError(f"gdm.init {s.gdm_init} outside [{s.params.v_min}, {s.params.v_max}]")
    try:
        problem = s.problem()
        problem.initial.validate(s.params)
    except (DomainError, ConfigError) as exc:
        raise ScenarioError(str(exc)) from None
    if np.any(problem.inflow.values < 0) or np.any(problem.target.values < 0):
        raise ScenarioError("inflow and target must be non-negative")


def load_scenario(ref: str) -> Scenario:
    """A built-in name (``test1``, ``test2``, ``steady``) or a scenario file path."""
    if ref in BUILTINS:
        return BUILTINS[ref]
    path = Path(ref)
    try:
        text = path.read_text()
    except OSError as exc:
        raise ScenarioError(f"cannot read scenario {ref!r}: {exc.strerror}") from None
    return parse_scenario(text, path.parent, str(path))


# orchestration ---------------------------------------------------------------

def run_policy(name: str, problem: TrackingProblem, s: Scenario) -> PolicyResult:
    p = problem.params
    if name == "fixed-max":
        return fixed_speed(problem, p.v_max, name)
    if name == "fixed-min":
        return fixed_speed(problem, p.v_min, name)
    if name == "ip":
        return instantaneous_policy(problem)
    if name == "re":
        return random_exploration(problem, s.samples, s.seed, workers=s.workers)
    if name == "gdm":
        init = None if s.gdm_init is None else problem.constant_control(s.gdm_init)
        return gradient_descent(problem, init, eps=s.gdm_eps, max_iter=s.gdm_max_iter)
    raise ScenarioError(f"unknown policy {name!r}")


def format_table(results: dict[str, PolicyResult]) -> str:
    rows = [("Policy", "J", "TV")]
    for name in POLICIES:
        if name in results:
            r = results[name]
            rows.append((TABLE_LABELS[name], f"{r.cost:.6g}", f"{r.tv:.6g}"))
    widths = [max(len(r[i]) for r in rows) for i in range(3)]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip() for r in rows) + "\n"


def run_scenario(s: Scenario, out: Path | None = None) -> dict[str, PolicyResult]:
    """Run the selected policies; with ``out`` write one directory per policy plus a table."""
    problem = s.problem()
    results = {name: run_policy(name, problem, s) for name in s.policies()}
    if out is not None:
        out = Path(out)
        out.mkdir(parents=True, exist_ok=True)
        for name, r in results.items():
            r.write(out / name)
        (out / "scenario.txt").write_text(s.to_text())
        (out / "table.txt").write_text(format_table(results))
        summary = {"scenario": s.name, "policies": [r.summary() for r in results.values()]}
        with open(out / "summary.json", "w") as fh:
            json.dump(summary, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return results


@dataclass(frozen=True)
class RunRecord:
    path: Path
    summary: dict
    control: Signal


def _load_run(path: Path) -> RunRecord:
    try:
        with open(path / "summary.json") as fh:
            summary = json.load(fh)
        control = Signal.from_csv(path / "control.csv")
    except (OSError, json.JSONDecodeError) as exc:
        raise ScenarioError(f"{path}: not a policy run directory ({exc})") from None
    return RunRecord(path, summary, control)


def _expand(dirs) -> list[Path]:
    out = []
    for d in map(Path, dirs):
        if (d / "control.csv").is_file():
            out.append(d)
        else:
            subs = sorted(x for x in d.iterdir() if (x / "control.csv").is_file()) if d.is_dir() else []
            if not subs:
                raise ScenarioError(f"{d}: no policy runs found")
            out.extend(subs)
    return out


def compare(dirs) -> list[dict]:
    """Side-by-side cost, TV, wall time and L1 distance of each control to the first run's."""
    runs = [_load_run(d) for d in _expand(dirs)]
    if len(runs) < 2:
        raise ScenarioError("compare needs at least two runs")
    ref = runs[0]
    rows = []
    for r in runs:
        if not r.control.same_grid(ref.control):
            raise ScenarioError(f"{r.path}: control grid (t0={r.control.t0}, dt={r.control.dt}, "
                                f"n={len(r.control)}) differs from {ref.path}")
        l1 = float(np.sum(np.abs(r.control.values - ref.control.values)) * ref.control.dt)
        rows.append({"run": str(r.path), "policy": r.summary.get("policy"), "cost": r.summary["cost"],
                     "tv": r.summary["tv"], "wall_time": r.summary["wall_time"], "l1_to_first": l1})
    return rows


def format_compare(rows) -> str:
    head = ("run", "policy", "J", "TV", "wall[s]", "L1")
    body = [(r["run"], str(r["policy"]), f"{r['cost']:.6g}", f"{r['tv']:.6g}", f"{r['wall_time']:.6g}",
             f"{r['l1_to_first']:.6g}") for r in rows]
    table = [head] + body
    widths = [max(len(x[i]) for x in table) for i in range(len(head))]
    return "\n".join("  ".join(c.ljust(w) for c, w in zip(x, widths)).rstrip() for x in table) + "\n"


def gradient_check(s: Scenario, count: int = 20, dv: float = 1e-3, speed: float | None = None) -> list[dict]:
    """Needle derivative against finite differences at locally constant times."""
    problem = s.problem()
    p = s.params
    v = problem.constant_control(0.5 * (p.v_min + p.v_max) if speed is None else speed)
    vg = problem.on_solver_grid(v)
    history = problem.simulate(vg, record_history=True).history
    plus = needle_gradient(problem, vg, "plus", history=history)
    minus = needle_gradient(problem, vg, "minus", history=history)
    base = problem.cost(vg)
    rows = []
    for n in locally_constant_steps(problem, vg, count):
        side = "plus" if np.isfinite(plus[n]) else "minus"
        g = plus[n] if side == "plus" else minus[n]
        fd = fd_variation(problem, vg, int(n), dv, side, base)
        rows.append({"t": float(vg.times[n]), "side": side, "needle": float(g), "fd": float(fd),
                     "rel_err": abs(g - fd) / abs(fd) if fd != 0 else math.inf})
    return rows


def convergence(s: Scenario, levels=(1, 2, 4), control=None) -> list[dict]:
    """L1 gap on ``[t0, T]`` between solver and analytic outflow under grid refinement."""
    if control is None:
        def control(t):
            return 0.75 + 0.25 * np.sin(2 * np.pi * t)
    if not isinstance(s.initial_density, float):
        raise ScenarioError("convergence study needs a constant initial density")
    rows = []
    for k in levels:
        sk = replace(s, n_cells=s.n_cells * k)
        problem = sk.problem()
        dt, n = problem.dt, problem.n_steps
        v = Signal(0.0, dt, np.clip(control(dt * np.arange(n)), s.params.v_min, s.params.v_max))
        out = problem.simulate(v).outflow
        exact = analytic_outflow(v, problem.inflow, s.params.road_length, rho0=s.initial_density,
                                 rho_cr=s.params.rho_cr)
        t0 = build_let(v, s.params.road_length).t0
        mask = out.times >= t0
        err = float(np.sum(np.abs(out.values - exact.values)[mask]) * dt)
        rows.append({"cells": sk.n_cells, "dt": dt, "l1": err})
    for a, b in zip(rows, rows[1:]):
        b["ratio"] = a["l1"] / b["l1"]
    return rows


# command line ----------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="vsltrack", description="Speed-limit control of LWR traffic on one road.")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="verb", required=True)

    def overrides(sp):
        sp.add_argument("scenario", help="built-in name (test1, test2, steady) or scenario file")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--cells", type=int, help="number of cells J")

    run = sub.add_parser("run", help="run policies on a scenario")
    overrides(run)
    run.add_argument("--policy", choices=["ip", "re", "gdm", "fixed-min", "fixed-max", "all"])
    run.add_argument("--samples", type=int, help="random exploration sample count")
    run.add_argument("--workers", type=int)
    run.add_argument("--out", type=Path, help="output directory")

    cmp_ = sub.add_parser("compare", help="compare completed runs")
    cmp_.add_argument("dirs", nargs="+", type=Path)

    gc = sub.add_parser("gradient-check", help="needle derivative vs finite differences")
    overrides(gc)
    gc.add_argument("--count", type=int, default=20)
    gc.add_argument("--dv", type=float, default=1e-3)
    gc.add_argument("--out", type=Path, help="write the table as CSV here")

    cv = sub.add_parser("convergence", help="grid refinement study against the analytic outflow")
    overrides(cv)
    cv.add_argument("--levels", type=int, nargs="+", default=[1, 2, 4])
    cv.add_argument("--out", type=Path, help="write the table as CSV here")
    return ap


def _apply_overrides(s: Scenario, args) -> Scenario:
    changes = {}
    for attr, name in (("seed", "seed"), ("cells", "n_cells"), ("policy", "policy"),
                       ("samples", "samples"), ("workers", "workers")):
        value = getattr(args, attr, None)
        if value is not None:
            changes[name] = value
    s = replace(s, **changes)
    validate(s)
    return s


def _write_rows(path: Path, rows: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    keys = list(dict.fromkeys(k for r in rows for k in r))
    with open(path, "w", newline="") as fh:
        w = csv.DictWriter(fh, keys)
        w.writeheader()
        w.writerows(rows)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.verb == "compare":
            sys.stdout.write(format_compare(compare(args.dirs)))
            return EXIT_OK
        s = _apply_overrides(load_scenario(args.scenario), args)
        if args.verb == "run":
            results = run_scenario(s, args.out)
            sys.stdout.write(format_table(results))
            for name, r in results.items():
                sys.stdout.write(f"{TABLE_LABELS[name]} wall time {r.wall_time:.6g} s\n")
        elif args.verb == "gradient-check":
            rows = gradient_check(s, args.count, args.dv)
            sys.stdout.write(f"{'t':>10} {'side':>5} {'needle':>13} {'fd':>13} {'rel_err':>10}\n")
            for r in rows:
                sys.stdout.write(f"{r['t']:10.6g} {r['side']:>5} {r['needle']:13.6g} {r['fd']:13.6g} "
                                 f"{r['rel_err']:10.3g}\n")
            if args.out:
                _write_rows(args.out, rows)
        elif args.verb == "convergence":
            rows = convergence(s, tuple(args.levels))
            sys.stdout.write(f"{'cells':>6} {'dt':>10} {'L1':>12} {'ratio':>8}\n")
            for r in rows:
                ratio = f"{r['ratio']:8.4g}" if "ratio" in r else " " * 8
                sys.stdout.write(f"{r['cells']:6d} {r['dt']:10.4g} {r['l1']:12.6g} {ratio}\n")
            if args.out:
                _write_rows(args.out, rows)
    except (ScenarioError, DomainError, ConfigError) as exc:
        print(f"error[validation]: {exc}", file=sys.stderr)
        return EXIT_VALIDATION
    except SimulationError as exc:
        print(f"error[compute]: {exc}", file=sys.stderr)
        return EXIT_COMPUTE
    except OSError as exc:
        print(f"error[io]: {exc}", file=sys.stderr)
        return EXIT_IO
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
