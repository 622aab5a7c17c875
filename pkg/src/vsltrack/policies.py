"""Speed-limit policies: instantaneous feedback, random exploration, gradient descent.

Every policy returns a :class:`PolicyResult` whose ``cost`` is the tracking
cost of its final control re-simulated open loop.
"""

from __future__ import annotations

import csv
import json
import logging
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .cost_variation import cost as tracking_cost
from .cost_variation import needle_gradient
from .model import DomainError, Signal, projection, total_variation
from .problem import TrackingProblem
from .solver import SimulationTrace

log = logging.getLogger(__name__)


@dataclass(frozen=True, eq=False)
class Histogram:
    edges: np.ndarray
    counts: np.ndarray

    def to_csv(self, path) -> None:
        """One row per bin, labelled by the bin centre."""
        centres = 0.5 * (self.edges[1:] + self.edges[:-1])
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["cost_bin", "count"])
            for c, k in zip(centres, self.counts):
                w.writerow([repr(float(c)), int(k)])


@dataclass(frozen=True, eq=False)
class PolicyResult:
    policy: str
    control: Signal
    cost: float
    tv: float
    wall_time: float
    meta: dict = field(default_factory=dict)
    trace: SimulationTrace | None = field(default=None, repr=False)
    histogram: Histogram | None = field(default=None, repr=False)

    def summary(self) -> dict:
        rec = {"policy": self.policy, "cost": self.cost, "tv": self.tv, "wall_time": self.wall_time,
               "seed": self.meta.get("seed"), "iterations": self.meta.get("iterations")}
        rec.update({k: v for k, v in self.meta.items() if k not in rec and _jsonable(v)})
        return rec

    def write(self, directory) -> Path:
        """Write ``control.csv``, ``outflow.csv``, ``summary.json`` (and ``histogram.csv``)."""
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        self.control.to_csv(d / "control.csv", header=("t", "v"))
        if self.trace is not None:
            target = self.meta.get("_target")
            with open(d / "outflow.csv", "w", newline="") as fh:
                w = csv.writer(fh)
                w.writerow(["t", "out", "target"])
                tv = target if target is not None else np.full(len(self.trace), np.nan)
                for t, o, f in zip(self.trace.times, self.trace.outflow.values, tv):
                    w.writerow([repr(float(t)), repr(float(o)), repr(float(f))])
        if self.histogram is not None:
            self.histogram.to_csv(d / "histogram.csv")
        with open(d / "summary.json", "w") as fh:
            json.dump(self.summary(), fh, indent=2, sort_keys=True)
            fh.write("\n")
        return d


def _jsonable(v) -> bool:
    return isinstance(v, (int, float, str, bool, type(None))) or (
        isinstance(v, list) and all(isinstance(x, (int, float)) for x in v))


def _finish(problem: TrackingProblem, name: str, control: Signal, trace: SimulationTrace,
            wall: float, meta: dict, histogram=None) -> PolicyResult:
    value = tracking_cost(trace.outflow, problem.target).value
    meta = dict(meta, _target=problem.target.values)
    return PolicyResult(name, control, value, total_variation(control), wall, meta, trace, histogram)


def instantaneous_policy(problem: TrackingProblem) -> PolicyResult:
    """Closed-loop feedback ``v = P(f* / rho_J)`` updated every solver step."""
    start = time.perf_counter()
    trace = problem.simulate_feedback()
    wall = time.perf_counter() - start
    return _finish(problem, "ip", trace.control, trace, wall,
                   {"iterations": 1, "division_guards": trace.division_guards})


def fixed_speed(problem: TrackingProblem, value: float, name: str | None = None) -> PolicyResult:
    p = problem.params
    if not p.v_min - 1e-12 <= value <= p.v_max + 1e-12:
        raise DomainError(f"fixed speed {value} outside [{p.v_min}, {p.v_max}]")
    start = time.perf_counter()
    control = problem.constant_control(value)
    trace = problem.simulate(control)
    wall = time.perf_counter() - start
    return _finish(problem, name or f"fixed-{value:g}", control, trace, wall, {"iterations": 1})


def binary_draws(n_samples: int, n_controls: int, seed: int) -> list[np.ndarray]:
    """Independent fair-coin sequences, one RNG stream per sample."""
    children = np.random.SeedSequence(seed).spawn(n_samples)
    return [np.random.default_rng(c).integers(0, 2, size=n_controls) for c in children]


def random_exploration(problem: TrackingProblem, n_samples: int = 1000, seed: int = 0, *,
                       bins: int = 30, workers: int = 1) -> PolicyResult:
    """Best of ``n_samples`` uniformly drawn ``{v_min, v_max}`` schedules."""
    if n_samples < 1:
        raise DomainError("n_samples must be >= 1")
    p = problem.params
    start = time.perf_counter()
    draws = binary_draws(n_samples, problem.n_controls, seed)
    speeds = np.array([p.v_min, p.v_max])

    def evaluate(bits):
        return problem.cost(problem.control(speeds[bits]))

    if workers > 1:
        with ThreadPoolExecutor(workers) as pool:
            costs = np.fromiter(pool.map(evaluate, draws), float, n_samples)
    else:
        costs = np.fromiter(map(evaluate, draws), float, n_samples)
    best = int(np.argmin(costs))
    control = problem.control(speeds[draws[best]])
    trace = problem.simulate(control)
    wall = time.perf_counter() - start
    counts, edges = np.histogram(costs, bins=bins)
    meta = {"seed": seed, "samples": n_samples, "best_sample": best, "iterations": n_samples,
            "costs": costs}
    return _finish(problem, "re", control, trace, wall, meta, Histogram(edges, counts))


def _interval_sums(g: np.ndarray, k: int) -> np.ndarray:
    pad = (-len(g)) % k
    g = np.concatenate([g, np.zeros(pad)]) if pad else g
    return g.reshape(-1, k).sum(axis=1)


def descent_direction(problem: TrackingProblem, control: Signal, history=None) -> np.ndarray:
    """Per-interval derivative used by the descent step.

    The right variation is used where raising the speed lowers the cost, the
    left one where lowering it does; elsewhere no first-order decrease exists
    and the entry is zero.
    """
    vg = problem.on_solver_grid(control)
    if history is None:
        history = problem.simulate(vg, record_history=True).history
    k = problem.steps_per_control
    dt = problem.dt
    plus = _interval_sums(np.nan_to_num(needle_gradient(problem, vg, "plus", history=history), nan=0.0), k) * dt
    minus = _interval_sums(np.nan_to_num(needle_gradient(problem, vg, "minus", history=history), nan=0.0), k) * dt
    return np.where(plus < 0, plus, np.where(minus > 0, minus, 0.0))


def gradient_descent(problem: TrackingProblem, v_init: Signal | None = None, *,
                     eps: float = 1e-7, max_iter: int = 200, alpha0: float | None = None,
                     max_backtracks: int = 30, relative_eps: bool = False) -> PolicyResult:
    """Projected descent with halving line search on the needle-variation gradient.

    ``alpha0=None`` starts every line search at ``0.1 (v_max - v_min) / |grad|_inf``.
    Stops when successive accepted costs differ by at most ``eps`` (relative to
    the current cost if ``relative_eps``) or after ``max_iter`` iterations.
    """
    p = problem.params
    if v_init is None:
        v_init = problem.constant_control(0.5 * (p.v_min + p.v_max))
    vals = np.asarray(v_init.values, dtype=float)
    if vals.shape != (problem.n_controls,) or abs(v_init.dt - problem.control_dt) > 1e-12:
        raise DomainError("initial control must live on the problem's control grid")
    if np.any(vals < p.v_min - 1e-12) or np.any(vals > p.v_max + 1e-12):
        raise DomainError("initial control outside the speed bounds")

    def tol(J):
        return eps * abs(J) if relative_eps else eps

    start = time.perf_counter()
    control = problem.control(vals)
    trace = problem.simulate(control, record_history=True)
    J = tracking_cost(trace.outflow, problem.target).value
    costs = [J]
    stalled = converged = False
    evaluations = 1
    it = 0
    for it in range(1, max_iter + 1):
        grad = descent_direction(problem, control, trace.history)
        gmax = float(np.max(np.abs(grad)))
        if gmax == 0.0:
            converged = True
            break
        alpha = alpha0 if alpha0 is not None else 0.1 * (p.v_max - p.v_min) / gmax
        # first-order predicted decrease of the full step already below tolerance
        if alpha * float(grad @ grad) <= tol(J):
            converged = True
            break
        for _ in range(max_backtracks):
            trial = problem.control(projection(control.values - alpha * grad, p.v_min, p.v_max))
            trial_trace = problem.simulate(trial, record_history=True)
            J_trial = tracking_cost(trial_trace.outflow, problem.target).value
            evaluations += 1
            if J_trial < J:
                break
            alpha *= 0.5
        else:
            stalled = True
            log.info("line search stalled at iteration %d (J=%.6g)", it, J)
            break
        delta = J - J_trial
        control, trace, J = trial, trial_trace, J_trial
        costs.append(J)
        if delta <= tol(J):
            converged = True
            break
    wall = time.perf_counter() - start
    meta = {"iterations": it, "evaluations": evaluations, "stalled": stalled,
            "converged": converged, "eps": eps, "cost_history": costs}
    return _finish(problem, "gdm", control, trace, wall, meta)
