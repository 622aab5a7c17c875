"""Tracking cost, discrete measure integrals and needle-variation derivatives.

The needle derivative is the limit of ``(J(v') - J(v)) / (dv * dt)`` where
``v'`` raises (``side="plus"``) or lowers (``side="minus"``) the speed on one
solver step. On the grid it reads, with ``rho`` the profile at step ``n``::

    2 rho_J^2 v - 2 rho_J f*                        (exit during the needle)
    - sum_k v(E_k) (rho_{k+1}^2 - rho_k^2)           (cars on the road shift
    + 2 sum_k f*(E_k) (rho_{k+1} - rho_k)             downstream by dv*dt)
    + 2 (In/v) (f*(E_0-) - v(E_0-) In / v)          (cars entering during the needle)

``E_k`` is the exit time of the jump between cells ``k`` and ``k+1``.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from typing import Literal

import numpy as np

from .letmap import LetTable, build_let
from .model import DensityField, DomainError, FluxParams, Signal, total_variation
from .problem import TrackingProblem

Side = Literal["plus", "minus"]


@dataclass(frozen=True, eq=False)
class CostReport:
    value: float
    per_step_residual: Signal = field(repr=False)
    tv_of_control: float | None = None


def cost(out: Signal, target: Signal, control: Signal | None = None) -> CostReport:
    """Left-endpoint Riemann sum of ``(Out - f*)^2``."""
    if not out.same_grid(target):
        raise DomainError("outflow and target are not on a common grid")
    res = (out.values - target.values) ** 2
    tv = None if control is None else total_variation(control)
    return CostReport(float(np.sum(res) * out.dt), out.with_values(res), tv)


def measure_integral(phi, psi) -> float:
    """``sum_j phi_j (psi_{j+1} - psi_j)``: every grid jump of ``psi`` is an atom.

    ``phi_j`` is the integrand on the downstream side of the jump between
    cells ``j`` and ``j+1``.
    """
    phi = np.asarray(phi, dtype=float)
    psi = np.asarray(psi.cells if isinstance(psi, DensityField) else psi, dtype=float)
    if phi.shape[-1] != psi.shape[-1] - 1:
        raise DomainError(f"phi needs {psi.shape[-1] - 1} interface values, got {phi.shape[-1]}")
    return np.sum(phi * np.diff(psi, axis=-1), axis=-1)


def _limit(sig: Signal, t, side: Side):
    return sig.at(t) if side == "plus" else sig.left_limit(t)


def _needle_terms(rho, t_next, v_hat, fstar_now, inflow_now, v, target, let, p, horizon,
                  side, fstar_term, jacobian, exit_trace=None):
    """Vectorized over the leading axis of ``rho`` (one row per needle)."""
    J = rho.shape[-1]
    dx = p.road_length / J
    rho_J = rho[..., -1]
    total = 2.0 * rho_J ** 2 * v_hat - 2.0 * rho_J * fstar_now

    # a jump between cells k, k+1 perturbs cell k+1 and is read at the exit
    # once it has covered L - (k+1) dx
    x_down = dx * np.arange(2, J + 1)
    exits = let.exit_time(np.asarray(t_next)[..., None], x_down)
    ok = np.isfinite(exits) & (exits < horizon - 1e-9 * let.control.dt)
    e = np.where(ok, exits, 0.0)
    v_e = np.where(ok, _limit(v, e, side), 0.0)
    f_e = np.where(ok, _limit(target, e, side), 0.0)
    if jacobian:
        w_sq, w_lin = v_e, f_e
    else:
        w_sq, w_lin = v_e ** 2, f_e * v_e
    total = total - measure_integral(w_sq, rho ** 2) + 2.0 * measure_integral(w_lin, rho)

    # cars admitted during the needle leave once they crossed L - dx
    e0 = let.exit_time(t_next, dx)
    ok0 = np.isfinite(e0) & (e0 < horizon - 1e-9 * let.control.dt)
    e0 = np.where(ok0, e0, 0.0)
    v_tilde = v.left_limit(e0)
    f_exit = target.left_limit(e0) if fstar_term == "proof" else fstar_now
    ratio = inflow_now / v_hat
    entering = 2.0 * ratio * (f_exit - v_tilde * ratio)
    # supply-limited entry keeps the entering density at rho_cr
    free = inflow_now < v_hat * p.rho_cr
    total = total + np.where(ok0 & free, entering, 0.0)
    if exit_trace is not None:
        total = total + _upwind_correction(exit_trace, t_next, e0, ok0, v)
    return total


def _upwind_correction(exit_trace, t_next, e0, ok0, v):
    """``sum_m v^m (rho_J^m - rho_J^{m-1})^2`` while the old cars drain.

    The upwind scheme smears every jump before it reaches the exit; this
    quadratic-variation term is what the smearing adds to the response of the
    cost, so with it the formula matches the discrete solver, not only its
    limit. It is O(dx) and vanishes on refinement.
    """
    trace = np.asarray(exit_trace, dtype=float)
    n_steps = trace.size - 1
    q = np.concatenate([[0.0], np.cumsum(v.values[1:n_steps] * np.diff(trace[:n_steps]) ** 2)])
    start = np.rint((np.asarray(t_next) - v.t0) / v.dt).astype(int) - 1
    stop = np.where(ok0, np.floor((e0 - v.t0) / v.dt + 1e-9), n_steps - 1).astype(int)
    start = np.clip(start, 0, n_steps - 1)
    stop = np.clip(stop, start, n_steps - 1)
    return q[stop] - q[start]


def _check_side(side):
    if side not in ("plus", "minus"):
        raise DomainError(f"side must be 'plus' or 'minus', got {side!r}")


def needle_variation(n: int, state: DensityField, v: Signal, inflow: Signal, target: Signal,
                     let: LetTable, p: FluxParams, side: Side = "plus", *,
                     horizon: float | None = None, extended: bool = False,
                     fstar_term: Literal["proof", "printed"] = "proof",
                     jacobian: bool = True, exit_trace=None) -> float:
    """One-sided cost derivative for a needle on solver step ``n``.

    ``v``, ``inflow`` and ``target`` are on the solver grid and ``state`` is
    the density at ``t^n``. Without ``extended`` the needle must start in
    ``[t0, tau(T))``; with it, any step is accepted and exits past the horizon
    are dropped. ``jacobian=False`` and ``fstar_term="printed"`` select the
    uncorrected textbook variants for comparison. Passing the exit-cell
    density history ``exit_trace`` (one value per step, ``n_steps + 1`` of
    them) adds the upwind correction so the value tracks the solver on a
    coarse grid.
    """
    _check_side(side)
    horizon = v.t_end if horizon is None else horizon
    if not 0 <= n < len(v):
        raise DomainError(f"step {n} outside the control grid")
    t = v.t0 + n * v.dt
    if not extended:
        if not let.defined or t < let.t0 - 1e-12 or t >= let.tau(let.horizon):
            raise DomainError(f"needle at t={t} outside [t0, tau(T))")
    v_hat = float(v.values[n])
    if side == "plus" and v_hat >= p.v_max - 1e-12:
        raise DomainError("needle raises the speed above v_max")
    if side == "minus" and v_hat <= p.v_min + 1e-12:
        raise DomainError("needle lowers the speed below v_min")
    val = _needle_terms(np.asarray(state.cells, float), t + v.dt, v_hat, target.values[n],
                        inflow.values[n], v, target, let, p, horizon, side, fstar_term, jacobian,
                        exit_trace)
    return float(val)


def needle_gradient(problem: TrackingProblem, v: Signal, side: Side = "plus", *,
                    history: np.ndarray | None = None, fstar_term="proof",
                    jacobian: bool = True, discrete: bool = True) -> np.ndarray:
    """Needle derivative at every solver step (extended formula).

    Entries where the one-sided needle is inadmissible (speed already at the
    bound) are ``nan``. ``discrete`` adds the upwind correction (see
    :func:`needle_variation`).
    """
    _check_side(side)
    p = problem.params
    vg = problem.on_solver_grid(v)
    if history is None:
        history = problem.simulate(vg, record_history=True).history
    let = build_let(vg, p.road_length)
    n = len(vg)
    t_next = vg.t0 + vg.dt * np.arange(1, n + 1)
    vals = vg.values
    g = _needle_terms(history[:n], t_next, vals, problem.target.values, problem.inflow.values,
                      vg, problem.target, let, p, problem.horizon, side, fstar_term, jacobian,
                      history[:, -1] if discrete else None)
    bad = vals >= p.v_max - 1e-12 if side == "plus" else vals <= p.v_min + 1e-12
    return np.where(bad, np.nan, g)


def fd_variation(problem: TrackingProblem, v: Signal, n: int, dv: float = 1e-3,
                 side: Side = "plus", base_cost: float | None = None) -> float:
    """Brute-force needle derivative from two simulations, ``(J(v') - J(v)) / (dv dt)``."""
    _check_side(side)
    p = problem.params
    vg = problem.on_solver_grid(v)
    step = abs(dv) if side == "plus" else -abs(dv)
    vals = np.array(vg.values)
    vals[n] += step
    if not p.v_min - 1e-12 <= vals[n] <= p.v_max + 1e-12:
        raise DomainError(f"perturbed speed {vals[n]} outside [{p.v_min}, {p.v_max}]")
    if base_cost is None:
        base_cost = problem.cost(vg)
    return (problem.cost(vg.with_values(vals)) - base_cost) / (step * vg.dt)


@dataclass(frozen=True, eq=False)
class VariationVector:
    times: np.ndarray
    right_variation: np.ndarray
    left_variation: np.ndarray
    fd: np.ndarray | None = None

    def to_csv(self, path) -> None:
        fd = self.fd if self.fd is not None else np.full(self.times.shape, np.nan)
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "left", "right", "fd"])
            for row in zip(self.times, self.left_variation, self.right_variation, fd):
                w.writerow([repr(float(x)) for x in row])


def variation_vector(problem: TrackingProblem, v: Signal, history=None) -> VariationVector:
    vg = problem.on_solver_grid(v)
    if history is None:
        history = problem.simulate(vg, record_history=True).history
    right = needle_gradient(problem, vg, "plus", history=history)
    left = needle_gradient(problem, vg, "minus", history=history)
    return VariationVector(vg.times, right, left)


def locally_constant_steps(problem: TrackingProblem, v: Signal, count: int, *,
                           half_width: int = 10, interior: bool = True) -> np.ndarray:
    """``count`` evenly spread solver steps around which inflow, target and speed are flat.

    A step qualifies when all three signals are constant on ``half_width``
    steps either side. With ``interior`` only needles in ``[t0, tau(T))`` are
    kept, where every affected car leaves before the horizon.
    """
    vg = problem.on_solver_grid(v)
    n = len(vg)
    flat = np.ones(n, bool)
    for sig in (problem.inflow.values, problem.target.values, vg.values):
        for s in range(-half_width, half_width + 1):
            shifted = np.roll(sig, s)
            flat &= np.abs(shifted - sig) <= 1e-12
    flat[:half_width] = flat[n - half_width:] = False
    if interior:
        let = build_let(vg, problem.params.road_length)
        if not let.defined:
            return np.array([], dtype=int)
        t = vg.times
        flat &= (t >= let.t0) & (t < let.tau(let.horizon))
    idx = np.flatnonzero(flat)
    if idx.size <= count:
        return idx
    return idx[np.round(np.linspace(0, idx.size - 1, count)).astype(int)]
