"""First-order Godunov finite-volume solver for the single-road IBVP.

Left boundary: inflow imposed in flux form, ``F_1/2 = min(In, supply(rho_1))``.
Right boundary: free outflow through a ghost cell copying ``rho_J``.
The speed limit ``v^n`` is held constant over ``[t^n, t^{n+1})``.
"""

from __future__ import annotations

import csv
import logging
import math
from dataclasses import dataclass, field

import numba
import numpy as np

from .model import DensityField, DomainError, FluxParams, Signal, demand, supply

log = logging.getLogger(__name__)


class ConfigError(ValueError):
    """Invalid solver configuration (including CFL violations)."""


class SimulationError(RuntimeError):
    """Non-finite state encountered while stepping."""


@dataclass(frozen=True)
class SolverConfig:
    n_cells: int = 100
    t_end: float = 15.0
    cfl_safety: float = 1.0
    initial_density: DensityField | float = 0.4

    def __post_init__(self):
        if self.n_cells < 2:
            raise ConfigError("n_cells must be >= 2")
        if not self.t_end > 0:
            raise ConfigError("t_end must be positive")
        if not 0 < self.cfl_safety <= 1:
            raise ConfigError("cfl_safety must lie in (0, 1]")
        if isinstance(self.initial_density, DensityField) and len(self.initial_density) != self.n_cells:
            raise ConfigError("initial density profile does not match n_cells")

    def dx(self, p: FluxParams) -> float:
        return p.road_length / self.n_cells

    def dt(self, p: FluxParams) -> float:
        """Time step from the worst-case wave speed over all admissible speeds."""
        return self.cfl_safety * self.dx(p) / (2.0 * max_wave_speed(p.v_max, p))

    def n_steps(self, p: FluxParams) -> int:
        return int(math.ceil(self.t_end / self.dt(p) - 1e-9))

    def initial_field(self, p: FluxParams) -> DensityField:
        if isinstance(self.initial_density, DensityField):
            return self.initial_density
        return DensityField.constant(self.initial_density, self.n_cells, p.road_length)

    def grid(self, p: FluxParams) -> tuple[float, int]:
        """(dt, number of steps) of the solver time grid."""
        return self.dt(p), self.n_steps(p)


def max_wave_speed(v: float, p: FluxParams) -> float:
    return v * max(1.0, p.congested_slope)


def godunov_flux(rho_left, rho_right, v, p: FluxParams):
    """Godunov interface flux; ``min(demand(rho_l), supply(rho_r))`` for this diagram."""
    out = np.minimum(demand(rho_left, v, p), supply(rho_right, v, p))
    return float(out) if np.ndim(out) == 0 else out


def check_cfl(dt: float, dx: float, v: float, p: FluxParams) -> None:
    if dt * max_wave_speed(v, p) > 0.5 * dx * (1 + 1e-12):
        raise ConfigError(f"CFL violated: dt={dt} with wave speed {max_wave_speed(v, p)} and dx={dx}")


def interface_fluxes(rho: np.ndarray, v: float, inflow: float, p: FluxParams) -> np.ndarray:
    """All ``J+1`` interface fluxes including both boundaries."""
    dem = v * np.minimum(rho, p.rho_cr)
    sup = np.where(rho <= p.rho_cr, v * p.rho_cr, v * p.congested_slope * (p.rho_max - rho))
    F = np.empty(rho.size + 1)
    F[1:-1] = np.minimum(dem[:-1], sup[1:])
    F[0] = min(inflow, sup[0])
    F[-1] = min(dem[-1], sup[-1])
    return F


def step(field: DensityField, v: float, inflow: float, dt: float, p: FluxParams) -> DensityField:
    """Advance one Godunov step in conservative form."""
    if not p.v_min - 1e-12 <= v <= p.v_max + 1e-12:
        raise DomainError(f"speed {v} outside [{p.v_min}, {p.v_max}]")
    if inflow < 0:
        raise DomainError("inflow must be non-negative")
    check_cfl(dt, field.dx, v, p)
    F = interface_fluxes(field.cells, v, inflow, p)
    return DensityField(field.dx, field.cells - dt / field.dx * (F[1:] - F[:-1]))


@numba.njit(cache=True, nogil=True)
def _run(rho0, v_steps, in_steps, fstar_steps, dx, dt, rho_cr, rho_max,
         v_min, v_max, feedback, record):
    J = rho0.size
    N = in_steps.size
    lam = dt / dx
    w = rho_cr / (rho_max - rho_cr)
    rho = rho0.copy()
    new = np.empty(J)
    F = np.empty(J + 1)
    out = np.empty(N)
    exit_rho = np.empty(N)
    f_in = np.empty(N)
    f_out = np.empty(N)
    v_used = np.empty(N)
    mass = np.empty(N + 1)
    hist = np.empty((N + 1 if record else 1, J))
    if record:
        hist[0] = rho
    mass[0] = rho.sum() * dx
    rho_peak = rho.max()
    guards = 0
    v = v_steps[0]
    for n in range(N):
        if not feedback:
            v = v_steps[n]
        for j in range(J + 1):
            if j == 0:
                r = rho[0]
                s = v * rho_cr if r <= rho_cr else v * w * (rho_max - r)
                F[0] = min(in_steps[n], s)
            else:
                rl = rho[j - 1]
                d = v * min(rl, rho_cr)
                if j < J:
                    rr = rho[j]
                else:
                    rr = rl
                s = v * rho_cr if rr <= rho_cr else v * w * (rho_max - rr)
                F[j] = min(d, s)
        rJ = rho[J - 1]
        exit_rho[n] = rJ
        out[n] = rJ * v
        v_used[n] = v
        f_in[n] = F[0]
        f_out[n] = F[J]
        finite = True
        for j in range(J):
            new[j] = rho[j] - lam * (F[j + 1] - F[j])
            if not np.isfinite(new[j]):
                finite = False
        if not finite:
            return out, exit_rho, f_in, f_out, v_used, mass, hist, rho_peak, guards, n
        rho, new = new, rho
        mass[n + 1] = rho.sum() * dx
        m = rho.max()
        if m > rho_peak:
            rho_peak = m
        if record:
            hist[n + 1] = rho
        if feedback:
            # next speed from the exit density before this update
            if rJ > 0.0:
                v = min(max(fstar_steps[n] / rJ, v_min), v_max)
            else:
                v = v_max
                guards += 1
    return out, exit_rho, f_in, f_out, v_used, mass, hist, rho_peak, guards, -1


@dataclass(frozen=True, eq=False)
class SimulationTrace:
    """Per-step record of a run; ``outflow[n] = rho_J^n * v^n``."""

    times: np.ndarray = field(repr=False)
    outflow: Signal
    exit_density: Signal
    control: Signal
    inflow_flux: np.ndarray = field(repr=False)
    outflow_flux: np.ndarray = field(repr=False)
    mass: np.ndarray = field(repr=False)
    dx: float
    history: np.ndarray | None = field(default=None, repr=False)
    max_density: float = float("nan")
    division_guards: int = 0

    @property
    def dt(self) -> float:
        return self.outflow.dt

    def __len__(self) -> int:
        return len(self.outflow)

    def mass_residuals(self) -> np.ndarray:
        """Per-step ``mass^{n+1} - mass^n - dt*(F_in - F_out)``."""
        return np.diff(self.mass) - self.dt * (self.inflow_flux - self.outflow_flux)

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(["t", "out", "exit_density", "v"])
            for row in zip(self.times, self.outflow.values, self.exit_density.values, self.control.values):
                w.writerow([repr(float(x)) for x in row])

    def history_to_csv(self, path) -> None:
        if self.history is None:
            raise ValueError("trace was recorded without density history")
        np.savetxt(path, self.history, delimiter=",", fmt="%.17g")


def _on_grid(sig: Signal, dt: float, n: int, what: str) -> np.ndarray:
    """Map a signal onto the solver grid, accepting coarser uniform grids."""
    if sig.same_grid(Signal(0.0, dt, np.zeros(n))):
        return np.asarray(sig.values, dtype=float)
    ratio = sig.dt / dt
    if abs(ratio - round(ratio)) > 1e-6 or abs(sig.t0) > 1e-12:
        raise ConfigError(f"{what} signal grid (dt={sig.dt}) is not a coarsening of the solver grid (dt={dt})")
    if sig.t_end < n * dt - 1e-9 * dt:
        raise ConfigError(f"{what} signal ends at {sig.t_end}, before the horizon {n * dt}")
    return np.asarray(sig.at(dt * np.arange(n)), dtype=float)


def _execute(cfg, p, v_steps, in_steps, fstar_steps, feedback, record, check_free_flow):
    dt, n = cfg.grid(p)
    rho0 = cfg.initial_field(p)
    rho0.validate(p, free_flow=check_free_flow)
    if np.any(in_steps < 0):
        raise DomainError("inflow must be non-negative")
    if not feedback and (np.any(v_steps < p.v_min - 1e-12) or np.any(v_steps > p.v_max + 1e-12)):
        raise DomainError(f"control outside [{p.v_min}, {p.v_max}]")
    res = _run(np.ascontiguousarray(rho0.cells), np.ascontiguousarray(v_steps),
               np.ascontiguousarray(in_steps), np.ascontiguousarray(fstar_steps),
               rho0.dx, dt, p.rho_cr, p.rho_max, p.v_min, p.v_max, feedback, record)
    out, exit_rho, f_in, f_out, v_used, mass, hist, peak, guards, bad = res
    if bad >= 0:
        raise SimulationError(f"non-finite density at step {bad} (t={bad * dt:.6g})")
    if guards:
        log.warning("exit density vanished %d times; speed set to v_max", guards)
    if check_free_flow and peak > p.rho_cr + 1e-12:
        raise SimulationError(f"density {peak} left the free-flow regime (rho_cr={p.rho_cr})")
    times = dt * np.arange(n)
    return SimulationTrace(
        times=times,
        outflow=Signal(0.0, dt, out),
        exit_density=Signal(0.0, dt, exit_rho),
        control=Signal(0.0, dt, v_used),
        inflow_flux=f_in,
        outflow_flux=f_out,
        mass=mass,
        dx=rho0.dx,
        history=hist if record else None,
        max_density=float(peak),
        division_guards=int(guards),
    )


def simulate(cfg: SolverConfig, v: Signal, inflow: Signal, p: FluxParams, *,
             record_history: bool = False, check_free_flow: bool = False) -> SimulationTrace:
    """Open-loop run under a prescribed speed-limit schedule."""
    dt, n = cfg.grid(p)
    v_steps = _on_grid(v, dt, n, "control")
    in_steps = _on_grid(inflow, dt, n, "inflow")
    return _execute(cfg, p, v_steps, in_steps, np.zeros(n), False, record_history, check_free_flow)


def simulate_feedback(cfg: SolverConfig, target: Signal, inflow: Signal, p: FluxParams, *,
                      record_history: bool = False, check_free_flow: bool = False) -> SimulationTrace:
    """Closed-loop run with ``v^{n+1} = P(f*(t^n) / rho_J^n)`` and ``v^0 = P(f*(0) / rho_J^0)``."""
    dt, n = cfg.grid(p)
    fstar = _on_grid(target, dt, n, "target")
    in_steps = _on_grid(inflow, dt, n, "inflow")
    rJ = cfg.initial_field(p).cells[-1]
    v0 = p.v_max if rJ <= 0 else min(max(fstar[0] / rJ, p.v_min), p.v_max)
    v_steps = np.full(n, v0)
    return _execute(cfg, p, v_steps, in_steps, fstar, True, record_history, check_free_flow)


def density_bounds(initial: DensityField, inflow: Signal, p: FluxParams) -> tuple[float, float]:
    """Maximum-principle envelope for the density from initial data and inflow range."""
    f_min, f_max = float(np.min(inflow.values)), float(np.max(inflow.values))
    lo = min(float(initial.cells.min()), f_min / p.v_max)
    hi = max(float(initial.cells.max()), f_max / p.v_min)
    return lo, hi


def outflow_bounds(initial: DensityField, inflow: Signal, p: FluxParams) -> tuple[float, float]:
    f_min, f_max = float(np.min(inflow.values)), float(np.max(inflow.values))
    lo = min(float(initial.cells.min()) * p.v_min, f_min * p.v_min / p.v_max)
    hi = max(float(initial.cells.max()) * p.v_max, f_max * p.v_max / p.v_min)
    return lo, hi
