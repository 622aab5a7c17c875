"""A tracking problem: road, solver grid, inflow and target outflow."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .model import DensityField, DomainError, FluxParams, Signal
from .solver import SimulationTrace, SolverConfig, simulate, simulate_feedback


@dataclass(frozen=True, eq=False)
class TrackingProblem:
    """Everything needed to evaluate ``J(v)`` for a speed-limit schedule.

    ``inflow`` and ``target`` live on the solver grid. ``control_dt`` is the
    width of one control interval (a multiple of the solver step).
    """

    params: FluxParams
    solver: SolverConfig
    inflow: Signal
    target: Signal
    control_dt: float | None = None

    def __post_init__(self):
        dt, n = self.solver.grid(self.params)
        for name in ("inflow", "target"):
            sig = getattr(self, name)
            if not sig.same_grid(Signal(0.0, dt, np.zeros(n))):
                raise DomainError(f"{name} must be sampled on the solver grid (dt={dt}, n={n})")
        cdt = dt if self.control_dt is None else float(self.control_dt)
        k = cdt / dt
        if cdt <= 0 or abs(k - round(k)) > 1e-6:
            raise DomainError(f"control interval {cdt} is not a multiple of the solver step {dt}")
        object.__setattr__(self, "control_dt", round(k) * dt)

    @classmethod
    def from_functions(cls, params: FluxParams, solver: SolverConfig, inflow_fn, target_fn,
                       control_dt: float | None = None) -> "TrackingProblem":
        dt, n = solver.grid(params)
        t = dt * np.arange(n)
        return cls(params, solver, Signal(0.0, dt, inflow_fn(t)), Signal(0.0, dt, target_fn(t)),
                   control_dt)

    @property
    def dt(self) -> float:
        return self.solver.dt(self.params)

    @property
    def n_steps(self) -> int:
        return self.solver.n_steps(self.params)

    @property
    def steps_per_control(self) -> int:
        return int(round(self.control_dt / self.dt))

    @property
    def n_controls(self) -> int:
        return -(-self.n_steps // self.steps_per_control)

    @property
    def horizon(self) -> float:
        return self.n_steps * self.dt

    @property
    def initial(self) -> DensityField:
        return self.solver.initial_field(self.params)

    def control(self, values) -> Signal:
        """Wrap per-interval speeds as a control signal."""
        values = np.asarray(values, dtype=float)
        if values.shape != (self.n_controls,):
            raise DomainError(f"expected {self.n_controls} control values, got {values.shape}")
        return Signal(0.0, self.control_dt, values)

    def constant_control(self, value: float) -> Signal:
        return self.control(np.full(self.n_controls, float(value)))

    def on_solver_grid(self, v: Signal) -> Signal:
        if v.dt == self.dt:
            return v
        return v.resample(self.dt, self.n_steps)

    def simulate(self, v: Signal, record_history: bool = False) -> SimulationTrace:
        return simulate(self.solver, v, self.inflow, self.params, record_history=record_history)

    def simulate_feedback(self, record_history: bool = False) -> SimulationTrace:
        return simulate_feedback(self.solver, self.target, self.inflow, self.params,
                                 record_history=record_history)

    def cost(self, v: Signal) -> float:
        from .cost_variation import cost
        return cost(self.simulate(v).outflow, self.target).value
