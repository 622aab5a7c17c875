"""Link entering time (LET) and the free-flow input-output map.

For a piecewise-constant speed limit the distance function
``V(t) = int_0^t v`` is piecewise linear, so every travel-time question
reduces to inverting ``V`` exactly on its knots.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import DomainError, Signal

# slack allowed when a query time sits on the horizon boundary
_TIME_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class LetTable:
    """Exact LET map for one control signal.

    ``tau(t)`` is the entry time of the car leaving the road at ``t``;
    ``t0`` is the exit time of the car that entered at the start of the horizon.
    ``t0`` is ``inf`` when that car never leaves before the horizon ends.
    """

    control: Signal
    road_length: float
    knots: np.ndarray = field(repr=False)
    distance: np.ndarray = field(repr=False)
    t0: float = float("inf")

    @property
    def horizon(self) -> float:
        return float(self.knots[-1])

    @property
    def defined(self) -> bool:
        return np.isfinite(self.t0)

    def travelled(self, t):
        """``V(t) = int_{t_start}^t v``."""
        return np.interp(t, self.knots, self.distance)

    def time_at_distance(self, d):
        """Inverse of :meth:`travelled`; ``nan`` beyond the horizon."""
        d = np.asarray(d, dtype=float)
        out = np.interp(d, self.distance, self.knots)
        out = np.where(d > self.distance[-1] * (1 + 1e-15) + 1e-15, np.nan, out)
        return float(out) if out.ndim == 0 else out

    def tau(self, t):
        t = np.asarray(t, dtype=float)
        if not self.defined:
            raise DomainError("LET undefined: no car crosses the road within the horizon")
        if np.any(t < self.t0 - _TIME_TOL) or np.any(t > self.horizon + _TIME_TOL):
            raise DomainError(f"tau defined on [{self.t0}, {self.horizon}] only")
        out = np.interp(self.travelled(t) - self.road_length, self.distance, self.knots)
        return float(out) if out.ndim == 0 else out

    def tau_inv(self, s):
        s = np.asarray(s, dtype=float)
        if not self.defined:
            raise DomainError("LET undefined: no car crosses the road within the horizon")
        t_max = self.tau(self.horizon)
        if np.any(s < self.knots[0] - _TIME_TOL) or np.any(s > t_max + _TIME_TOL):
            raise DomainError(f"tau^-1 defined on [{self.knots[0]}, {t_max}] only")
        out = np.interp(self.travelled(s) + self.road_length, self.distance, self.knots)
        return float(out) if out.ndim == 0 else out

    def exit_time(self, t, x):
        """Absolute time at which a car located at ``x`` at time ``t`` leaves; ``nan`` past the horizon."""
        return self.time_at_distance(self.travelled(t) + self.road_length - np.asarray(x, dtype=float))

    def lipschitz_bound(self) -> float:
        vals = self.control.values
        return float(vals.max() / vals.min())


def build_let(v: Signal, road_length: float) -> LetTable:
    vals = v.values
    if np.any(vals <= 0) or np.any(~np.isfinite(vals)):
        raise DomainError("speed must be strictly positive for the LET map")
    if road_length <= 0:
        raise DomainError("road length must be positive")
    knots = v.t0 + v.dt * np.arange(len(v) + 1)
    distance = np.concatenate([[0.0], np.cumsum(vals) * v.dt])
    table = LetTable(v, float(road_length), knots, distance)
    if distance[-1] >= road_length:
        object.__setattr__(table, "t0", float(np.interp(road_length, distance, knots)))
    return table


@dataclass(frozen=True, eq=False)
class ExitOffsets:
    """``s(x)`` for grid positions; ``nan`` entries did not drain before the horizon."""

    t: float
    positions: np.ndarray
    offsets: np.ndarray

    @property
    def truncated(self) -> bool:
        return bool(np.any(np.isnan(self.offsets)))


def exit_time_offsets(v: Signal | LetTable, t: float, road_length: float | None = None,
                      positions=None, n_positions: int = 100) -> ExitOffsets:
    """Solve ``int_0^s v(t + sigma) dsigma = L - x`` for each position ``x``."""
    let = v if isinstance(v, LetTable) else build_let(v, road_length)
    L = let.road_length
    if positions is None:
        positions = L * np.arange(1, n_positions + 1) / n_positions
    x = np.asarray(positions, dtype=float)
    if np.any(x < 0) or np.any(x > L):
        raise DomainError("positions must lie in [0, L]")
    return ExitOffsets(float(t), x, let.exit_time(t, x) - t)


def effective_inflow(v: Signal, inflow: Signal, rho_cr: float | None) -> Signal:
    """Inflow actually admitted: capped at the free-flow capacity ``v * rho_cr``."""
    if rho_cr is None:
        return inflow
    return inflow.with_values(np.minimum(inflow.values, rho_cr * v.at(inflow.times)))


def analytic_outflow(v: Signal, inflow: Signal, road_length: float, *,
                     rho0: float | None = None, rho_cr: float | None = None,
                     times=None) -> Signal:
    """Free-flow outflow ``In(tau(t)) * v(t) / v(tau(t))`` sampled on ``times``.

    Before ``t0`` the exiting cars come from the initial data; only a constant
    initial density is supported there (``rho0 * v(t)``), otherwise ``nan``.
    With ``rho_cr`` given the inflow is first capped at the road capacity.
    """
    let = build_let(v, road_length)
    if times is None:
        times = v.times
    times = np.asarray(times, dtype=float)
    inflow_eff = effective_inflow(v, inflow, rho_cr)
    out = np.full(times.shape, np.nan)
    late = times >= let.t0 - _TIME_TOL if let.defined else np.zeros(times.shape, bool)
    if np.any(late):
        tt = np.minimum(times[late], let.horizon)
        entry = let.tau(tt)
        out[late] = inflow_eff.at(entry) * v.at(times[late]) / v.at(entry)
    if rho0 is not None:
        out[~late] = rho0 * v.at(times[~late])
    dt = times[1] - times[0] if times.size > 1 else v.dt
    return Signal(float(times[0]), float(dt), out)
