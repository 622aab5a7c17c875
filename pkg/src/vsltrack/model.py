"""Fundamental diagram, parameter sets and piecewise-constant signals.

The flux is the triangular (Newell-Daganzo) diagram whose free-flow slope is
the speed limit ``v``::

    f(rho, v) = v * rho                                   rho <= rho_cr
    f(rho, v) = v * rho_cr * (rho_max - rho) / (rho_max - rho_cr)   otherwise
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

# tolerance used when locating a time on a uniform grid
_GRID_EPS = 1e-9


class DomainError(ValueError):
    """Raised when an argument lies outside the domain of an operation."""


@dataclass(frozen=True)
class FluxParams:
    """Fundamental-diagram constants and road length (dimensionless units)."""

    road_length: float = 1.0
    rho_cr: float = 0.5
    rho_max: float = 1.0
    v_min: float = 0.5
    v_max: float = 1.0

    def __post_init__(self):
        if not 0.0 < self.rho_cr < self.rho_max:
            raise DomainError(f"need 0 < rho_cr < rho_max, got {self.rho_cr}, {self.rho_max}")
        if not 0.0 < self.v_min <= self.v_max:
            raise DomainError(f"need 0 < v_min <= v_max, got {self.v_min}, {self.v_max}")
        if not self.road_length > 0.0:
            raise DomainError(f"road length must be positive, got {self.road_length}")

    @property
    def congested_slope(self) -> float:
        """rho_cr / (rho_max - rho_cr); multiply by ``v`` for the backward wave speed."""
        return self.rho_cr / (self.rho_max - self.rho_cr)


def _check_rho(rho, p: FluxParams):
    rho = np.asarray(rho, dtype=float)
    if np.any(rho < -1e-12) or np.any(rho > p.rho_max + 1e-12) or np.any(np.isnan(rho)):
        raise DomainError(f"density outside [0, {p.rho_max}]")
    return rho


def _check_v(v, p: FluxParams):
    v = np.asarray(v, dtype=float)
    if np.any(v < p.v_min - 1e-12) or np.any(v > p.v_max + 1e-12) or np.any(np.isnan(v)):
        raise DomainError(f"speed outside [{p.v_min}, {p.v_max}]")
    return v


def _flux(rho, v, p: FluxParams):
    return np.where(rho <= p.rho_cr, rho * v, v * p.congested_slope * (p.rho_max - rho))


def flux(rho, v, p: FluxParams):
    """Flow ``f(rho, v)``; accepts scalars or arrays (broadcast)."""
    rho = _check_rho(rho, p)
    v = _check_v(v, p)
    out = _flux(rho, v, p)
    return float(out) if out.ndim == 0 else out


def demand(rho, v, p: FluxParams):
    """Non-decreasing envelope of the flux: f(min(rho, rho_cr), v)."""
    rho = _check_rho(rho, p)
    out = np.asarray(v, dtype=float) * np.minimum(rho, p.rho_cr)
    return float(out) if out.ndim == 0 else out


def supply(rho, v, p: FluxParams):
    """Non-increasing envelope of the flux: f(max(rho, rho_cr), v)."""
    rho = _check_rho(rho, p)
    out = _flux(np.maximum(rho, p.rho_cr), np.asarray(v, dtype=float), p)
    return float(out) if out.ndim == 0 else out


def projection(x, a: float, b: float):
    """Clamp ``x`` into ``[a, b]``."""
    if a > b:
        raise DomainError(f"empty interval [{a}, {b}]")
    out = np.clip(x, a, b)
    return float(out) if np.ndim(out) == 0 else out


@dataclass(frozen=True, eq=False)
class Signal:
    """Piecewise-constant time series.

    ``values[i]`` holds on ``[t0 + i*dt, t0 + (i+1)*dt)``. Point evaluation
    is right-continuous; :meth:`left_limit` gives the value just before ``t``.
    Outside the sampled domain the first/last sample is extended.
    """

    t0: float
    dt: float
    values: np.ndarray = field(repr=False)

    def __post_init__(self):
        vals = np.array(self.values, dtype=float)
        if vals.ndim != 1 or vals.size == 0:
            raise DomainError("signal needs a non-empty 1-d sequence of samples")
        if not self.dt > 0:
            raise DomainError(f"signal dt must be positive, got {self.dt}")
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __len__(self) -> int:
        return self.values.size

    def __eq__(self, other):
        if not isinstance(other, Signal):
            return NotImplemented
        return (self.t0 == other.t0 and self.dt == other.dt
                and np.array_equal(self.values, other.values))

    __hash__ = None

    @property
    def t_end(self) -> float:
        return self.t0 + len(self) * self.dt

    @property
    def times(self) -> np.ndarray:
        """Left endpoints of the sample intervals."""
        return self.t0 + self.dt * np.arange(len(self))

    def index(self, t):
        """Index of the interval containing ``t`` (right-continuous)."""
        k = np.floor((np.asarray(t, dtype=float) - self.t0) / self.dt + _GRID_EPS).astype(int)
        return np.clip(k, 0, len(self) - 1)

    def left_index(self, t):
        k = np.ceil((np.asarray(t, dtype=float) - self.t0) / self.dt - _GRID_EPS).astype(int) - 1
        return np.clip(k, 0, len(self) - 1)

    def at(self, t):
        out = self.values[self.index(t)]
        return float(out) if np.ndim(out) == 0 else out

    def right_limit(self, t):
        return self.at(t)

    def left_limit(self, t):
        out = self.values[self.left_index(t)]
        return float(out) if np.ndim(out) == 0 else out

    def with_values(self, values) -> "Signal":
        return Signal(self.t0, self.dt, values)

    def same_grid(self, other: "Signal") -> bool:
        return (len(self) == len(other) and abs(self.t0 - other.t0) <= _GRID_EPS * self.dt
                and abs(self.dt - other.dt) <= _GRID_EPS * self.dt)

    def resample(self, dt: float, n: int, t0: float = 0.0) -> "Signal":
        """Sample at the left endpoints of a new uniform grid."""
        return Signal(t0, dt, self.at(t0 + dt * np.arange(n)))

    def integral(self) -> float:
        return float(np.sum(self.values) * self.dt)

    # serialization ------------------------------------------------------

    def to_csv(self, path, header=("t", "value")) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh)
            w.writerow(header)
            for t, x in zip(self.times, self.values):
                w.writerow([repr(float(t)), repr(float(x))])

    @classmethod
    def from_csv(cls, path) -> "Signal":
        """Read a two-column ``t,value`` file with a header on a uniform grid."""
        path = Path(path)
        with open(path, newline="") as fh:
            rows = list(csv.reader(fh))
        if len(rows) < 2:
            raise DomainError(f"{path}: no samples")
        try:
            data = np.array([[float(r[0]), float(r[1])] for r in rows[1:] if r], dtype=float)
        except (ValueError, IndexError) as exc:
            raise DomainError(f"{path}: malformed row ({exc})") from None
        t = data[:, 0]
        if t.size == 1:
            raise DomainError(f"{path}: need at least two samples to infer dt")
        dt = t[1] - t[0]
        if dt <= 0 or not np.allclose(np.diff(t), dt, rtol=1e-6, atol=1e-12):
            raise DomainError(f"{path}: times must be uniform and increasing")
        return cls(float(t[0]), float(dt), data[:, 1])


def total_variation(s: Signal | Sequence[float]) -> float:
    """Sum of absolute jumps between consecutive samples."""
    vals = s.values if isinstance(s, Signal) else np.asarray(s, dtype=float)
    return float(np.sum(np.abs(np.diff(vals))))


@dataclass(frozen=True, eq=False)
class DensityField:
    """Cell averages on a uniform grid of width ``dx``."""

    dx: float
    cells: np.ndarray = field(repr=False)

    def __post_init__(self):
        c = np.array(self.cells, dtype=float)
        if c.ndim != 1 or c.size == 0:
            raise DomainError("density field needs a non-empty 1-d array")
        if not self.dx > 0:
            raise DomainError("dx must be positive")
        c.setflags(write=False)
        object.__setattr__(self, "cells", c)

    @classmethod
    def constant(cls, value: float, n_cells: int, length: float = 1.0) -> "DensityField":
        return cls(length / n_cells, np.full(n_cells, float(value)))

    def __len__(self) -> int:
        return self.cells.size

    def mass(self) -> float:
        return float(np.sum(self.cells) * self.dx)

    def validate(self, p: FluxParams, free_flow: bool = False, tol: float = 1e-12) -> None:
        if np.any(self.cells < -tol) or np.any(self.cells > p.rho_max + tol):
            raise DomainError("density outside [0, rho_max]")
        if free_flow and np.any(self.cells > p.rho_cr + tol):
            raise DomainError(f"density {self.cells.max()} exceeds rho_cr={p.rho_cr} in a free-flow run")


# analytic presets ------------------------------------------------------------

def constant_fn(value: float = 0.0) -> Callable:
    return lambda t: np.full(np.shape(t), float(value))


def sin_capped_fn(base: float = 0.3, amp: float = 0.3, freq: float = 1.0, cap: float = 0.5) -> Callable:
    """t -> min(base + amp*sin(2*pi*freq*t), cap)."""
    return lambda t: np.minimum(base + amp * np.sin(2 * np.pi * freq * np.asarray(t, float)), cap)


def abs_sin_fn(amp: float = 0.4, rate: float = 1.0, phase: float = 0.3) -> Callable:
    """t -> |amp*sin(pi*rate*t - phase)|."""
    return lambda t: np.abs(amp * np.sin(np.pi * rate * np.asarray(t, float) - phase))


PRESETS = {
    "constant": constant_fn,
    "sin-capped": sin_capped_fn,
    "abs-sin": abs_sin_fn,
}


def preset_signal(name: str, dt: float, n: int, t0: float = 0.0, **params) -> Signal:
    """Sample a named preset at the left endpoints of ``n`` intervals of width ``dt``."""
    try:
        fn = PRESETS[name](**params)
    except KeyError:
        raise DomainError(f"unknown signal preset {name!r}; choose from {sorted(PRESETS)}") from None
    except TypeError as exc:
        raise DomainError(f"bad parameters for preset {name!r}: {exc}") from None
    return Signal(t0, dt, fn(t0 + dt * np.arange(n)))
