import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vsltrack.letmap import analytic_outflow, build_let, effective_inflow, exit_time_offsets
from vsltrack.model import DomainError, Signal


def exact_integral(v: Signal, a, b):
    """Overlap-length sum of a piecewise-constant signal, no cumulative table."""
    edges = v.t0 + v.dt * np.arange(len(v) + 1)
    lo = np.clip(edges[:-1], a, b)
    hi = np.clip(edges[1:], a, b)
    return float(np.sum(v.values * (hi - lo)))


def bisect(fn, lo, hi, tol=1e-14):
    flo = fn(lo)
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if (fn(mid) > 0) == (flo > 0):
            lo, flo = mid, fn(mid)
        else:
            hi = mid
        if hi - lo < tol:
            break
    return 0.5 * (lo + hi)


speeds = st.lists(st.floats(0.5, 1.0), min_size=20, max_size=60)


def test_constant_speed():
    let = build_let(Signal(0.0, 0.5, np.full(20, 0.5)), 1.0)
    assert let.t0 == pytest.approx(2.0)
    assert let.tau(5.0) == pytest.approx(3.0)
    assert let.tau_inv(3.0) == pytest.approx(5.0)
    assert let.lipschitz_bound() == 1.0


def test_switching_speed():
    v = Signal(0.0, 0.5, [1.0] + [0.5] * 9)
    assert build_let(v, 1.0).t0 == pytest.approx(1.5)


def test_undefined_let():
    let = build_let(Signal(0.0, 0.1, np.full(5, 0.5)), 1.0)
    assert not let.defined and let.t0 == np.inf
    with pytest.raises(DomainError, match="undefined"):
        let.tau(0.3)


def test_domain_errors():
    with pytest.raises(DomainError):
        build_let(Signal(0.0, 0.1, [1.0, 0.0]), 1.0)
    with pytest.raises(DomainError):
        build_let(Signal(0.0, 0.1, [1.0]), 0.0)
    let = build_let(Signal(0.0, 0.5, np.full(20, 0.5)), 1.0)
    with pytest.raises(DomainError):
        let.tau(1.0)
    with pytest.raises(DomainError):
        let.tau(10.5)
    with pytest.raises(DomainError):
        let.tau_inv(9.0)
    assert np.isnan(let.time_at_distance(6.0))


@given(speeds, st.floats(0, 1))
def test_tau_integral_identity(vals, u):
    v = Signal(0.0, 0.25, vals)
    let = build_let(v, 1.0)
    t = let.t0 + u * (let.horizon - let.t0)
    assert exact_integral(v, let.tau(t), t) == pytest.approx(1.0, abs=1e-10)
    assert let.tau_inv(let.tau(t)) == pytest.approx(t, abs=1e-10)


@given(speeds, st.floats(0, 1), st.floats(0, 1))
def test_tau_lipschitz(vals, a, b):
    let = build_let(Signal(0.0, 0.25, vals), 1.0)
    t1, t2 = (let.t0 + w * (let.horizon - let.t0) for w in (a, b))
    assert abs(let.tau(t2) - let.tau(t1)) <= let.lipschitz_bound() * abs(t2 - t1) + 1e-9
    assert let.lipschitz_bound() <= 2.0


def test_exit_offsets_constant():
    off = exit_time_offsets(Signal(0.0, 0.5, np.full(10, 1.0)), 0.7, 1.0, positions=[0.0, 0.25, 1.0])
    np.testing.assert_allclose(off.offsets, [1.0, 0.75, 0.0])
    off = exit_time_offsets(Signal(0.0, 0.5, np.full(10, 0.5)), 0.0, 1.0, positions=[0.5])
    assert off.offsets[0] == pytest.approx(1.0)
    assert not off.truncated


def test_exit_offsets_default_grid_and_truncation():
    off = exit_time_offsets(Signal(0.0, 0.5, np.full(4, 0.5)), 1.8, 1.0)
    assert off.positions.shape == (100,) and off.positions[-1] == 1.0
    assert off.truncated and np.isfinite(off.offsets[-1])
    with pytest.raises(DomainError):
        exit_time_offsets(Signal(0.0, 0.5, np.full(4, 0.5)), 0.0, 1.0, positions=[1.5])


@given(speeds, st.floats(0, 0.5), st.floats(0, 1))
def test_exit_offsets_match_bisection(vals, t, x):
    v = Signal(0.0, 0.25, vals)
    off = exit_time_offsets(v, t, 1.0, positions=[x])
    if off.truncated:
        return
    target = 1.0 - x
    s = bisect(lambda s: exact_integral(v, t, t + s) - target, 0.0, v.t_end - t)
    assert off.offsets[0] == pytest.approx(s, abs=1e-10)


def test_outflow_constant():
    v = Signal(0.0, 0.1, np.full(100, 0.8))
    out = analytic_outflow(v, Signal(0.0, 0.1, np.full(100, 0.3)), 1.0)
    late = v.times >= 1.25 - 1e-12
    np.testing.assert_allclose(out.values[late], 0.3)
    assert np.all(np.isnan(out.values[~late]))


def test_outflow_speed_ratio():
    # cars enter at speed 0.5 and leave at speed 1.0
    v = Signal(0.0, 1.0, [0.5, 0.5, 1.0, 1.0])
    out = analytic_outflow(v, Signal(0.0, 1.0, [0.3] * 4), 1.0, times=[2.0, 2.5, 3.0])
    np.testing.assert_allclose(out.values, [0.6, 0.6, 0.3])


def test_outflow_initial_and_capacity():
    v = Signal(0.0, 0.5, np.full(10, 0.6))
    out = analytic_outflow(v, Signal(0.0, 0.5, np.full(10, 0.5)), 1.0, rho0=0.4, rho_cr=0.5)
    np.testing.assert_allclose(out.values[v.times < 1 / 0.6], 0.24)
    np.testing.assert_allclose(out.values[v.times >= 2.0], 0.3)
    capped = effective_inflow(v, Signal(0.0, 0.5, np.full(10, 0.5)), 0.5)
    np.testing.assert_allclose(capped.values, 0.3)


def test_outflow_matches_solver_under_feedback(test1):
    ip = test1.simulate_feedback()
    v = ip.control
    exact = analytic_outflow(v, test1.inflow, 1.0, rho0=0.4, rho_cr=0.5)
    gap = np.abs(exact.values - ip.outflow.values)
    # first-order scheme: integrated gap of order dx times the total variation of the data
    assert np.sum(gap) * test1.dt < 0.5
    assert np.median(gap) < 0.02
