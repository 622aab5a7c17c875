import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from vsltrack.model import (DensityField, DomainError, FluxParams, Signal, abs_sin_fn, demand, flux,
                            preset_signal, projection, sin_capped_fn, supply, total_variation)

P = FluxParams()
rho_st = st.floats(0.0, 1.0)
v_st = st.floats(0.5, 1.0)


@pytest.mark.parametrize("rho, v, expected", [(0.4, 1.0, 0.4), (1.0, 0.7, 0.0), (0.75, 1.0, 0.25),
                                              (0.5, 0.8, 0.4), (0.0, 0.6, 0.0)])
def test_flux_examples(rho, v, expected):
    assert flux(rho, v, P) == pytest.approx(expected, abs=1e-15)


def test_flux_broadcasts():
    out = flux(np.array([0.2, 0.5, 0.9]), 1.0, P)
    np.testing.assert_allclose(out, [0.2, 0.5, 0.1])


@pytest.mark.parametrize("rho, v", [(-0.1, 1.0), (1.2, 1.0), (0.3, 1.5), (0.3, 0.2), (np.nan, 1.0)])
def test_flux_domain(rho, v):
    with pytest.raises(DomainError):
        flux(rho, v, P)


@given(rho_st, rho_st, v_st)
def test_flux_unimodal(a, b, v):
    lo, hi = min(a, b), max(a, b)
    if hi <= P.rho_cr:
        assert flux(lo, v, P) <= flux(hi, v, P) + 1e-15
    if lo >= P.rho_cr:
        assert flux(lo, v, P) >= flux(hi, v, P) - 1e-15


@given(rho_st, v_st, v_st)
def test_flux_increasing_in_speed(rho, v1, v2):
    lo, hi = min(v1, v2), max(v1, v2)
    assert flux(rho, lo, P) <= flux(rho, hi, P) + 1e-15


@given(rho_st, v_st)
def test_flux_is_min_of_demand_and_supply(rho, v):
    assert flux(rho, v, P) == pytest.approx(min(demand(rho, v, P), supply(rho, v, P)), abs=1e-15)


@given(rho_st, rho_st, v_st)
def test_flux_piecewise_linear(a, b, v):
    # midpoint rule is exact on either branch
    if (a <= P.rho_cr) == (b <= P.rho_cr):
        mid = flux(0.5 * (a + b), v, P)
        assert mid == pytest.approx(0.5 * (flux(a, v, P) + flux(b, v, P)), abs=1e-14)


@pytest.mark.parametrize("kw", [dict(rho_cr=0.0), dict(rho_cr=1.0), dict(v_min=0.0),
                                dict(v_min=1.2), dict(road_length=0.0)])
def test_params_validated(kw):
    with pytest.raises(DomainError):
        FluxParams(**kw)


@pytest.mark.parametrize("vals, expected", [([0.5, 0.5, 0.5], 0.0), ([1.0, 0.5, 1.0], 1.0),
                                            ([0.7], 0.0), ([0.5, 1.0, 0.75, 0.75], 0.75)])
def test_total_variation_examples(vals, expected):
    assert total_variation(vals) == pytest.approx(expected)
    assert total_variation(Signal(0.0, 0.1, vals)) == pytest.approx(expected)


@given(st.lists(st.floats(0.5, 1.0), min_size=1, max_size=30), st.integers(1, 5))
def test_total_variation_refinement_invariant(vals, k):
    assert total_variation(np.repeat(vals, k)) == pytest.approx(total_variation(vals), abs=1e-12)


@pytest.mark.parametrize("x, expected", [(1.5, 1.0), (0.75, 0.75), (0.25, 0.5)])
def test_projection_examples(x, expected):
    assert projection(x, 0.5, 1.0) == expected


@given(st.floats(-10, 10), st.floats(-5, 5), st.floats(0, 5))
def test_projection_idempotent(x, a, width):
    b = a + width
    once = projection(x, a, b)
    assert projection(once, a, b) == once
    assert a <= once <= b


def test_projection_empty_interval():
    with pytest.raises(DomainError):
        projection(0.7, 1.0, 0.5)


class TestSignal:
    def test_right_continuous_and_left_limit(self):
        s = Signal(0.0, 0.5, [1.0, 2.0, 3.0])
        assert s.at(0.5) == 2.0
        assert s.left_limit(0.5) == 1.0
        assert s.at(0.49) == 1.0
        assert s.left_limit(0.75) == 2.0
        assert s.at(10.0) == 3.0 and s.at(-1.0) == 1.0

    def test_grid_roundoff(self):
        # 0.1*3 is 0.30000000000000004; must still land on interval 3
        s = Signal(0.0, 0.1, np.arange(10.0))
        assert s.at(0.1 * 3) == 3.0
        assert s.left_limit(0.1 * 3) == 2.0

    def test_immutable(self):
        s = Signal(0.0, 1.0, [1.0, 2.0])
        with pytest.raises(ValueError):
            s.values[0] = 5.0

    def test_equality_and_grid(self):
        a = Signal(0.0, 0.1, [1.0, 2.0])
        assert a == Signal(0.0, 0.1, np.array([1.0, 2.0]))
        assert a != Signal(0.0, 0.1, [1.0, 2.5])
        assert a.same_grid(a.with_values([0.0, 0.0]))
        assert not a.same_grid(Signal(0.0, 0.2, [1.0, 2.0]))

    def test_resample_and_integral(self):
        s = Signal(0.0, 1.0, [1.0, 3.0])
        r = s.resample(0.25, 8)
        np.testing.assert_array_equal(r.values, [1, 1, 1, 1, 3, 3, 3, 3])
        assert r.integral() == pytest.approx(s.integral()) == pytest.approx(4.0)

    @pytest.mark.parametrize("kw", [dict(values=[]), dict(values=[[1.0]]), dict(values=[1.0], dt=0.0)])
    def test_invalid(self, kw):
        args = dict(t0=0.0, dt=0.1) | kw
        with pytest.raises(DomainError):
            Signal(**args)

    def test_csv_roundtrip(self, tmp_path):
        s = Signal(0.0, 0.005, np.random.default_rng(0).random(50))
        s.to_csv(tmp_path / "s.csv")
        back = Signal.from_csv(tmp_path / "s.csv")
        assert back.same_grid(s)
        np.testing.assert_array_equal(back.values, s.values)
        assert (tmp_path / "s.csv").read_text().startswith("t,value")

    def test_csv_rejects_nonuniform(self, tmp_path):
        (tmp_path / "bad.csv").write_text("t,value\n0,1\n0.1,2\n0.3,3\n")
        with pytest.raises(DomainError, match="uniform"):
            Signal.from_csv(tmp_path / "bad.csv")

    def test_csv_rejects_garbage(self, tmp_path):
        (tmp_path / "bad.csv").write_text("t,value\n0,1\n0.1,abc\n")
        with pytest.raises(DomainError, match="malformed"):
            Signal.from_csv(tmp_path / "bad.csv")


def test_density_field():
    f = DensityField.constant(0.4, 100)
    assert f.dx == pytest.approx(0.01)
    assert f.mass() == pytest.approx(0.4)
    f.validate(P, free_flow=True)
    with pytest.raises(DomainError):
        DensityField(0.1, [0.2, 0.7]).validate(P, free_flow=True)
    with pytest.raises(DomainError):
        DensityField(0.1, [0.2, 1.7]).validate(P)


def test_presets():
    t = np.array([0.0, 0.25, 0.75])
    np.testing.assert_allclose(sin_capped_fn()(t), [0.3, 0.5, 0.0], atol=1e-15)
    np.testing.assert_allclose(abs_sin_fn()(np.array([0.0])), [0.4 * np.sin(0.3)])
    s = preset_signal("constant", 0.1, 5, value=0.3)
    np.testing.assert_array_equal(s.values, 0.3)
    with pytest.raises(DomainError, match="unknown"):
        preset_signal("sawtooth", 0.1, 5)
    with pytest.raises(DomainError, match="bad parameters"):
        preset_signal("constant", 0.1, 5, slope=2.0)
