import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import two_type
from dualpop.model import GridDensity
from dualpop.oracles import LuoSolution
from dualpop.pde import StabilityError, integrate_density_pde, integrate_mean_ode, stable_dt


def bump(M=100):
    return GridDensity.from_function(lambda x: np.exp(-40 * (x - 0.4) ** 2), M=M)


class TestDensity:
    def test_all_zero_rates_unchanged(self):
        g0 = bump()
        g = integrate_density_pde(g0, two_type(), 2.0)
        assert np.array_equal(g.cells, g0.cells)

    def test_lambda_two_uniform_invariant(self):
        g = integrate_density_pde(GridDensity.uniform(400), two_type(s1=1.0, s2=2.0), 1.0)
        assert np.max(np.abs(g.cells - 1.0)) < 1e-6
        assert g.atom0 == pytest.approx(0.0, abs=1e-12) and g.atom1 == pytest.approx(0.0, abs=1e-12)

    def test_lambda_three_mean_limit(self):
        g = integrate_density_pde(GridDensity.uniform(200), two_type(s1=1.0, s2=3.0), 15.0)
        assert g.mean == pytest.approx(2 / 3, abs=1e-2)

    def test_matches_closed_form(self):
        sol = LuoSolution(0.5)
        g = integrate_density_pde(GridDensity.uniform(400), two_type(s1=1.0, s2=0.5), 1.0)
        ref = sol.cell_averages(1.0, 400)
        assert np.sum(np.abs(g.cells - ref)) / 400 < 1e-2

    def test_times_list(self):
        gs = integrate_density_pde(bump(), two_type(gamma1=1.0), 1.0, times=[0.0, 0.5, 1.0])
        assert len(gs) == 3 and np.array_equal(gs[0].cells, bump().cells)

    def test_stability_guard(self):
        p = two_type(gamma1=1.0)
        d = stable_dt(p, 100)
        with pytest.raises(StabilityError) as e:
            integrate_density_pde(bump(), p, 0.1, dt=2 * d)
        assert e.value.suggested_dt <= d
        integrate_density_pde(bump(), p, 0.01, dt=e.value.suggested_dt)

    def test_rejects_gamma2(self):
        with pytest.raises(ValueError):
            integrate_density_pde(bump(), two_type(gamma2=1.0), 0.1)

    def test_neutral_drift_fills_atoms(self):
        g = integrate_density_pde(bump(), two_type(gamma1=1.0), 5.0)
        assert g.atom0 > 0.3 and g.atom1 > 0.2
        # the mean is a martingale under pure drift
        assert g.mean == pytest.approx(bump().mean, abs=2e-3)

    def test_migration_contracts_to_mean(self):
        g0 = bump()
        g = integrate_density_pde(g0, two_type(c=1.0), 3.0)
        var0 = np.sum(g0.cells * (g0.centers - g0.mean) ** 2) / g0.M
        var = np.sum(g.cells * (g.centers - g.mean) ** 2) / g.M
        assert var < var0 * math.exp(-2 * 3.0) * 3
        assert g.mean == pytest.approx(g0.mean, abs=1e-3)


@settings(max_examples=12, deadline=None)
@given(st.floats(0, 2), st.floats(0, 2), st.floats(0, 2), st.floats(0, 2),
       st.floats(0, 0.5), st.floats(0, 0.5))
def test_mass_conservation(s1, s2, c, g1, m01, m10):
    p = two_type(s1=s1, s2=s2, c=c, gamma1=g1, m=[[0, m01], [m10, 0]])
    g0 = bump(M=60)
    t = 0.5
    g = integrate_density_pde(g0, p, t)
    assert abs(g.mass - 1.0) < 1e-8 * t


@settings(max_examples=12, deadline=None)
@given(st.floats(0, 2), st.floats(0, 3), st.floats(0, 2))
def test_nonnegative_without_drift_noise(s1, s2, c):
    g = integrate_density_pde(bump(M=60), two_type(s1=s1, s2=s2, c=c), 1.0)
    assert g.cells.min() >= -1e-14 and g.atom0 >= -1e-14 and g.atom1 >= -1e-14


class TestMeanODE:
    def test_closed_case_logistic(self):
        r = integrate_mean_ode("two_type", 0.5, {"s1": 1.0}, 10.0)
        exact = 0.5 * np.exp(-r.t) / (1 - 0.5 + 0.5 * np.exp(-r.t))
        assert np.max(np.abs(r.x - exact)) < 1e-8

    def test_closed_case_to_zero(self):
        r = integrate_mean_ode("two_type", 0.5, {"s1": 1.0}, 40.0)
        assert r.final < 1e-8

    @pytest.mark.parametrize("v, limit", [(3.0, 1.0), (5.0, 0.0)])
    def test_mutualism_limits(self, v, limit):
        r = integrate_mean_ode("mutualism", 0.5, {"v_M": v}, 100.0)
        assert abs(r.final - limit) < 1e-3

    def test_mutualism_unstable_point(self):
        r = integrate_mean_ode("mutualism", 0.5, {"v_M": 4.0}, 10.0)
        assert np.max(np.abs(r.x - 0.5)) < 1e-6
        assert r.limit == pytest.approx(0.5)

    def test_unknown_model(self):
        with pytest.raises(ValueError):
            integrate_mean_ode("logistic", 0.5, {}, 1.0)
