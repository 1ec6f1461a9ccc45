import numpy as np
import pytest
from scipy import optimize

from machlab.errors import Infeasible, MeanNotZero
from machlab.harness import fit_rate
from machlab.lift import (
    bound_check_2_6,
    build_density,
    build_momentum_corrector,
    build_R_tilde,
    delta0_threshold,
    lift,
    positive,
    solve_K_star,
    subsolution_residual,
    varrho,
)
from machlab.regularize import regularize
from machlab.scenarios import make_analytic
from machlab.spectral import GridSpec, constant, norm, oversample_array, scalar, spatial_mean

DRIFT = {"drift": [0.6, 0.3], "amplitude": 0.5}


@pytest.fixture(scope="module")
def reg_tg():
    g = GridSpec(modes_per_axis=32, T=1.0, time_steps=96)
    return regularize(make_analytic("taylor_green_2d", g, DRIFT), 0.1)


class TestKStar:
    def test_zero_pressure(self):
        assert solve_K_star(np.zeros((8, 8)), 0.1, 1.4) == pytest.approx(1.0, abs=1e-14)

    @pytest.mark.parametrize("c", [-2.0, 0.5, 3.0])
    def test_constant_pressure(self, c):
        K = solve_K_star(np.full((8, 8), c), 0.1, 1.4)
        assert K == pytest.approx(1 - 0.01 * c, abs=1e-13)

    def test_cosine_against_oversampled_root(self):
        x = np.linspace(0, 2 * np.pi, 32, endpoint=False)
        p = np.cos(x)[:, None] * np.ones(32)
        K = solve_K_star(p, 0.1, 1.4)
        fine = oversample_array(p, 2, 4)
        K_ref = optimize.brentq(lambda k: np.mean((0.01 * fine + k) ** (1 / 1.4)) - 1, 0.5, 1.5, xtol=1e-16)
        assert abs(K - K_ref) < 1e-10
        assert abs(np.mean((0.01 * p + K) ** (1 / 1.4)) - 1) < 1e-12

    def test_infeasible(self):
        p = np.zeros((8, 8))
        p[0, 0] = -1e4
        with pytest.raises(Infeasible):
            solve_K_star(p, 1.0, 1.4)

    def test_bad_gamma(self):
        with pytest.raises(ValueError):
            solve_K_star(np.zeros((4, 4)), 0.1, 1.0)


class TestDensity:
    def test_zero_pressure_unit_density(self):
        g = GridSpec(modes_per_axis=8, T=1.0, time_steps=8)
        rho, K = build_density(constant(g, "scalar", 0.0), 0.2, 1.4)
        assert np.allclose(rho.values, 1.0, atol=1e-14)
        assert np.allclose(K, 1.0)

    def test_unit_mean_and_two_formulas(self, reg_tg):
        rho, K = build_density(reg_tg.pi_eps, 0.05, 1.4)
        assert np.abs(spatial_mean(rho.values, 2) - 1).max() < 1e-10
        alt = 1 + 0.05**2 * varrho(reg_tg.pi_eps, K, 0.05, 1.4)
        assert np.abs(alt - rho.values).max() < 1e-12

    def test_c0_slope(self, reg_tg):
        deltas = [0.01, 0.02, 0.04, 0.08, 0.16]
        ys = [norm(build_density(reg_tg.pi_eps, d, 1.4)[0] - 1.0, "C0") for d in deltas]
        fit = fit_rate(deltas, ys)
        assert fit["slope"] >= 1 and fit["r2"] >= 0.98


class TestMomentumCorrector:
    def test_steady_density(self):
        g = GridSpec(modes_per_axis=16, T=1.0, time_steps=16)
        rho = scalar(g, np.broadcast_to(1 + 0.01 * np.cos(g.coords[0]), (17, 16, 16)).copy())
        assert np.abs(build_momentum_corrector(rho).values).max() < 1e-12

    def test_closed_form(self):
        g = GridSpec(modes_per_axis=32, T=1.0, time_steps=64)
        d = 0.1
        t = g.times[:, None, None]
        x1 = g.coords[0]
        rho = scalar(g, 1 + d**2 * np.sin(t) * np.cos(x1))
        m = build_momentum_corrector(rho).values
        # the mass equation forces the minus sign
        assert np.abs(m[0] + d**2 * np.cos(t) * np.sin(x1)).max() < 1e-8
        assert np.abs(m[1]).max() < 1e-14

    def test_mean_not_zero(self):
        g = GridSpec(modes_per_axis=8, T=1.0, time_steps=8)
        rho = scalar(g, np.broadcast_to((1 + g.times)[:, None, None], (9, 8, 8)).copy())
        with pytest.raises(MeanNotZero):
            build_momentum_corrector(rho)


class TestRTilde:
    def test_trivial(self):
        g = GridSpec(modes_per_axis=8, T=1.0, time_steps=8)
        R = build_R_tilde(constant(g, "vector", [0.0, 0.0]), constant(g, "vector", [0.0, 0.0]),
                          constant(g, "scalar", 1.0), 0.4)
        assert np.allclose(R.values, 0.05 * np.eye(2)[:, :, None, None, None], atol=1e-15)

    def test_remainder_slope(self, reg_tg):
        deltas = [0.01, 0.02, 0.04, 0.08, 0.16]
        rems = [bound_check_2_6(lift(reg_tg, d))["R_tilde_remainder_linf"] for d in deltas]
        fit = fit_rate(deltas, rems)
        assert fit["slope"] >= 1 and fit["r2"] >= 0.98

    def test_positivity_threshold(self, reg_tg):
        d0 = delta0_threshold(reg_tg, [0.01, 0.02, 0.04])
        assert d0 == 0.04
        assert positive(lift(reg_tg, 0.02))


class TestResiduals:
    def test_mass_equation(self, reg_tg):
        L = lift(reg_tg, 0.04)
        r = subsolution_residual(L)
        assert r["mass_res"] < 1e-10
        assert np.abs(L.rho.values * L.v.values - L.u_eps.values - L.m.values).max() < 1e-12

    def test_trivial_lift(self):
        g = GridSpec(modes_per_axis=16, T=1.0, time_steps=40)
        reg = regularize(make_analytic("zero_2d", g), 0.2)
        r = subsolution_residual(lift(reg, 0.1))
        assert r["mass_res"] < 1e-14 and r["momentum_res"] < 1e-14

    def test_momentum_convergence(self):
        res = []
        for steps in (96, 192):
            g = GridSpec(modes_per_axis=32, T=1.0, time_steps=steps)
            reg = regularize(make_analytic("taylor_green_2d", g, DRIFT), 0.1)
            res.append(subsolution_residual(lift(reg, 0.04))["momentum_res"])
        assert res[0] < 1e-4
        assert res[0] / res[1] >= 8


class TestBound26:
    def test_momentum_term_equals_m(self, reg_tg):
        rep = bound_check_2_6(lift(reg_tg, 0.04))
        assert rep["momentum_l2"] == pytest.approx(rep["m_l2"], rel=1e-12)

    def test_pass_below_threshold(self, reg_tg):
        assert all(bound_check_2_6(lift(reg_tg, d))["pass"] for d in (0.01, 0.02, 0.04))

    def test_zero_velocity_closed_form(self):
        g = GridSpec(modes_per_axis=16, T=1.0, time_steps=40)
        reg = regularize(make_analytic("zero_2d", g), 0.2)
        rep = bound_check_2_6(lift(reg, 0.1))
        assert rep["sum"] == pytest.approx(0.2 / 8, abs=1e-14)
        assert rep["pass"]

    def test_m_slope(self, reg_tg):
        deltas = [0.01, 0.02, 0.04, 0.08, 0.16]
        ms = [bound_check_2_6(lift(reg_tg, d))["m_linf"] for d in deltas]
        assert fit_rate(deltas, ms)["slope"] >= 1
