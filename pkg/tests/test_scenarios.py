import numpy as np
import pytest

from machlab.errors import DimensionMismatch, UnknownScenario
from machlab.scenarios import (
    divergence_max,
    from_fields,
    incompressible_residual,
    list_scenarios,
    load_scenario,
    make_analytic,
    pressure_source,
    recover_pressure,
)
from machlab.spectral import (
    GridSpec,
    constant,
    div_array,
    div_tensor_array,
    grad_array,
    inv_laplacian_array,
    save_field,
    vector,
)
from machlab.weakform import TimeProfile, default_profiles, directions, lattice


@pytest.fixture(scope="module")
def grid64():
    return GridSpec(modes_per_axis=64, T=1.0, time_steps=32)


class TestCatalog:
    def test_listing(self):
        assert {"taylor_green_2d", "shear_2d", "beltrami_3d"} <= set(list_scenarios())

    def test_unknown(self, grid64):
        with pytest.raises(UnknownScenario):
            make_analytic("kolmogorov", grid64)

    def test_dimension(self, grid64):
        with pytest.raises(DimensionMismatch):
            make_analytic("beltrami_3d", grid64)

    def test_taylor_green_residual(self, grid64):
        s = make_analytic("taylor_green_2d", grid64)
        assert incompressible_residual(s, 4) < 1e-8
        assert divergence_max(s) < 1e-10

    def test_shear_divergence_free(self, grid64):
        s = make_analytic("shear_2d", grid64, {"modes": [[1, 1.0, 0.0]]})
        assert divergence_max(s) == pytest.approx(0.0, abs=1e-14)
        assert np.allclose(s.u.values[0, 0], np.cos(grid64.coords[1]))

    @pytest.mark.parametrize("name", ["taylor_green_2d", "shear_2d"])
    def test_drifting_solution_is_weak_solution(self, name, grid64):
        s = make_analytic(name, grid64, {"drift": [0.4, -0.2], "amplitude": 0.5})
        assert divergence_max(s) < 1e-10
        assert incompressible_residual(s, 4) < 1e-7

    def test_beltrami_pointwise(self):
        g = GridSpec(n=3, modes_per_axis=32, T=1.0, time_steps=4)
        s = make_analytic("beltrami_3d", g)
        u = s.u.values
        G = np.stack([grad_array(u[i], g) for i in range(3)])
        adv = np.einsum("jt...,ijt...->it...", u, G)
        assert np.abs(adv + grad_array(s.pi.values, g)).max() < 1e-8
        assert abs(s.pi.values.mean()) < 1e-12

    def test_zero_field_residual(self, grid64):
        s = make_analytic("zero_2d", grid64)
        assert incompressible_residual(s, 4) == 0.0


class TestPressure:
    def test_taylor_green_closed_form(self, grid64):
        s = make_analytic("taylor_green_2d", grid64)
        x1, x2 = grid64.coords
        pi = recover_pressure(s.u).values
        ref = (np.cos(2 * x1) + np.cos(2 * x2)) / 4
        assert np.abs(pi - ref).max() < 1e-8

    def test_constant_velocity(self, grid64):
        u = constant(grid64, "vector", [0.3, -1.2])
        assert np.abs(recover_pressure(u).values).max() < 1e-12

    def test_shear(self, grid64):
        s = make_analytic("shear_2d", grid64, {"modes": [[1, 1.0, 0.0], [3, 0.0, 0.4]]})
        assert np.abs(recover_pressure(s.u).values).max() < 1e-10

    def test_constant_shift_of_trace_part(self, grid64):
        # div div (c Id) = 0, so a constant trace shift of u x u leaves pi unchanged
        s = make_analytic("taylor_green_2d", grid64)
        u = s.u.values
        src = pressure_source(u, grid64)
        shifted = u[:, None] * u[None, :] + 2.5 * np.eye(2)[:, :, None, None, None]
        src2 = div_array(div_tensor_array(shifted, grid64), grid64)
        a = inv_laplacian_array(src, grid64)
        b = inv_laplacian_array(src2, grid64)
        assert np.abs(a - b).max() < 1e-12


class TestWeakResidual:
    def test_planted_defect(self, grid64):
        s = make_analytic("taylor_green_2d", grid64)
        u = s.u.values.copy()
        u[1] += 1e-3 * np.sin(grid64.coords[0])
        bad = from_fields("planted", vector(grid64, u), s.pi)
        assert incompressible_residual(bad, 4) > 1e-4

    def test_unsteady_nonsolution_detected(self, grid64):
        # u = t * v with v steady div-free is not a solution: d_t u = v
        s = make_analytic("shear_2d", grid64)
        u = grid64.times[None, :, None, None] * s.u.values
        bad = from_fields("ramp", vector(grid64, u), s.pi)
        assert incompressible_residual(bad, 2) > 1e-2

    def test_lattice_half(self):
        ks = lattice(2, 2)
        assert (0, 0) in ks
        assert all(tuple(-np.array(k)) not in ks for k in ks if any(k))
        assert len(ks) == (25 - 1) // 2 + 1

    @pytest.mark.parametrize("k", [(1, 0), (2, -3), (1, 1, 1), (0, 2, -1)])
    def test_solenoidal_directions(self, k):
        dirs = directions(k, True)
        assert len(dirs) == len(k) - 1
        for a in dirs:
            assert abs(a @ np.asarray(k)) < 1e-12
            assert abs(np.linalg.norm(a) - 1) < 1e-12

    def test_profiles_compact_in_time(self):
        for p in default_profiles(2.0):
            assert p(0.0) == pytest.approx(1.0)
            assert p(1.999) == 0.0
            # derivative consistent with values
            t = np.linspace(0.05, 1.9, 50)
            h = 1e-6
            fd = (p(t + h) - p(t - h)) / (2 * h)
            assert np.abs(fd - p.deriv(t)).max() < 1e-5

    def test_profile_integral(self):
        from scipy import integrate
        p = TimeProfile(0.25, 0.75)
        val, _ = integrate.quad(lambda t: float(p.deriv(t)), 0, 1, points=[0.25, 0.75])
        assert val == pytest.approx(-1.0, abs=1e-10)


class TestFileIngest:
    def test_round_trip_with_recovery(self, tmp_path, grid64):
        s = make_analytic("taylor_green_2d", grid64)
        save_field(s.u, tmp_path / "u.bin")
        loaded = load_scenario(tmp_path / "u.bin", name="tg")
        assert loaded.pressure_recovered and loaded.provenance == "file"
        assert np.abs(loaded.pi.values - s.pi.values).max() < 1e-10

    def test_with_pressure(self, tmp_path, grid64):
        s = make_analytic("taylor_green_2d", grid64)
        save_field(s.u, tmp_path / "u.bin")
        save_field(s.pi, tmp_path / "p.bin")
        loaded = load_scenario(tmp_path / "u.bin", tmp_path / "p.bin")
        assert not loaded.pressure_recovered
        assert incompressible_residual(loaded) < 1e-8

    def test_rejects_scalar_velocity(self, tmp_path, grid64):
        s = make_analytic("taylor_green_2d", grid64)
        save_field(s.pi, tmp_path / "p.bin")
        with pytest.raises(DimensionMismatch):
            load_scenario(tmp_path / "p.bin")
