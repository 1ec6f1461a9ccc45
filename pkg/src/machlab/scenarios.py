"""Incompressible Euler solutions: analytic catalog, file ingestion, pressure recovery."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import DimensionMismatch, UnknownScenario
from .spectral import (
    Field,
    GridSpec,
    div_array,
    div_tensor_array,
    inv_laplacian_array,
    load_field,
    scalar,
    vector,
)
from .weakform import default_profiles, weak_defects


@dataclass(frozen=True)
class Scenario:
    """An incompressible velocity ``u`` with pressure ``pi`` on [0, T] x T^n."""

    name: str
    u: Field
    pi: Field
    provenance: str = "analytic"
    params: dict = field(default_factory=dict)
    pressure_recovered: bool = False
    tolerance: float = 1e-8

    @property
    def grid(self) -> GridSpec:
        return self.u.grid

    @property
    def u0(self) -> np.ndarray:
        """Initial velocity slice, shape (n, *spatial)."""
        return self.u.values[:, 0]


def _taylor_green(x, p):
    x1, x2 = x
    u = np.stack([np.sin(x1) * np.cos(x2), -np.cos(x1) * np.sin(x2)])
    pi = (np.cos(2 * x1) + np.cos(2 * x2)) / 4
    return u, pi


def _shear(x, p):
    # f(x2) = sum_j a_j cos(j x2) + b_j sin(j x2)
    modes = p.get("modes", [[1, 1.0, 0.0]])
    f = np.zeros_like(x[1])
    for j, a, b in modes:
        f = f + a * np.cos(j * x[1]) + b * np.sin(j * x[1])
    return np.stack([f, np.zeros_like(f)]), np.zeros_like(f)


def _beltrami(x, p):
    A, B, C = p.get("abc", (1.0, 1.0, 1.0))
    x1, x2, x3 = x
    u = np.stack([
        A * np.sin(x3) + C * np.cos(x2),
        B * np.sin(x1) + A * np.cos(x3),
        C * np.sin(x2) + B * np.cos(x1),
    ])
    half = 0.5 * (u**2).sum(axis=0)
    return u, -(half - 0.5 * (A**2 + B**2 + C**2))


def _zero(x, p):
    return np.zeros((len(x),) + x[0].shape), np.zeros_like(x[0])


CATALOG = {
    "taylor_green_2d": (2, _taylor_green),
    "shear_2d": (2, _shear),
    "beltrami_3d": (3, _beltrami),
    "zero_2d": (2, _zero),
    "zero_3d": (3, _zero),
}


def list_scenarios() -> list[str]:
    return sorted(CATALOG)


def make_analytic(name: str, grid: GridSpec, params: dict | None = None) -> Scenario:
    """Sample a catalog solution on ``grid``.

    Parameters
    ----------
    params : dict, optional
        ``amplitude`` scales the velocity (pressure scales by its square);
        ``drift`` is a constant velocity c giving the Galilean-boosted solution
        ``c + w(x - c t)``, which is unsteady; ``modes`` and ``abc`` configure
        the shear profile and the Beltrami coefficients.
    """
    if name not in CATALOG:
        raise UnknownScenario(name)
    n, builder = CATALOG[name]
    if grid.n != n:
        raise DimensionMismatch(f"{name} needs n={n}, grid has n={grid.n}")
    params = dict(params or {})
    amp = float(params.get("amplitude", 1.0))
    drift = np.asarray(params.get("drift", np.zeros(n)), dtype=float)
    if drift.shape != (n,):
        raise DimensionMismatch("drift must have n components")
    us, pis = [], []
    for t in grid.times:
        shifted = tuple(xi - ci * t for xi, ci in zip(grid.coords, drift))
        w, p = builder(shifted, params)
        us.append(amp * w + drift.reshape((n,) + (1,) * n))
        pis.append(amp**2 * p)
    u = np.stack(us, axis=1)
    pi = np.stack(pis, axis=0)
    return Scenario(name, vector(grid, u, "u"), scalar(grid, pi, "pi"), "analytic", params)


def pressure_source(u: np.ndarray, grid: GridSpec) -> np.ndarray:
    """div div (u x u) as an array."""
    uu = u[:, None] * u[None, :]
    return div_array(div_tensor_array(uu, grid), grid)


def recover_pressure(u: Field, tol: Tolerances = DEFAULT_TOLERANCES) -> Field:
    """Mean-zero pi with -Lap pi = div div(u x u)."""
    src = pressure_source(u.values, u.grid)
    return scalar(u.grid, inv_laplacian_array(src, u.grid, tol), "pi")


def from_fields(name: str, u: Field, pi: Field | None = None, tolerance: float = 1e-8) -> Scenario:
    recovered = pi is None
    if recovered:
        pi = recover_pressure(u)
    return Scenario(name, u, pi, "file", {}, recovered, tolerance)


def load_scenario(u_path, pi_path=None, name: str | None = None, tolerance: float = 1e-8) -> Scenario:
    u = load_field(u_path)
    if u.kind != "vector":
        raise DimensionMismatch("velocity file must hold a vector field")
    pi = load_field(pi_path) if pi_path is not None else None
    if pi is not None and pi.grid != u.grid:
        raise DimensionMismatch("pressure and velocity grids differ")
    return from_fields(name or u.name or "file", u, pi, tolerance)


def incompressible_residual(s: Scenario, test_modes: int = 4, profiles=None) -> float:
    """Largest weak-form defect over divergence-free trigonometric test fields.

    Each test field is ``chi(t) a cos(k.x)`` or ``chi(t) a sin(k.x)`` with
    ``|k|_inf <= test_modes``, ``a`` orthogonal to ``k`` and ``chi`` a flat-start
    profile vanishing before T; the initial-data term is included.
    """
    grid = s.grid
    u = s.u.values
    profiles = profiles or default_profiles(grid.T, 1)
    F = u[:, None] * u[None, :]
    d = weak_defects(u, F, grid, test_modes, profiles, solenoidal=True)
    return float(d.max()) if d.size else 0.0


def divergence_max(s: Scenario) -> float:
    return float(np.abs(div_array(s.u.values, s.grid)).max())
