"""Compressible subsolutions built from a regularized incompressible one."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy import optimize

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import Infeasible
from .linalg import sym_eigvals
from .regularize import RegularizationResult
from .spectral import (
    Field,
    GridSpec,
    div_array,
    div_tensor_array,
    grad_array,
    identity_tensor,
    inv_laplacian_array,
    norm,
    save_field,
    scalar,
    spatial_mean,
    tensor,
    time_derivative_array,
    time_stencils,
    vector,
)


def _mean_map(p: np.ndarray, K: float, delta: float, gamma: float) -> float:
    return float(np.mean((delta**2 * p + K) ** (1.0 / gamma)))


def solve_K_star(pi_slice: np.ndarray, delta: float, gamma: float, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """K with mean((delta^2 pi + K)^(1/gamma)) = 1 on one time slice.

    The map K -> mean(...) is strictly increasing. A bracketed root find is
    followed by Newton polishing so the mean condition holds to ``tol.k_star``.
    """
    if gamma <= 1:
        raise ValueError("gamma must exceed 1")
    p = np.asarray(pi_slice, dtype=float)
    d2 = delta**2
    pmin = float(p.min())
    lo = -d2 * pmin
    hi = 1.0 - d2 * pmin
    f = lambda K: _mean_map(p, K, delta, gamma) - 1.0
    if f(lo) >= 0:
        raise Infeasible(f"delta={delta} too large: no K keeps delta^2 pi + K > 0 with unit mean")
    if abs(f(hi)) == 0:
        return hi
    K = optimize.brentq(f, lo, hi, xtol=1e-15, rtol=4 * np.finfo(float).eps, maxiter=200)
    # Newton polish to roundoff; the time derivatives of rho amplify any mean error
    best, best_r = K, abs(f(K))
    for _ in range(4):
        base = d2 * p + K
        if base.min() <= 0 or best_r == 0:
            break
        K = K - f(K) / float(np.mean(base ** (1.0 / gamma - 1.0)) / gamma)
        r = abs(f(K))
        if r >= best_r:
            break
        best, best_r = K, r
    if best_r > tol.k_star:
        raise Infeasible(f"mean condition only met to {best_r:.2e}")
    return float(best)


def build_density(pi_eps: Field, delta: float, gamma: float, tol: Tolerances = DEFAULT_TOLERANCES) -> tuple[Field, np.ndarray]:
    """rho = (delta^2 pi + K_*(t))^(1/gamma) with K_* fixed slice by slice."""
    p = pi_eps.values
    K = np.array([solve_K_star(p[j], delta, gamma, tol) for j in range(pi_eps.grid.nt)])
    shape = (-1,) + (1,) * pi_eps.grid.n
    base = delta**2 * p + K.reshape(shape)
    return scalar(pi_eps.grid, base ** (1.0 / gamma), "rho"), K


def varrho(pi_eps: Field, K: np.ndarray, delta: float, gamma: float) -> np.ndarray:
    """((delta^2 pi + K)^(1/gamma) - 1) / delta^2, the density fluctuation."""
    shape = (-1,) + (1,) * pi_eps.grid.n
    return ((delta**2 * pi_eps.values + K.reshape(shape)) ** (1.0 / gamma) - 1.0) / delta**2


def _centered_time_derivative(rho: Field, order: int, tol: Tolerances) -> np.ndarray:
    """d_t^order rho with its spatial mean removed when that mean is explainable by roundoff.

    The continuum mean vanishes because <rho> = 1 on every slice. On the grid the
    FD stencil turns the per-slice mean error e of rho into a mean of at most
    sum|c| e / dt^order; means within that budget are removed, larger ones are
    genuine and raise MeanNotZero, as does any density whose mean is off by more
    than the K_* tolerance allows.
    """
    g = rho.grid
    d = time_derivative_array(rho.values, g, order, tol.fd_order)
    mean = spatial_mean(d, g.n)
    err = float(np.abs(spatial_mean(rho.values, g.n) - 1).max()) + 8 * np.finfo(float).eps
    stencil = max(np.abs(w).sum() for _, w in time_stencils(g.nt, order, tol.fd_order))
    budget = stencil * err / g.dt**order + tol.mean_abs
    if err <= 100 * tol.k_star and np.abs(mean).max() <= budget:
        d = d - mean.reshape((-1,) + (1,) * g.n)
    return d


def build_momentum_corrector(rho: Field, tol: Tolerances = DEFAULT_TOLERANCES) -> Field:
    """m = grad (-Lap)^-1 d_t rho, so that d_t rho + div m = 0."""
    g = rho.grid
    drho = _centered_time_derivative(rho, 1, tol)
    return vector(g, grad_array(inv_laplacian_array(drho, g, tol), g), "m")


def build_R_tilde(u_eps: Field, m: Field, rho: Field, epsilon: float, tol: Tolerances = DEFAULT_TOLERANCES) -> Field:
    g = rho.grid
    n = g.n
    d2rho = _centered_time_derivative(rho, 2, tol)
    q = inv_laplacian_array(d2rho, g, tol)
    eye = identity_tensor(n, (g.nt,) + g.spatial_shape)
    w = u_eps.values + m.values
    u = u_eps.values
    R = -q * eye - w[:, None] * w[None, :] / rho.values + u[:, None] * u[None, :] + epsilon / 8 * eye
    return tensor(g, R, "R_tilde")


@dataclass(frozen=True)
class LiftResult:
    delta: float
    gamma: float
    epsilon: float
    K_star: np.ndarray
    rho: Field
    m: Field
    v: Field
    V: Field
    R_tilde: Field
    u_eps: Field
    pi_eps: Field
    R_eps: Field
    report: dict = field(default_factory=dict)

    @property
    def grid(self) -> GridSpec:
        return self.rho.grid

    @property
    def R0(self) -> Field:
        return self.R_eps + self.R_tilde

    def to_report(self) -> dict:
        res = subsolution_residual(self)
        out = {
            "epsilon": self.epsilon,
            "delta": self.delta,
            "gamma": self.gamma,
            "K_star_min": float(self.K_star.min()),
            "K_star_max": float(self.K_star.max()),
            "rho_mean_err": float(np.abs(spatial_mean(self.rho.values, self.grid.n) - 1).max()),
            "rho_min": float(self.rho.values.min()),
            "lambda_min_R0": float(sym_eigvals(self.R0.values)[0].min()),
            **res,
            **bound_check_2_6(self),
        }
        return out

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        for name in ("rho", "m", "v", "V", "R_tilde"):
            save_field(getattr(self, name), d / f"{name}.bin")
        (d / "lift.json").write_text(json.dumps(self.to_report(), indent=2, sort_keys=True))


def lift(reg: RegularizationResult, delta: float, gamma: float = 1.4, tol: Tolerances = DEFAULT_TOLERANCES) -> LiftResult:
    """Assemble (rho_delta, v_delta, R_tilde) for one (epsilon, delta, gamma)."""
    if delta <= 0:
        raise ValueError("delta must be positive")
    rho, K = build_density(reg.pi_eps, delta, gamma, tol)
    m = build_momentum_corrector(rho, tol)
    V = reg.u_eps + m
    v = V.like(V.values / rho.values, "v")
    Rt = build_R_tilde(reg.u_eps, m, rho, reg.epsilon, tol)
    return LiftResult(delta, gamma, reg.epsilon, K, rho, m, v, V.like(V.values, "V"), Rt, reg.u_eps, reg.pi_eps, reg.R_eps)


def subsolution_residual(L: LiftResult, tol: Tolerances = DEFAULT_TOLERANCES) -> dict:
    """Strong-form residuals of the mass and momentum equations.

    The pressure gradient uses grad(rho^gamma)/delta^2 = grad pi_eps, exact by
    construction of rho, instead of the cancellation-prone direct formula.
    """
    g = L.grid
    rho = L.rho.values
    V = L.V.values
    mass = time_derivative_array(rho, g, 1, tol.fd_order) + div_array(V, g)
    flux = V[:, None] * V[None, :] / rho + L.R0.values
    mom = time_derivative_array(V, g, 1, tol.fd_order) + div_tensor_array(flux, g) + grad_array(L.pi_eps.values, g)
    return {"mass_res": float(np.abs(mass).max()), "momentum_res": float(np.abs(mom).max())}


def bound_check_2_6(L: LiftResult) -> dict:
    """||rho - 1||_C0 + ||rho v - u_eps||_L2 + ||R_tilde||_Linf against epsilon."""
    g = L.grid
    c0 = norm(L.rho - 1.0, "C0")
    l2 = norm(L.V - L.u_eps, "L2")
    linf = norm(L.R_tilde, "Linf")
    eye = identity_tensor(g.n, (g.nt,) + g.spatial_shape)
    rem = norm(L.R_tilde - L.epsilon / 8 * eye, "Linf")
    total = c0 + l2 + linf
    return {
        "rho_c0": c0,
        "momentum_l2": l2,
        "m_l2": norm(L.m, "L2"),
        "m_linf": norm(L.m, "Linf"),
        "R_tilde_linf": linf,
        "R_tilde_remainder_linf": rem,
        "K_star_dev": float(np.abs(L.K_star - 1).max()),
        "sum": total,
        "pass": bool(total <= L.epsilon),
    }


def positive(L: LiftResult) -> bool:
    """lambda_min(R_eps + R_tilde) > 0 and rho > 0 everywhere."""
    return bool(L.rho.values.min() > 0 and sym_eigvals(L.R0.values)[0].min() > 0)


def delta0_threshold(reg: RegularizationResult, deltas, gamma: float = 1.4, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Largest sweep delta below which every sweep delta gives a positive lift.

    Scans deltas in increasing order and stops at the first failure; returns 0.0
    when even the smallest fails.
    """
    best = 0.0
    for d in sorted(deltas):
        try:
            ok = positive(lift(reg, d, gamma, tol))
        except Infeasible:
            ok = False
        if not ok:
            break
        best = d
    return best
