"""Defect matrix algebra, admissibility checks and energy bookkeeping.

Array kernels take component-first arrays ``(n, *points)`` / ``(n, n, *points)``
so they apply equally to full space-time grids and to fuzz samples.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .errors import DimensionMismatch, NonpositiveDensity, PreconditionViolated
from .linalg import sym_eigvals
from .spectral import GridSpec, div_array, div_tensor_array, time_derivative_array

L2_COEFF = 1 / 8
ENERGY_CONSTANT = 4 / 3


# ---------------------------------------------------------------------------
# pointwise kernels
# ---------------------------------------------------------------------------

def _eye(n: int, ndim: int) -> np.ndarray:
    return np.eye(n).reshape((n, n) + (1,) * ndim)


def _check_rho(rho: np.ndarray) -> None:
    if not np.all(rho > 0):
        raise NonpositiveDensity(f"density minimum {np.min(rho):.3e} is not positive")


def compute_U0_array(rho: np.ndarray, V: np.ndarray) -> np.ndarray:
    """V x V / rho - |V|^2 / (n rho) Id, traceless by construction."""
    _check_rho(rho)
    n = V.shape[0]
    outer = V[:, None] * V[None, :] / rho
    U = outer - (V**2).sum(axis=0) / (n * rho) * _eye(n, rho.ndim)
    # remove the roundoff trace so the traceless class is exact
    tr = np.trace(U, axis1=0, axis2=1)
    return U - tr / n * _eye(n, rho.ndim)


def compute_M_array(rho, V0, U0, R0, Vt, Ut) -> np.ndarray:
    """|V0|^2/(n rho) Id + R0 - (V0+Vt) x (V0+Vt)/rho + U0 + Ut."""
    _check_rho(rho)
    n = V0.shape[0]
    W = V0 + Vt
    return (
        (V0**2).sum(axis=0) / (n * rho) * _eye(n, rho.ndim)
        + R0
        - W[:, None] * W[None, :] / rho
        + U0
        + Ut
    )


def trace_rhs_array(rho, V0, R0, Vt) -> np.ndarray:
    """tr R0 - |Vt|^2/rho - 2 V0.Vt/rho."""
    return np.trace(R0, axis1=0, axis2=1) - (Vt**2).sum(axis=0) / rho - 2 * (V0 * Vt).sum(axis=0) / rho


# ---------------------------------------------------------------------------
# states and perturbations
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class TimeWindow:
    """Region P = [t_start, t_stop] (inclusive slice indices) x T^n."""

    start: int
    stop: int

    def slices(self) -> slice:
        return slice(self.start, self.stop + 1)

    def weights(self, grid: GridSpec) -> np.ndarray:
        m = self.stop - self.start + 1
        w = np.full(m, grid.dt)
        w[0] = w[-1] = grid.dt / 2
        return w

    def volume(self, grid: GridSpec) -> float:
        return (self.stop - self.start) * grid.dt * grid.torus_volume


@dataclass(frozen=True, eq=False)
class SubsolutionState:
    """(rho0, V0, U0, R0) on a space-time grid with working region P."""

    grid: GridSpec
    rho0: np.ndarray
    V0: np.ndarray
    U0: np.ndarray
    R0: np.ndarray
    P: TimeWindow
    Lambda: float = 1.0

    def __post_init__(self):
        g = self.grid
        pts = (g.nt,) + g.spatial_shape
        for name, arr, comp in (("rho0", self.rho0, ()), ("V0", self.V0, (g.n,)),
                                ("U0", self.U0, (g.n, g.n)), ("R0", self.R0, (g.n, g.n))):
            if arr.shape != comp + pts:
                raise DimensionMismatch(f"{name} has shape {arr.shape}, expected {comp + pts}")
        _check_rho(self.rho0)
        if not 0 <= self.P.start < self.P.stop <= g.nt - 1:
            raise ValueError(f"window {self.P} outside the time grid")

    def restrict(self, a: np.ndarray) -> np.ndarray:
        """Slices of ``a`` (component-first, then time) inside P."""
        ncomp = a.ndim - self.grid.n - 1
        return a[(slice(None),) * ncomp + (self.P.slices(),)]

    def integral(self, a: np.ndarray) -> float:
        """Integral over P of a full-grid scalar array."""
        g = self.grid
        part = self.restrict(a)
        per_t = part.reshape(part.shape[0], -1).sum(axis=1) * g.cell_volume
        return float(self.P.weights(g) @ per_t)

    @property
    def tr_R0_integral(self) -> float:
        return self.integral(np.trace(self.R0, axis1=0, axis2=1))

    @property
    def lambda_min_R0(self) -> float:
        return float(sym_eigvals(self.restrict(self.R0))[0].min())


def lambda_bound(rho: np.ndarray) -> float:
    """Smallest Lambda >= 1 with 1/Lambda^2 <= rho <= Lambda^2."""
    return float(max(1.0, np.sqrt(rho.max()), 1 / np.sqrt(rho.min())))


def make_state(grid: GridSpec, rho0, V0, R0, P: TimeWindow | None = None) -> SubsolutionState:
    rho0 = np.asarray(rho0, dtype=float)
    V0 = np.asarray(V0, dtype=float)
    R0 = np.asarray(R0, dtype=float)
    R0 = 0.5 * (R0 + np.swapaxes(R0, 0, 1))
    P = P or TimeWindow(0, grid.nt - 1)
    return SubsolutionState(grid, rho0, V0, compute_U0_array(rho0, V0), R0, P, lambda_bound(rho0))


def constant_state(grid: GridSpec, rho: float = 1.0, V=None, R=None, P: TimeWindow | None = None) -> SubsolutionState:
    n = grid.n
    pts = (grid.nt,) + grid.spatial_shape
    V = np.zeros(n) if V is None else np.asarray(V, dtype=float)
    R = np.eye(n) if R is None else np.asarray(R, dtype=float)
    return make_state(
        grid,
        np.full(pts, float(rho)),
        np.broadcast_to(V.reshape((n,) + (1,) * len(pts)), (n,) + pts).copy(),
        np.broadcast_to(R.reshape((n, n) + (1,) * len(pts)), (n, n) + pts).copy(),
        P,
    )


def state_from_lift(L, P: TimeWindow | None = None) -> SubsolutionState:
    """rho0 = rho_delta, V0 = rho_delta v_delta, R0 = R_eps + R_tilde."""
    return make_state(L.grid, L.rho.values, L.V.values, L.R0.values, P)


@dataclass(frozen=True, eq=False)
class PerturbationPair:
    V_tilde: np.ndarray
    U_tilde: np.ndarray
    support: tuple = ()
    flags: dict = field(default_factory=dict)
    residuals: dict = field(default_factory=dict)

    @classmethod
    def zero(cls, grid: GridSpec) -> "PerturbationPair":
        pts = (grid.nt,) + grid.spatial_shape
        return cls(np.zeros((grid.n,) + pts), np.zeros((grid.n, grid.n) + pts))

    def __add__(self, other: "PerturbationPair") -> "PerturbationPair":
        return PerturbationPair(self.V_tilde + other.V_tilde, self.U_tilde + other.U_tilde,
                                tuple(self.support) + tuple(other.support))

    def scaled(self, c: float) -> "PerturbationPair":
        return PerturbationPair(c * self.V_tilde, c * self.U_tilde, self.support)

    def __neg__(self) -> "PerturbationPair":
        return self.scaled(-1.0)

    def with_report(self, flags: dict, residuals: dict) -> "PerturbationPair":
        return replace(self, flags=dict(flags), residuals=dict(residuals))


@dataclass(frozen=True, eq=False)
class DefectField:
    M: np.ndarray
    lambda_min_field: np.ndarray
    lambda_star: float
    trace_integral: float


# ---------------------------------------------------------------------------
# operations
# ---------------------------------------------------------------------------

def compute_U0(rho0: np.ndarray, V0: np.ndarray) -> np.ndarray:
    return compute_U0_array(rho0, V0)


def compute_M(state: SubsolutionState, p: PerturbationPair) -> DefectField:
    """Defect matrix on P, its pointwise lambda_min, lambda_* and int tr M."""
    r = state.restrict
    M = compute_M_array(r(state.rho0), r(state.V0), r(state.U0), r(state.R0), r(p.V_tilde), r(p.U_tilde))
    lam = sym_eigvals(M)[0]
    lam_R = sym_eigvals(r(state.R0))[0]
    lam_star = float(min(lam.min(), lam_R.min()))
    g = state.grid
    tr = np.trace(M, axis1=0, axis2=1)
    per_t = tr.reshape(tr.shape[0], -1).sum(axis=1) * g.cell_volume
    return DefectField(M, lam, lam_star, float(state.P.weights(g) @ per_t))


def check_strict(state: SubsolutionState, p: PerturbationPair, tol: Tolerances = DEFAULT_TOLERANCES,
                 defect: DefectField | None = None) -> dict:
    d = defect or compute_M(state, p)
    mm = float(d.lambda_min_field.min())
    return {"ok": bool(mm > tol.margin_strict), "min_margin": mm, "lambda_star": d.lambda_star}


def l2_integrals(state: SubsolutionState, p: PerturbationPair) -> tuple[float, float]:
    """(int V0.Vt/rho0, int |Vt|^2/rho0) over P."""
    pair = state.integral((state.V0 * p.V_tilde).sum(axis=0) / state.rho0)
    energy = state.integral((p.V_tilde**2).sum(axis=0) / state.rho0)
    return pair, energy


def check_l2(state: SubsolutionState, p: PerturbationPair, tol: Tolerances = DEFAULT_TOLERANCES) -> dict:
    """|int V0.Vt/rho0| <= (1/8) int |Vt|^2/rho0 over P."""
    pair, energy = l2_integrals(state, p)
    lhs, rhs = abs(pair), L2_COEFF * energy
    return {"ok": bool(lhs <= rhs * (1 + tol.l2_rel)), "lhs": lhs, "rhs": rhs, "pairing": pair}


def trace_identity(state: SubsolutionState, p: PerturbationPair) -> float:
    """max |tr M - (tr R0 - |Vt|^2/rho0 - 2 V0.Vt/rho0)| over P."""
    d = compute_M(state, p)
    r = state.restrict
    rhs = trace_rhs_array(r(state.rho0), r(state.V0), r(state.R0), r(p.V_tilde))
    return float(np.abs(np.trace(d.M, axis1=0, axis2=1) - rhs).max())


def energy_ratio(state: SubsolutionState, p: PerturbationPair, tol: Tolerances = DEFAULT_TOLERANCES) -> dict:
    """int |Vt|^2/rho0 over int tr R0, with the 4/3 bound and its sharpened form.

    Raises
    ------
    PreconditionViolated
        If the L2 constraint fails.
    """
    l2 = check_l2(state, p, tol)
    if not l2["ok"]:
        raise PreconditionViolated("energy bound needs the L2 constraint")
    _, energy = l2_integrals(state, p)
    trR0 = state.tr_R0_integral
    trM = compute_M(state, p).trace_integral
    ratio = energy / trR0
    sharp_rhs = ENERGY_CONSTANT * (trR0 - trM)
    scale = max(abs(trR0), 1e-300)
    return {
        "ratio": ratio,
        "bound_ok": bool(ratio <= ENERGY_CONSTANT + tol.energy_slack),
        "energy": energy,
        "sharp_rhs": sharp_rhs,
        "sharp_ok": bool(energy <= sharp_rhs + tol.energy_slack * scale),
    }


def linear_residuals(grid: GridSpec, p: PerturbationPair, tol: Tolerances = DEFAULT_TOLERANCES) -> dict:
    """sup |div Vt| and sup |d_t Vt + div Ut| on the full grid."""
    div = np.abs(div_array(p.V_tilde, grid)).max()
    mom = np.abs(time_derivative_array(p.V_tilde, grid, 1, tol.fd_order) + div_tensor_array(p.U_tilde, grid)).max()
    scale = float(np.abs(p.V_tilde).max())
    return {"div": float(div), "momentum": float(mom), "scale": scale,
            "ok": bool(div + mom <= tol.lin_rel * max(scale, 1e-300) or max(div, mom) == 0)}


def admissibility(state: SubsolutionState, p: PerturbationPair, tol: Tolerances = DEFAULT_TOLERANCES) -> PerturbationPair:
    """Attach X0 flags and residual numbers to ``p``."""
    d = compute_M(state, p)
    s = check_strict(state, p, tol, d)
    l2 = check_l2(state, p, tol)
    lin = linear_residuals(state.grid, p, tol)
    flags = {"linear_system_ok": lin["ok"], "strict_ok": s["ok"], "l2_ok": l2["ok"]}
    res = {"div": lin["div"], "momentum": lin["momentum"], "min_margin": s["min_margin"],
           "lambda_star": s["lambda_star"], "l2_lhs": l2["lhs"], "l2_rhs": l2["rhs"],
           "trace_integral": d.trace_integral}
    return p.with_report(flags, res)
