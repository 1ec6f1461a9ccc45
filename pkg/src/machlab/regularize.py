"""Mollified strict subsolutions of the relaxed incompressible system."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .errors import AlphaTooLarge, ScaleLadderExhausted
from .linalg import sym_eigvals
from .scenarios import Scenario
from .spectral import (
    Field,
    GridSpec,
    Mollifier,
    div_array,
    div_tensor_array,
    grad_array,
    identity_tensor,
    mollify_array,
    norm,
    save_field,
    scalar,
    tensor,
    time_derivative_array,
    vector,
)


@dataclass(frozen=True)
class LadderRung:
    alpha: float
    u_err_l2: float
    comm_l1: float
    ok: bool


@dataclass(frozen=True)
class RegularizationResult:
    """``u_eps``, ``pi_eps`` and ``R_eps`` on the common window [0, T - epsilon]."""

    epsilon: float
    alpha_eps: float
    u_eps: Field
    pi_eps: Field
    R_eps: Field
    uu_eps: Field
    u_ref: Field
    ladder: tuple[LadderRung, ...] = ()
    report: dict = field(default_factory=dict)

    @property
    def grid(self) -> GridSpec:
        return self.u_eps.grid

    def to_report(self) -> dict:
        lam = sym_eigvals(self.R_eps.values)[0]
        comm = sym_eigvals(self.uu_eps.values - _outer(self.u_eps.values))[0]
        return {
            "epsilon": self.epsilon,
            "alpha_eps": self.alpha_eps,
            "T_window": self.grid.T,
            "u_err_l2": norm(self.u_eps - self.u_ref, "L2"),
            "R_eps_l1": norm(self.R_eps, "L1"),
            "lambda_min_R": float(lam.min()),
            "lambda_mean_R": float(lam.mean()),
            "commutator_lambda_min": float(comm.min()),
            "relaxed_residual": relaxed_residual(self),
            "ladder": [r.__dict__ for r in self.ladder],
        }

    def save(self, directory) -> None:
        d = Path(directory)
        d.mkdir(parents=True, exist_ok=True)
        save_field(self.u_eps, d / "u_eps.bin")
        save_field(self.pi_eps, d / "pi_eps.bin")
        save_field(self.R_eps, d / "R_eps.bin")
        (d / "regularize.json").write_text(json.dumps(self.to_report(), indent=2, sort_keys=True))


def _outer(u: np.ndarray) -> np.ndarray:
    return u[:, None] * u[None, :]


def alpha_ladder(epsilon: float, grid: GridSpec) -> list[float]:
    """epsilon, epsilon/2, ... down to the two-step floor of the time grid."""
    out = []
    a = epsilon
    while a >= 2 * grid.dt * (1 - 1e-9):
        out.append(a)
        a /= 2
    return out


def _restrict(a: np.ndarray, grid: GridSpec, steps: int) -> np.ndarray:
    tax = a.ndim - grid.n - 1
    idx = (slice(None),) * tax + (slice(0, steps + 1),)
    return a[idx]


def regularize(s: Scenario, epsilon: float, full_ladder: bool = False) -> RegularizationResult:
    """Mollify ``s`` at the largest ladder scale meeting both ``epsilon/2`` bounds.

    Parameters
    ----------
    full_ladder : bool
        Evaluate every rung down to the floor (for monotonicity studies)
        instead of stopping at the first admissible one.
    """
    grid = s.grid
    if not 0 < epsilon < grid.T / 2:
        raise ValueError(f"epsilon must lie in (0, T/2), got {epsilon}")
    ladder = alpha_ladder(epsilon, grid)
    if not ladder:
        raise ScaleLadderExhausted(f"time step {grid.dt} cannot resolve epsilon={epsilon}")
    steps = grid.steps_until(grid.T - epsilon)
    g = grid.truncated(steps)
    u = s.u.values
    uu = _outer(u)
    u_ref = vector(g, _restrict(u, grid, steps), "u")
    rungs = []
    chosen = None
    for alpha in ladder:
        m = Mollifier(alpha)
        try:
            ue, _ = mollify_array(u, grid, m)
            uue, _ = mollify_array(uu, grid, m)
        except AlphaTooLarge:
            continue
        ue = _restrict(ue, grid, steps)
        uue = _restrict(uue, grid, steps)
        uf = vector(g, ue, "u_eps")
        comm = tensor(g, uue - _outer(ue))
        err = norm(uf - u_ref, "L2")
        cl1 = norm(comm, "L1")
        ok = err <= epsilon / 2 and cl1 <= epsilon / 2
        rungs.append(LadderRung(alpha, err, cl1, ok))
        if ok and chosen is None:
            pe, _ = mollify_array(s.pi.values, grid, m)
            chosen = (alpha, uf, scalar(g, _restrict(pe, grid, steps), "pi_eps"), tensor(g, uue, "uu_eps"))
            if not full_ladder:
                break
    if chosen is None:
        raise ScaleLadderExhausted(f"no scale in {ladder} meets the epsilon/2 bounds (epsilon={epsilon})")
    alpha, uf, pf, uuf = chosen
    R = uuf.values - _outer(uf.values) + 0.5 * epsilon * identity_tensor(g.n, (g.nt,) + g.spatial_shape)
    return RegularizationResult(epsilon, alpha, uf, pf, tensor(g, R, "R_eps"), uuf, u_ref, tuple(rungs))


def relaxed_residual(r: RegularizationResult) -> float:
    """max |d_t u + div(u x u) + grad pi + div R| in strong form."""
    g = r.grid
    u = r.u_eps.values
    res = (
        time_derivative_array(u, g)
        + div_tensor_array(_outer(u), g)
        + grad_array(r.pi_eps.values, g)
        + div_tensor_array(r.R_eps.values, g)
    )
    return float(np.abs(res).max())


def bound_check_2_3(r: RegularizationResult, C_cal: float | None = None) -> dict:
    """Compare ||u_eps - u||_L2 + ||R_eps||_L1 with C_cal * epsilon.

    With ``C_cal`` omitted the check calibrates: ``C_cal = lhs / epsilon``.
    """
    lhs = norm(r.u_eps - r.u_ref, "L2") + norm(r.R_eps, "L1")
    cal = lhs / r.epsilon if C_cal is None else C_cal
    rhs = cal * r.epsilon
    return {"lhs": lhs, "rhs": rhs, "ratio": lhs / r.epsilon, "C_cal": cal, "pass": bool(lhs <= rhs * (1 + 1e-12))}


def divergence_max(r: RegularizationResult) -> float:
    return float(np.abs(div_array(r.u_eps.values, r.grid)).max())
