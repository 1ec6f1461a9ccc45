"""Cube-localized oscillations solving the linear system and the greedy defect reduction.

Every building block is an exact potential pair. For a divergence-free vector
potential ``w`` compactly supported in a cube,

    Vt = -Lap w,    Ut = d_t (grad w + grad w^T)

satisfies ``div Vt = 0`` and ``d_t Vt + div Ut = 0`` identically, because the
spectral derivatives and the finite-difference time stencil are linear and
commute. ``w`` is the perpendicular gradient (2D) or curl (3D) of a cut-off
third antiderivative of a periodic profile, arranged so that at leading order
``Vt = a chi h(phi) e`` with ``e`` orthogonal to the wave vector.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .config import DEFAULT_TOLERANCES, Tolerances
from .constraints import (
    DefectField,
    PerturbationPair,
    SubsolutionState,
    TimeWindow,
    check_l2,
    check_strict,
    compute_M,
    energy_ratio,
    l2_integrals,
    linear_residuals,
)
from .errors import NoAdmissibleSize, NoDecrease, PreconditionViolated, ResidualBudgetExceeded, Unresolvable
from .linalg import sym_eigvals
from .spectral import (
    GridSpec,
    curl_array,
    grad_array,
    laplacian_array,
    perp_gradient_array,
    time_derivative_array,
)
from .weakform import smooth_step

AMPLITUDE_SAFETY = 0.95
STRESS_SAFETY = 0.9
SPACE_RAMP = 0.25
TIME_MARGIN = 2
# finer than plain halving; the floor 2^-10 is unchanged
BACKTRACK = tuple(2.0 ** (-j / 8) for j in range(81))
_PHASES = np.linspace(0.0, 2 * np.pi, 32, endpoint=False)


# ---------------------------------------------------------------------------
# patches
# ---------------------------------------------------------------------------

def _flat_top(s: np.ndarray, length: float, ramp: float) -> np.ndarray:
    """C-infinity cutoff equal to 1 on [ramp, length - ramp] and 0 outside [0, length]."""
    return smooth_step(s / ramp) * (1.0 - smooth_step((s - (length - ramp)) / ramp))


@dataclass(frozen=True, eq=False)
class CubePatch:
    """Space-time cell Q with its averages.

    ``x_ranges`` is None for patches covering the whole torus; otherwise each
    axis has a periodic interval ``(lo, length)``.
    """

    grid: GridSpec
    level: int
    t_range: tuple[float, float]
    x_ranges: tuple | None
    t_index: np.ndarray
    x_index: tuple
    averages: dict
    rho_under: float
    C_Q: float
    R_Q: np.ndarray
    M_Q: np.ndarray
    M_mean: np.ndarray
    M_nodes: np.ndarray
    lambda_star: float
    min_trace_M: float

    @property
    def full_torus(self) -> bool:
        return self.x_ranges is None

    @property
    def size(self) -> float:
        return 2 * np.pi if self.x_ranges is None else float(self.x_ranges[0][1])

    @property
    def center(self) -> tuple:
        t = 0.5 * (self.t_range[0] + self.t_range[1])
        if self.x_ranges is None:
            return (t,) + (np.pi,) * self.grid.n
        return (t,) + tuple((lo + 0.5 * L) % (2 * np.pi) for lo, L in self.x_ranges)

    @property
    def key(self) -> tuple:
        xr = None if self.x_ranges is None else tuple(round(lo, 12) for lo, _ in self.x_ranges)
        return (self.level, round(self.t_range[0], 12), xr)

    @property
    def admissible(self) -> bool:
        return bool(sym_eigvals(self.R_Q)[0] > 0 and np.trace(self.M_Q) > 0.25 * self.min_trace_M)

    def time_ramp(self) -> float:
        a, b = self.t_range
        return min(max(2 * self.grid.dt, 0.1 * (b - a)), (b - a) / 3)

    def time_cutoff(self) -> np.ndarray:
        a, b = self.t_range
        t = self.grid.times
        out = np.where((t > a) & (t < b), _flat_top(t - a, b - a, self.time_ramp()), 0.0)
        return out

    def space_cutoff(self) -> np.ndarray:
        g = self.grid
        if self.x_ranges is None:
            return np.ones(g.spatial_shape)
        out = np.ones(g.spatial_shape)
        for x, (lo, L) in zip(g.coords, self.x_ranges):
            s = np.mod(x - lo, 2 * np.pi)
            out = out * np.where(s < L, _flat_top(s, L, SPACE_RAMP * L), 0.0)
        return out

    def cutoff(self) -> np.ndarray:
        return self.time_cutoff().reshape((-1,) + (1,) * self.grid.n) * self.space_cutoff()[None]

    def nodes(self, a: np.ndarray) -> np.ndarray:
        """Values of a component-first full-grid array on the nodes of Q."""
        ncomp = a.ndim - self.grid.n - 1
        out = a[(slice(None),) * ncomp + (slice(int(self.t_index[0]), int(self.t_index[-1]) + 1),)]
        if self.x_ranges is None:
            return out
        return out[(slice(None),) * ncomp + np.ix_(np.arange(out.shape[ncomp]), *self.x_index)]


def _window_times(state: SubsolutionState, margin: int = TIME_MARGIN) -> tuple[float, float]:
    dt = state.grid.dt
    a = (state.P.start + margin) * dt
    b = (state.P.stop - margin) * dt
    if b - a < 3 * dt:
        raise PreconditionViolated(f"window {state.P} too short for a {margin}-slice margin")
    return a, b


def _cell_bounds(a: float, b: float, count: int, offset: int) -> list[tuple[float, float]]:
    edges = np.linspace(a, b, count + 1)
    if offset:
        h = 0.5 * (edges[1] - edges[0])
        edges = np.concatenate([[a], edges[1:] - h, [b]])
    return [(float(lo), float(hi)) for lo, hi in zip(edges[:-1], edges[1:]) if hi - lo > 0]


def _make_patch(state, current, defect, lam, level, t_range, x_ranges) -> CubePatch:
    g = state.grid
    n = g.n
    t = g.times
    lo_t, hi_t = t_range
    t_index = np.nonzero((t >= lo_t - 1e-12) & (t <= hi_t + 1e-12))[0]
    t_index = t_index[(t_index >= state.P.start) & (t_index <= state.P.stop)]
    if x_ranges is None:
        x_index = tuple(np.arange(g.modes_per_axis) for _ in range(n))
    else:
        x1 = g.dx * np.arange(g.modes_per_axis)
        x_index = tuple(np.nonzero(np.mod(x1 - lo, 2 * np.pi) < L - 1e-12)[0] for lo, L in x_ranges)
    t_sl = slice(int(t_index[0]), int(t_index[-1]) + 1)

    def q(a):
        ncomp = a.ndim - n - 1
        out = a[(slice(None),) * ncomp + (t_sl,)]
        if x_ranges is None:
            return out
        return out[(slice(None),) * ncomp + np.ix_(np.arange(out.shape[ncomp]), *x_index)]

    axes = tuple(range(-(n + 1), 0))
    rho = q(state.rho0)
    V0 = q(state.V0)
    W = V0 + q(current.V_tilde)
    Ubar = (q(state.U0) + q(current.U_tilde)).mean(axis=axes)
    R0bar = q(state.R0).mean(axis=axes)
    Vbar = W.mean(axis=axes)
    rho_under = float(rho.min())
    C_Q = float(((V0**2).sum(axis=0) / rho).min())
    eye = np.eye(n)
    R_Q = R0bar - lam / (16 * n) * eye
    M_Q = C_Q / n * eye + R_Q - np.outer(Vbar, Vbar) / rho_under + Ubar
    # defect.M lives on P; shift the time index accordingly
    Mq = defect.M[:, :, t_sl.start - state.P.start:t_sl.stop - state.P.start]
    if x_ranges is not None:
        Mq = Mq[(slice(None), slice(None)) + np.ix_(np.arange(Mq.shape[2]), *x_index)]
    return CubePatch(
        grid=g,
        level=level,
        t_range=(float(lo_t), float(hi_t)),
        x_ranges=x_ranges,
        t_index=t_index,
        x_index=x_index,
        averages={"V_bar": Vbar, "U_bar": Ubar, "R0_bar": R0bar, "rho_bar": float(rho.mean()), "V0_bar": V0.mean(axis=axes)},
        rho_under=rho_under,
        C_Q=C_Q,
        R_Q=R_Q,
        M_Q=0.5 * (M_Q + M_Q.T),
        M_mean=Mq.mean(axis=axes),
        M_nodes=Mq,
        lambda_star=lam,
        min_trace_M=float(np.trace(Mq, axis1=0, axis2=1).min()),
    )


def tile_patches(state: SubsolutionState, current: PerturbationPair | None = None, level: int = 0,
                 offset: int = 0, defect: DefectField | None = None, lambda_star: float | None = None,
                 margin: int = TIME_MARGIN) -> list[CubePatch]:
    """Disjoint cells at ``level``: 2^level cells per axis, comparable time cells.

    ``offset`` = 1 staggers the cells by half a cell in space and time.
    """
    g = state.grid
    current = current or PerturbationPair.zero(g)
    defect = defect or compute_M(state, current)
    lam = defect.lambda_star if lambda_star is None else float(lambda_star)
    m = 2**level
    if g.modes_per_axis // m < 1:
        raise Unresolvable(f"level {level} is finer than the grid")
    a, b = _window_times(state, margin)
    q = max(1, math.ceil((b - a) / (2 * np.pi / m) - 1e-12))
    t_cells = _cell_bounds(a, b, q, offset)
    if level == 0:
        x_cells = [None]
    else:
        L = 2 * np.pi / m
        shift = 0.5 * L * offset
        lows = [shift + i * L for i in range(m)]
        x_cells = [tuple((lo, L) for lo in combo) for combo in np.array(np.meshgrid(*([lows] * g.n), indexing="ij")).reshape(g.n, -1).T]
    return [_make_patch(state, current, defect, lam, level, tc, xc) for tc in t_cells for xc in x_cells]


def _oscillation_ok(state: SubsolutionState, patch: CubePatch) -> bool:
    n = state.grid.n
    lam = patch.lambda_star
    Mq = patch.M_nodes
    dM = Mq - patch.M_Q[(...,) + (None,) * (Mq.ndim - 2)]
    dR = patch.nodes(state.R0) - patch.averages["R0_bar"][(...,) + (None,) * (Mq.ndim - 2)]
    v2 = (patch.nodes(state.V0) ** 2).sum(axis=0) / patch.nodes(state.rho0)
    return bool(
        _spec_norm(dM) < lam / (8 * n)
        and _spec_norm(dR) < lam / (64 * n)
        and np.abs(patch.C_Q - v2).max() < lam / (64 * n)
        and patch.admissible
    )


def _spec_norm(A: np.ndarray) -> float:
    ev = sym_eigvals(0.5 * (A + np.swapaxes(A, 0, 1)))
    return float(np.abs(ev).max()) if ev.size else 0.0


def build_cube_grid(state: SubsolutionState, defect: DefectField | None = None, shrink: float = 0.0,
                    current: PerturbationPair | None = None, lambda_star: float | None = None,
                    max_level: int | None = None) -> list[CubePatch]:
    """Coarsest tiling whose cells all meet the oscillation thresholds.

    Thresholds: sup|M - M_Q| < lam/(8n), sup|R0_bar - R0| < lam/(64n) and
    sup|C_Q - |V0|^2/rho0| < lam/(64n). ``shrink`` trims that fraction of the
    window at each end before tiling. ``lambda_star`` overrides the measured
    value for sensitivity scans.

    Raises
    ------
    NoAdmissibleSize
        If even the finest resolvable cells violate a threshold.
    """
    g = state.grid
    current = current or PerturbationPair.zero(g)
    defect = defect or compute_M(state, current)
    lam = defect.lambda_star if lambda_star is None else float(lambda_star)
    if lam <= 0:
        raise PreconditionViolated(f"lambda_* = {lam:.3e} is not positive")
    if max_level is None:
        max_level = int(np.log2(g.modes_per_axis))
    span = state.P.stop - state.P.start
    cut = int(round(shrink * span))
    inner = state if cut == 0 else replace(state, P=TimeWindow(state.P.start + cut, state.P.stop - cut))
    inner_defect = defect if cut == 0 else compute_M(inner, current)
    for level in range(max_level + 1):
        patches = tile_patches(inner, current, level, 0, inner_defect, lam, margin=0)
        if all(_oscillation_ok(inner, p) for p in patches):
            return patches
    raise NoAdmissibleSize(f"no cell size down to level {max_level} meets the oscillation thresholds")


# ---------------------------------------------------------------------------
# building block
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class WaveSpec:
    """One oscillation: Vt ~ chi h(phi) amplitude, phi = N k.x - N|k| speed t + phase.

    ``direction`` is the spatial wave vector k (integer for full-torus patches);
    ``amplitude`` must be orthogonal to it. ``stress`` is an optional spatially
    uniform traceless part of Ut, allowed on full-torus patches only.
    """

    direction: tuple
    amplitude: tuple
    frequency: float = 8.0
    stress: np.ndarray | None = None
    phase: float = 0.0
    speed: float = 0.0
    harmonics: int | None = None
    kappa: float = 3.0
    seed: int = 0

    @property
    def spacetime_vector(self) -> tuple:
        k = np.asarray(self.direction, dtype=float)
        N = self.frequency
        return tuple(N * k) + (-N * np.linalg.norm(k) * self.speed,)


def max_frequency(grid: GridSpec, k) -> float:
    """Largest N with at least four grid points per wavelength along every axis."""
    kmax = float(np.abs(np.asarray(k, dtype=float)).max())
    return grid.modes_per_axis / (4 * kmax)


def _mask_limit(grid: GridSpec) -> float:
    return min(grid.dealias_fraction * grid.modes_per_axis / 2, grid.modes_per_axis / 2 - 1)


def profile_coefficients(kappa: float, harmonics: int) -> np.ndarray:
    """Sine coefficients b_j, j = 1..harmonics, of tanh(kappa sin) scaled to unit peak.

    The truncated series is renormalized so its own maximum is 1.
    """
    th = np.linspace(0, 2 * np.pi, 512, endpoint=False)
    h = np.tanh(kappa * np.sin(th))
    b = np.array([2 * np.mean(h * np.sin(j * th)) for j in range(1, harmonics + 1)])
    b[1::2] = 0.0
    peak = np.abs(np.sin(np.outer(th, np.arange(1, harmonics + 1))) @ b).max()
    return b / peak


def _third_antiderivative(b: np.ndarray, phi: np.ndarray) -> np.ndarray:
    # d^3/dphi^3 cos(j phi) / j^3 = sin(j phi)
    out = np.zeros_like(phi)
    for j, bj in enumerate(b, start=1):
        if bj:
            out += bj * np.cos(j * phi) / j**3
    return out


def _check_resolvable(grid: GridSpec, k: np.ndarray, N: float, J: int, full_torus: bool) -> None:
    if N <= 0:
        raise Unresolvable("frequency must be positive")
    if N > max_frequency(grid, k) * (1 + 1e-12):
        raise Unresolvable(f"N={N} gives fewer than 4 points per wavelength on {grid.modes_per_axis} modes")
    if J * N * np.abs(k).max() > _mask_limit(grid) + 1e-9:
        raise Unresolvable(f"harmonic {J} of N={N} lies outside the dealiased band")
    if full_torus and not np.allclose(N * k, np.round(N * k)):
        raise Unresolvable("full-torus waves need an integer wave vector N k")


def default_harmonics(grid: GridSpec, k, N: float) -> int:
    J = int(_mask_limit(grid) // (N * np.abs(np.asarray(k, dtype=float)).max()))
    J = max(J, 1)
    return J if J % 2 else J - 1


def _wave_potential(grid: GridSpec, chi: np.ndarray, spec: WaveSpec) -> np.ndarray:
    """Divergence-free w with -Lap w ~ a chi h(phi) e at leading order."""
    n = grid.n
    k = np.asarray(spec.direction, dtype=float)
    knorm = np.linalg.norm(k)
    xi = k / knorm
    a_vec = np.asarray(spec.amplitude, dtype=float)
    a = np.linalg.norm(a_vec)
    e = a_vec / a
    if abs(e @ xi) > 1e-10:
        raise ValueError("amplitude must be orthogonal to the wave vector")
    N = spec.frequency
    J = spec.harmonics or default_harmonics(grid, k, N)
    b = profile_coefficients(spec.kappa, J)
    Kn = N * knorm
    kx = sum(ki * xi_ for ki, xi_ in zip(k, grid.coords))
    phi = N * kx[None] - Kn * spec.speed * grid.times.reshape((-1,) + (1,) * n) + spec.phase
    # amplitudes refer to the nodal peak of h, which sits below 1 near 4 points per wavelength
    h = sum(bj * np.sin(j * phi) for j, bj in enumerate(b, start=1) if bj)
    H3 = _third_antiderivative(b, phi) / np.abs(h).max()
    if n == 2:
        sigma = e @ np.array([-xi[1], xi[0]])
        return perp_gradient_array(-sigma * a / Kn**3 * chi * H3, grid)
    d = np.cross(xi, e)
    G = a / Kn**3 * chi * H3
    return curl_array(G[None] * d.reshape((3,) + (1,) * (n + 1)), grid)


def _pair_from_potential(grid: GridSpec, w: np.ndarray, tol: Tolerances) -> tuple[np.ndarray, np.ndarray]:
    V = -laplacian_array(w, grid)
    gw = np.stack([grad_array(w[i], grid) for i in range(grid.n)])
    U = time_derivative_array(gw + np.swapaxes(gw, 0, 1), grid, 1, tol.fd_order)
    return V, U


def localized_wave(patch: CubePatch, spec: WaveSpec, tol: Tolerances = DEFAULT_TOLERANCES) -> PerturbationPair:
    """Exact solution of the linear system supported in ``patch``.

    Raises
    ------
    Unresolvable
        If the wave is under-resolved or a stress part is requested off the full torus.
    ResidualBudgetExceeded
        If the measured linear residual exceeds ``tol.lin_rel`` times sup|Vt|.
    """
    g = patch.grid
    n = g.n
    pts = (g.nt,) + g.spatial_shape
    a = float(np.linalg.norm(np.asarray(spec.amplitude, dtype=float)))
    stress = None if spec.stress is None else np.asarray(spec.stress, dtype=float)
    has_stress = stress is not None and np.abs(stress).max() > 0
    if a == 0 and not has_stress:
        return PerturbationPair.zero(g)
    V = np.zeros((n,) + pts)
    U = np.zeros((n, n) + pts)
    if a > 0:
        k = np.asarray(spec.direction, dtype=float)
        J = spec.harmonics or default_harmonics(g, k, spec.frequency)
        _check_resolvable(g, k, spec.frequency, J, patch.full_torus)
        V, U = _pair_from_potential(g, _wave_potential(g, patch.cutoff(), spec), tol)
    if has_stress:
        if not patch.full_torus:
            raise Unresolvable("a uniform stress part is only divergence free on full-torus patches")
        stress = 0.5 * (stress + stress.T)
        stress -= np.trace(stress) / n * np.eye(n)
        chi_t = patch.time_cutoff().reshape((-1,) + (1,) * n)
        U = U + stress.reshape((n, n) + (1,) * (n + 1)) * chi_t
    pair = PerturbationPair(V, U, (patch.key,))
    lin = linear_residuals(g, pair, tol)
    if not lin["ok"]:
        budget = tol.lin_rel * max(lin["scale"], float(np.abs(U).max()))
        if lin["div"] + lin["momentum"] > budget:
            raise ResidualBudgetExceeded(f"linear residual {lin['div'] + lin['momentum']:.2e} over budget {budget:.2e}")
    return pair.with_report({"linear_system_ok": True}, lin)


def sign_select(patch: CubePatch | None, state: SubsolutionState, candidate: PerturbationPair) -> PerturbationPair:
    """Return the candidate or its negation so that int V0.Vt/rho0 >= 0."""
    pair, _ = l2_integrals(state, candidate)
    if pair < 0:
        neg = -candidate
        return PerturbationPair(neg.V_tilde, neg.U_tilde, candidate.support, candidate.flags, candidate.residuals)
    return candidate


# ---------------------------------------------------------------------------
# greedy iteration
# ---------------------------------------------------------------------------

def _lattice_directions(n: int) -> list[np.ndarray]:
    if n == 2:
        vs = [(1, 0), (0, 1), (1, 1), (1, -1)]
    else:
        vs = [(1, 0, 0), (0, 1, 0), (0, 0, 1), (1, 1, 0), (1, -1, 0), (1, 0, 1), (1, 0, -1), (0, 1, 1), (0, 1, -1)]
    return [np.array(v, dtype=float) for v in vs]


def _orthogonal_in(k: np.ndarray, top: np.ndarray) -> np.ndarray:
    """Unit vector orthogonal to k, as close to ``top`` as possible."""
    xi = k / np.linalg.norm(k)
    e = top - (top @ xi) * xi
    if np.linalg.norm(e) < 1e-6:
        e = np.array([-xi[1], xi[0]]) if k.size == 2 else np.cross(xi, np.eye(3)[np.argmin(np.abs(xi))])
    # second projection removes the roundoff left by near-parallel inputs
    e = e - (e @ xi) * xi
    return e / np.linalg.norm(e)


def _best_phase(patch: CubePatch, spec_kwargs: dict, rng: np.random.Generator) -> float:
    """Phase maximizing the nodal mean of h^2 relative to its peak on Q at mid time."""
    g = patch.grid
    k = spec_kwargs["direction"]
    N = spec_kwargs["frequency"]
    J = default_harmonics(g, k, N)
    b = profile_coefficients(3.0, J)
    kx = sum(ki * x for ki, x in zip(k, g.coords))[np.ix_(*patch.x_index)]
    scores = []
    for p0 in _PHASES:
        phi = N * kx + p0
        h = sum(bj * np.sin(j * phi) for j, bj in enumerate(b, start=1))
        scores.append(np.mean(h**2))
    scores = np.array(scores)
    best = np.flatnonzero(scores >= scores.max() * (1 - 1e-9))
    return float(_PHASES[rng.choice(best)])


def design_wave(state: SubsolutionState, patch: CubePatch, current: PerturbationPair,
                rng: np.random.Generator) -> WaveSpec | None:
    """Wave aimed at the top eigendirection of the patch-averaged defect.

    Each lattice direction k is scored by the largest amplitude a with
    a^2 + 2 a rho x <= safety * rho (e.M e + beta), x = max_Q |W.e|/rho0 the
    cross-term weight and beta the stress that full-torus patches may borrow
    from the other directions. The highest-scoring direction wins; ties are
    broken by ``rng``.
    """
    g = state.grid
    n = g.n
    M = patch.M_mean
    if np.trace(M) <= 0:
        return None
    w, v = np.linalg.eigh(0.5 * (M + M.T))
    top = v[:, -1]
    W = patch.nodes(state.V0 + current.V_tilde)
    rho = patch.nodes(state.rho0)
    lam_min_Q = float(sym_eigvals(patch.M_nodes)[0].min())
    if lam_min_Q <= 0:
        return None
    rho_u = patch.rho_under
    cands = []
    ks = _lattice_directions(n)
    Wbar = patch.averages["V_bar"]
    if not patch.full_torus and np.linalg.norm(Wbar) > 0:
        # waves travelling along the mean momentum keep W.e small
        ks.append(Wbar / np.linalg.norm(Wbar))
    for k in ks:
        e = _orthogonal_in(k, top)
        slack = float(e @ M @ e)
        beta = STRESS_SAFETY * (n - 1) * lam_min_Q if patch.full_torus else 0.0
        x = float(np.abs(np.tensordot(e, W, axes=1) / rho).max())
        budget = AMPLITUDE_SAFETY * rho_u * (slack + beta)
        a = -rho_u * x + np.sqrt((rho_u * x) ** 2 + budget)
        cands.append((a, k, e, beta))
    amax = max(c[0] for c in cands)
    if amax <= 0:
        return None
    ties = [c for c in cands if c[0] >= amax * (1 - 1e-9)]
    a, k, e, beta = ties[rng.integers(len(ties))]
    sign = 1.0 if rng.random() < 0.5 else -1.0
    xi = k / np.linalg.norm(k)
    speed = float(Wbar @ xi) / patch.averages["rho_bar"]
    N = max_frequency(g, k) if not patch.full_torus else float(np.floor(max_frequency(g, k)))
    kw = {"direction": tuple(k), "frequency": N}
    stress = None
    if beta > 0:
        f = np.eye(n) - np.outer(e, e)
        stress = beta * (np.outer(e, e) - f / (n - 1))
    return WaveSpec(direction=tuple(k), amplitude=tuple(sign * a * e), frequency=N, stress=stress,
                    phase=_best_phase(patch, kw, rng), speed=speed, seed=int(rng.integers(2**31)))


@dataclass
class IterateLog:
    steps: list = field(default_factory=list)
    measured_c0: float | None = None
    energy_ratio: float | None = None

    def record(self, entry: dict) -> None:
        self.steps.append(entry)
        if entry.get("accepted"):
            r = entry.get("coercivity_ratio")
            if r is not None:
                self.measured_c0 = r if self.measured_c0 is None else min(self.measured_c0, r)
            self.energy_ratio = entry.get("energy_ratio")

    @property
    def accepted(self) -> list:
        return [s for s in self.steps if s.get("accepted")]

    def to_dict(self) -> dict:
        return {"steps": self.steps, "measured_c0": self.measured_c0, "energy_ratio": self.energy_ratio}

    def write_jsonl(self, path) -> None:
        with Path(path).open("w") as fh:
            for s in self.steps:
                fh.write(json.dumps(s, sort_keys=True) + "\n")


def l1_norm_P(state: SubsolutionState, V: np.ndarray) -> float:
    """Nodal space-time L1 norm of a vector field over P."""
    return state.integral(np.sqrt((V**2).sum(axis=0)))


def greedy_step(state: SubsolutionState, current: PerturbationPair, patches: list[CubePatch],
                rng: np.random.Generator, tol: Tolerances = DEFAULT_TOLERANCES) -> tuple[PerturbationPair, dict]:
    """One sweep over ``patches`` with a single backtracked scale.

    Raises
    ------
    NoDecrease
        If no backtracking factor keeps admissibility with a strict decrease;
        the exception carries the log entry as ``entry``.
    """
    g = state.grid
    before = compute_M(state, current).trace_integral
    added = PerturbationPair.zero(g)
    used = 0
    for patch in patches:
        spec = design_wave(state, patch, current, rng)
        if spec is None:
            continue
        try:
            cand = localized_wave(patch, spec, tol)
        except (Unresolvable, ResidualBudgetExceeded):
            continue
        added = added + sign_select(patch, state, cand)
        used += 1
    entry = {"trace_integral_before": before, "patches": len(patches), "waves": used, "accepted": False}
    if used:
        for s in BACKTRACK:
            trial = current + added.scaled(s)
            d = compute_M(state, trial)
            strict = check_strict(state, trial, tol, d)
            if not strict["ok"]:
                continue
            l2 = check_l2(state, trial, tol)
            if not l2["ok"] or d.trace_integral >= before - tol.min_decrease:
                continue
            lin = linear_residuals(g, trial, tol)
            if not lin["ok"]:
                continue
            l1 = l1_norm_P(state, s * added.V_tilde)
            er = energy_ratio(state, trial, tol)
            entry.update({
                "accepted": True,
                "scale": s,
                "trace_integral_after": d.trace_integral,
                "l1_norm_of_added_V": l1,
                "coercivity_ratio": l1 / before if before > 0 else None,
                "min_margin": strict["min_margin"],
                "l2_lhs": l2["lhs"],
                "l2_rhs": l2["rhs"],
                "linear_residual": lin["div"] + lin["momentum"],
                "energy_ratio": er["ratio"],
                "energy_sharp_ok": er["sharp_ok"],
            })
            new = PerturbationPair(trial.V_tilde, trial.U_tilde, tuple(current.support) + tuple(added.support))
            return new, entry
    err = NoDecrease(f"no admissible decrease from {before:.6e} over {len(patches)} patches")
    err.entry = entry
    raise err


def run_iteration(state: SubsolutionState, budget: int = 200, target: float = 0.5, seed: int = 0,
                  levels: tuple = (0, 1, 2), log_path=None,
                  tol: Tolerances = DEFAULT_TOLERANCES, on_accept=None) -> tuple[PerturbationPair, IterateLog]:
    """Greedy steps until int tr M <= target * int tr R0 or the budget runs out.

    Levels are cycled; the offset alternates each full cycle. The run halts
    early once every level fails in a row. Partial progress is returned.
    ``on_accept(pair, entry)`` is called after every accepted step.
    """
    g = state.grid
    if state.lambda_min_R0 <= 0:
        raise PreconditionViolated("lambda_min(R0) must be positive on P")
    rng = np.random.default_rng(seed)
    cur = PerturbationPair.zero(g)
    log = IterateLog()
    total = state.tr_R0_integral
    trace = total
    failures = 0
    i = 0
    while len(log.steps) < budget and trace > target * total and failures < len(levels):
        level = levels[i % len(levels)]
        offset = (i // len(levels)) % 2
        i += 1
        try:
            patches = tile_patches(state, cur, level, offset)
        except Unresolvable:
            failures += 1
            continue
        try:
            cur, entry = greedy_step(state, cur, patches, rng, tol)
            trace = entry["trace_integral_after"]
            failures = 0
            if on_accept is not None:
                on_accept(cur, entry)
        except NoDecrease as exc:
            entry = exc.entry
            failures += 1
        entry.update({"step": len(log.steps), "level": level, "offset": offset,
                      "trace_fraction": trace / total if total > 0 else None})
        log.record(entry)
    if log_path is not None:
        log.write_jsonl(log_path)
    return cur, log


def coercivity_probe(state: SubsolutionState, patches: list[CubePatch] | None = None, samples: int = 10,
                     seed: int = 0, tol: Tolerances = DEFAULT_TOLERANCES) -> dict:
    """Empirical min over samples of ||V_added||_L1 / int tr M from the zero pair.

    Each sample draws one admissible maximal-amplitude wave family over the
    patches (backtracked as in the greedy step). ``ratio_side_length``
    normalizes by sum_Q tr M_Q * side(Q) instead of int tr M.
    """
    g = state.grid
    zero = PerturbationPair.zero(g)
    trM = compute_M(state, zero).trace_integral
    if trM <= 0:
        return {"applicable": False, "ratio": None, "ratios": []}
    patches = patches if patches is not None else tile_patches(state, zero, 0)
    # |Q| read as a side length rather than a volume
    side = sum(float(np.trace(p.M_Q)) * p.size for p in patches)
    rng = np.random.default_rng(seed)
    ratios, ratios_side = [], []
    for _ in range(samples):
        try:
            _, entry = greedy_step(state, zero, patches, rng, tol)
        except NoDecrease:
            continue
        ratios.append(entry["l1_norm_of_added_V"] / trM)
        ratios_side.append(entry["l1_norm_of_added_V"] / side if side > 0 else None)
    return {"applicable": True, "ratio": min(ratios) if ratios else 0.0, "ratios": ratios,
            "ratio_side_length": min(ratios_side) if ratios_side else None, "Lambda": state.Lambda}
