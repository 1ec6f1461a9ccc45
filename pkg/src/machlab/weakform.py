"""Weak-form defects against trigonometric test fields with smooth time profiles.

A test field is ``phi(t, x) = chi(t) * a * exp(i k.x)``; real and imaginary parts
give the cosine and sine members of the battery.  For a conserved density ``q``
with flux ``F`` the defect is

    int int q . d_t phi + F : grad phi  dx dt  +  int q(0) . phi(0) dx

which vanishes for weak solutions of ``d_t q + div F = 0``.  Spatial integrals are
read off the FFT, so they are exact for band-limited data.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass

import numpy as np

from scipy import interpolate

from .spectral import GridSpec, fft


def smooth_step(s):
    """C-infinity step: 0 for s <= 0, 1 for s >= 1."""
    s = np.asarray(s, dtype=float)
    a = np.where(s > 0, np.exp(-1.0 / np.where(s > 0, s, 1.0)), 0.0)
    b = np.where(s < 1, np.exp(-1.0 / np.where(s < 1, 1 - s, 1.0)), 0.0)
    return a / (a + b)


def smooth_step_deriv(s):
    s = np.asarray(s, dtype=float)
    inside = (s > 0) & (s < 1)
    si = np.where(inside, s, 0.5)
    a = np.exp(-1.0 / si)
    b = np.exp(-1.0 / (1 - si))
    da = a / si**2
    db = -b / (1 - si) ** 2
    d = (da * (a + b) - a * (da + db)) / (a + b) ** 2
    return np.where(inside, d, 0.0)


@dataclass(frozen=True)
class TimeProfile:
    """chi(t) = (1 - S((t - a)/(b - a))) * (1 + mod * sin(2 pi t / T_ref)).

    Flat near t = 0 and identically zero for t >= b, so it is compactly supported
    in [0, T) whenever b < T.
    """

    a: float
    b: float
    mod: float = 0.0
    T_ref: float = 1.0

    def __call__(self, t):
        t = np.asarray(t, dtype=float)
        base = 1 - smooth_step((t - self.a) / (self.b - self.a))
        return base * (1 + self.mod * np.sin(2 * math.pi * t / self.T_ref))

    def deriv(self, t):
        t = np.asarray(t, dtype=float)
        s = (t - self.a) / (self.b - self.a)
        base = 1 - smooth_step(s)
        dbase = -smooth_step_deriv(s) / (self.b - self.a)
        w = 2 * math.pi / self.T_ref
        osc = 1 + self.mod * np.sin(w * t)
        dosc = self.mod * w * np.cos(w * t)
        return dbase * osc + base * dosc


def default_profiles(T: float, count: int = 3) -> list[TimeProfile]:
    """Three standard profiles supported well inside [0, T)."""
    profs = [
        TimeProfile(0.25 * T, 0.75 * T),
        TimeProfile(0.10 * T, 0.50 * T),
        TimeProfile(0.20 * T, 0.80 * T, mod=0.5, T_ref=T),
    ]
    return profs[:count]


def product_weights(grid: GridSpec, prof: TimeProfile, refine: int = 16) -> tuple[np.ndarray, np.ndarray]:
    """Weights (w_d, w_c) with sum w_d A ~ int chi' A dt and sum w_c B ~ int chi B dt.

    Samples are interpolated by a cubic spline and integrated against the exact
    profile with Simpson's rule on a refined grid, so quadrature error is set by
    the smoothness of the data rather than the sharpness of the profile.
    """
    nt = grid.nt
    times = grid.times
    # even number of intervals for Simpson
    fine = np.linspace(0.0, grid.T, 2 * (nt - 1) * refine + 1)
    P = interpolate.CubicSpline(times, np.eye(nt), axis=0)(fine)
    wf = _simpson_weights(fine)
    return P.T @ (wf * prof.deriv(fine)), P.T @ (wf * prof(fine))


def _simpson_weights(x: np.ndarray) -> np.ndarray:
    h = x[1] - x[0]
    w = np.ones(x.size)
    w[1:-1:2] = 4
    w[2:-1:2] = 2
    return w * h / 3


def lattice(n: int, kmax: int, include_zero: bool = True) -> list[tuple[int, ...]]:
    """Half lattice of wavevectors with |k|_inf <= kmax (one of each +-k pair)."""
    out = []
    for k in itertools.product(range(-kmax, kmax + 1), repeat=n):
        if not any(k):
            if include_zero:
                out.append(k)
            continue
        first = next(c for c in k if c != 0)
        if first > 0:
            out.append(k)
    return out


def directions(k: tuple[int, ...], solenoidal: bool) -> list[np.ndarray]:
    """Orthonormal amplitude directions for a vector test field at wavevector k."""
    n = len(k)
    eye = [np.eye(n)[i] for i in range(n)]
    kv = np.asarray(k, dtype=float)
    if not solenoidal or not kv.any():
        return eye
    khat = kv / np.linalg.norm(kv)
    basis = []
    for e in eye:
        v = e - (e @ khat) * khat
        for b in basis:
            v = v - (v @ b) * b
        if np.linalg.norm(v) > 1e-8:
            basis.append(v / np.linalg.norm(v))
        if len(basis) == n - 1:
            break
    return basis


def _coefficients(a: np.ndarray, grid: GridSpec, ks) -> np.ndarray:
    """int a(t, x) exp(i k.x) dx for each listed k; output (..., nt, len(ks))."""
    ah = fft(a, grid.n)
    N = grid.modes_per_axis
    idx = tuple(np.array([(-kk[d]) % N for kk in ks]) for d in range(grid.n))
    return ah[(Ellipsis,) + idx] * (grid.torus_volume / N**grid.n)


def weak_defects(
    q: np.ndarray,
    F: np.ndarray,
    grid: GridSpec,
    kmax: int,
    profiles: list[TimeProfile],
    solenoidal: bool = False,
    normalize_gradient: bool = False,
    q0: np.ndarray | None = None,
) -> np.ndarray:
    """Defects of ``d_t q + div F = 0`` for every test field of the battery.

    Parameters
    ----------
    q : array
        Density with component shape ``()`` (scalar tests) or ``(n,)`` (vector tests),
        followed by ``(nt, *spatial)``.
    F : array
        Flux with component shape ``(n,)`` or ``(n, n)`` respectively.
    q0 : array, optional
        Initial datum; defaults to ``q`` at the first slice.
    normalize_gradient : bool
        Scale each test field by ``1/max(1, |k|)`` so spatial gradients stay of order one.

    Returns
    -------
    ndarray
        Absolute defects, one per (profile, k, direction, cos/sin).
    """
    n = grid.n
    vector_tests = q.ndim == n + 2
    ks = lattice(n, kmax)
    if q0 is None:
        q0 = np.take(q, 0, axis=q.ndim - n - 1)
    qh = _coefficients(q, grid, ks)
    Fh = _coefficients(F, grid, ks)
    q0h = _coefficients(np.expand_dims(q0, q0.ndim - n), grid, ks)[..., 0, :]
    kv = np.asarray(ks, dtype=float)
    out = []
    for prof in profiles:
        wd, wc = product_weights(grid, prof)
        chi0 = float(prof(0.0))
        if vector_tests:
            for j, k in enumerate(ks):
                scale = 1 / max(1.0, float(np.linalg.norm(kv[j]))) if normalize_gradient else 1.0
                for a in directions(k, solenoidal):
                    A = np.tensordot(a, qh[:, :, j], axes=(0, 0))
                    B = 1j * np.einsum("i,ijt,j->t", a, Fh[:, :, :, j], kv[j])
                    A0 = a @ q0h[:, j]
                    d = wd @ A + wc @ B + chi0 * A0
                    out.extend([scale * abs(d.real), scale * abs(d.imag)])
        else:
            A = qh
            B = 1j * np.einsum("itj,ji->tj", Fh, kv)
            d = wd @ A + wc @ B + chi0 * q0h
            if normalize_gradient:
                d = d / np.maximum(1.0, np.linalg.norm(kv, axis=1))
            out.extend(np.abs(d.real))
            out.extend(np.abs(d.imag))
    return np.asarray(out)
