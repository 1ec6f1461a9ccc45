"""Spectral calculus on [0, T] x T^n.

Space is periodic with period 2*pi per axis and handled by FFT collocation;
time is a uniform grid on a closed interval and handled by finite differences.
Field values are stored in physical space with shape
``component_shape + (nt,) + spatial_shape``; component_shape is ``()`` for
scalars, ``(n,)`` for vectors and ``(n, n)`` for symmetric tensors.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import BinaryIO

import numpy as np
from scipy import integrate

from machlab.config import DEFAULT_TOLERANCES, Tolerances
from machlab.linalg import sym_eigvals
from machlab.errors import (
    AlphaTooLarge,
    DimensionMismatch,
    MeanNotZero,
    TooFewSlices,
)

KINDS = ("scalar", "vector", "tensor")


@dataclass(frozen=True)
class GridSpec:
    n: int = 2
    modes_per_axis: int = 64
    T: float = 1.0
    time_steps: int = 64
    dealias_fraction: float = 2.0 / 3.0

    def __post_init__(self):
        if self.n not in (2, 3):
            raise ValueError(f"n must be 2 or 3, got {self.n}")
        if self.modes_per_axis < 8 or self.modes_per_axis % 2:
            raise ValueError("modes_per_axis must be an even integer >= 8")
        if not self.T > 0:
            raise ValueError("T must be positive")
        if self.time_steps < 1:
            raise ValueError("time_steps must be positive")
        if not 0 < self.dealias_fraction <= 1:
            raise ValueError("dealias_fraction must lie in (0, 1]")

    # -- geometry ---------------------------------------------------------
    @property
    def dt(self) -> float:
        return self.T / self.time_steps

    @property
    def nt(self) -> int:
        return self.time_steps + 1

    @property
    def spatial_shape(self) -> tuple[int, ...]:
        return (self.modes_per_axis,) * self.n

    @property
    def dx(self) -> float:
        return 2 * math.pi / self.modes_per_axis

    @property
    def cell_volume(self) -> float:
        return self.dx**self.n

    @property
    def torus_volume(self) -> float:
        return (2 * math.pi) ** self.n

    @cached_property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.nt)

    @cached_property
    def coords(self) -> tuple[np.ndarray, ...]:
        x = self.dx * np.arange(self.modes_per_axis)
        return tuple(np.meshgrid(*([x] * self.n), indexing="ij"))

    @cached_property
    def wavenumbers(self) -> tuple[np.ndarray, ...]:
        k = np.fft.fftfreq(self.modes_per_axis, d=1.0 / self.modes_per_axis)
        return tuple(np.meshgrid(*([k] * self.n), indexing="ij"))

    @cached_property
    def k_squared(self) -> np.ndarray:
        return sum(k**2 for k in self.wavenumbers)

    @cached_property
    def dealias_mask(self) -> np.ndarray:
        kmax = self.dealias_fraction * self.modes_per_axis / 2
        mask = np.ones(self.spatial_shape, dtype=bool)
        for k in self.wavenumbers:
            mask &= (np.abs(k) <= kmax) & (np.abs(k) < self.modes_per_axis / 2)
        return mask

    @property
    def time_weights(self) -> np.ndarray:
        w = np.full(self.nt, self.dt)
        w[0] = w[-1] = self.dt / 2
        return w

    def truncated(self, steps: int) -> "GridSpec":
        """Grid on [0, steps*dt] with the same spacing."""
        if not 1 <= steps <= self.time_steps:
            raise ValueError(f"cannot truncate {self.time_steps} steps to {steps}")
        return GridSpec(self.n, self.modes_per_axis, steps * self.dt, steps, self.dealias_fraction)

    def steps_until(self, t: float) -> int:
        return int(math.floor(t / self.dt + 1e-9))

    def to_dict(self) -> dict:
        return {
            "n": self.n,
            "modes_per_axis": self.modes_per_axis,
            "T": self.T,
            "time_steps": self.time_steps,
            "dealias_fraction": self.dealias_fraction,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GridSpec":
        return cls(**d)


def component_shape(kind: str, n: int) -> tuple[int, ...]:
    return {"scalar": (), "vector": (n,), "tensor": (n, n)}[kind]


@dataclass(frozen=True, eq=False)
class Field:
    grid: GridSpec
    kind: str
    values: np.ndarray
    name: str = ""
    units: str = ""
    traceless: bool = False

    def __post_init__(self):
        if self.kind not in KINDS:
            raise ValueError(f"unknown field kind {self.kind!r}")
        expected = component_shape(self.kind, self.grid.n) + (self.grid.nt,) + self.grid.spatial_shape
        vals = np.asarray(self.values, dtype=float)
        if vals.shape != expected:
            raise DimensionMismatch(f"{self.kind} field expects shape {expected}, got {vals.shape}")
        if self.kind == "tensor":
            vals = 0.5 * (vals + np.swapaxes(vals, 0, 1))
        vals.setflags(write=False)
        object.__setattr__(self, "values", vals)
        if self.traceless:
            tr = np.trace(vals, axis1=0, axis2=1)
            scale = max(np.abs(vals).max(), 1.0)
            if np.abs(tr).max() > DEFAULT_TOLERANCES.traceless * scale:
                raise ValueError("traceless flag set but trace is not negligible")

    def like(self, values, name: str | None = None, kind: str | None = None, grid: GridSpec | None = None) -> "Field":
        return Field(grid or self.grid, kind or self.kind, values, name if name is not None else self.name, self.units)

    def slice_times(self, steps: int) -> "Field":
        """Restrict to the first ``steps + 1`` time samples."""
        g = self.grid.truncated(steps)
        ncomp = len(component_shape(self.kind, self.grid.n))
        idx = (slice(None),) * ncomp + (slice(0, steps + 1),)
        return Field(g, self.kind, self.values[idx], self.name, self.units)

    def __add__(self, other):
        return self.like(self.values + _vals(other))

    def __sub__(self, other):
        return self.like(self.values - _vals(other))

    def __mul__(self, c):
        return self.like(self.values * _vals(c))

    __rmul__ = __mul__

    def __neg__(self):
        return self.like(-self.values)


def _vals(x):
    return x.values if isinstance(x, Field) else x


def scalar(grid: GridSpec, values, name="", units="") -> Field:
    return Field(grid, "scalar", values, name, units)


def vector(grid: GridSpec, values, name="", units="") -> Field:
    return Field(grid, "vector", values, name, units)


def tensor(grid: GridSpec, values, name="", units="", traceless=False) -> Field:
    return Field(grid, "tensor", values, name, units, traceless)


def constant(grid: GridSpec, kind: str, value, name="") -> Field:
    value = np.asarray(value, dtype=float)
    shape = component_shape(kind, grid.n) + (grid.nt,) + grid.spatial_shape
    expand = value.reshape(value.shape + (1,) * (1 + grid.n))
    return Field(grid, kind, np.broadcast_to(expand, shape).copy(), name)


def identity_tensor(n: int, point_shape: tuple[int, ...]) -> np.ndarray:
    return np.eye(n).reshape((n, n) + (1,) * len(point_shape)) * np.ones(point_shape)


# ---------------------------------------------------------------------------
# array-level spectral kernels (last n axes are spatial)
# ---------------------------------------------------------------------------

def _axes(n: int) -> tuple[int, ...]:
    return tuple(range(-n, 0))


def fft(a: np.ndarray, n: int) -> np.ndarray:
    return np.fft.fftn(a, axes=_axes(n))


def ifft(a: np.ndarray, n: int) -> np.ndarray:
    return np.fft.ifftn(a, axes=_axes(n)).real


def grad_array(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    fh = fft(f, grid.n) * grid.dealias_mask
    return np.stack([ifft(1j * k * fh, grid.n) for k in grid.wavenumbers])


def div_array(v: np.ndarray, grid: GridSpec) -> np.ndarray:
    out = 0
    for j, k in enumerate(grid.wavenumbers):
        out = out + 1j * k * fft(v[j], grid.n)
    return ifft(out * grid.dealias_mask, grid.n)


def div_tensor_array(S: np.ndarray, grid: GridSpec) -> np.ndarray:
    return np.stack([div_array(S[i], grid) for i in range(grid.n)])


def laplacian_array(f: np.ndarray, grid: GridSpec) -> np.ndarray:
    return ifft(-grid.k_squared * grid.dealias_mask * fft(f, grid.n), grid.n)


def spatial_mean(f: np.ndarray, n: int) -> np.ndarray:
    return f.mean(axis=_axes(n))


def inv_laplacian_array(f: np.ndarray, grid: GridSpec, tol: Tolerances = DEFAULT_TOLERANCES) -> np.ndarray:
    """Mean-zero solution g of -Lap g = f; raises MeanNotZero if f is not mean-zero."""
    mean = spatial_mean(f, grid.n)
    bound = tol.mean_rel * float(np.abs(f).max(initial=0.0)) + tol.mean_abs
    if np.abs(mean).max(initial=0.0) > bound:
        raise MeanNotZero(f"spatial mean {np.abs(mean).max():.3e} exceeds {bound:.3e}")
    k2 = grid.k_squared
    inv = np.zeros_like(k2)
    nz = k2 > 0
    inv[nz] = 1.0 / k2[nz]
    return ifft(inv * grid.dealias_mask * fft(f, grid.n), grid.n)


# ---------------------------------------------------------------------------
# field-level operations
# ---------------------------------------------------------------------------

def gradient(f: Field) -> Field:
    if f.kind != "scalar":
        raise DimensionMismatch("gradient expects a scalar field")
    return Field(f.grid, "vector", grad_array(f.values, f.grid), f"grad {f.name}")


def divergence(v: Field) -> Field:
    if v.kind != "vector":
        raise DimensionMismatch("divergence expects a vector field")
    return Field(v.grid, "scalar", div_array(v.values, v.grid), f"div {v.name}")


def divergence_tensor(S: Field) -> Field:
    if S.kind != "tensor":
        raise DimensionMismatch("divergence_tensor expects a tensor field")
    return Field(S.grid, "vector", div_tensor_array(S.values, S.grid), f"div {S.name}")


def laplacian(f: Field) -> Field:
    return f.like(_componentwise(f, lambda a: laplacian_array(a, f.grid)))


def inv_laplacian_mean_zero(f: Field, tol: Tolerances = DEFAULT_TOLERANCES) -> Field:
    if f.kind != "scalar":
        raise DimensionMismatch("inv_laplacian_mean_zero expects a scalar field")
    return f.like(inv_laplacian_array(f.values, f.grid, tol))


def _componentwise(f: Field, op) -> np.ndarray:
    return op(f.values)


def perp_gradient_array(psi: np.ndarray, grid: GridSpec) -> np.ndarray:
    """(-d2 psi, d1 psi) in 2D."""
    if grid.n != 2:
        raise DimensionMismatch("perpendicular gradient is 2D only")
    g = grad_array(psi, grid)
    return np.stack([-g[1], g[0]])


def curl_array(a: np.ndarray, grid: GridSpec) -> np.ndarray:
    if grid.n != 3:
        raise DimensionMismatch("curl is 3D only")
    g = [grad_array(a[i], grid) for i in range(3)]
    return np.stack([g[2][1] - g[1][2], g[0][2] - g[2][0], g[1][0] - g[0][1]])


# ---------------------------------------------------------------------------
# time differences
# ---------------------------------------------------------------------------

@lru_cache(maxsize=256)
def fd_weights(offsets: tuple[int, ...], order: int) -> np.ndarray:
    """Weights c_s with sum_s c_s f(s) ~ f^(order)(0) on unit spacing."""
    s = np.asarray(offsets, dtype=float)
    p = len(s)
    A = np.vander(s, p, increasing=True).T
    rhs = np.zeros(p)
    rhs[order] = math.factorial(order)
    return np.linalg.solve(A, rhs)


def time_stencils(nt: int, order: int, accuracy: int = 4) -> list[tuple[np.ndarray, np.ndarray]]:
    """Per-slice (indices, weights): centered in the interior, shifted near the ends."""
    central = 2 * ((order + 1) // 2) - 1 + accuracy
    onesided = order + accuracy
    out = []
    for j in range(nt):
        half = central // 2
        if j - half >= 0 and j + half <= nt - 1:
            idx = np.arange(j - half, j + half + 1)
        else:
            width = min(onesided, nt)
            start = min(max(j - width // 2, 0), nt - width)
            idx = np.arange(start, start + width)
        out.append((idx, fd_weights(tuple(int(i - j) for i in idx), order)))
    return out


def time_derivative_array(a: np.ndarray, grid: GridSpec, order: int = 1, accuracy: int = 4, time_axis: int | None = None) -> np.ndarray:
    if order not in (1, 2):
        raise ValueError("order must be 1 or 2")
    ax = time_axis if time_axis is not None else a.ndim - grid.n - 1
    nt = a.shape[ax]
    if nt < 5:
        raise TooFewSlices(f"time derivative needs at least 5 slices, got {nt}")
    moved = np.moveaxis(a, ax, 0)
    out = np.empty_like(moved)
    scale = grid.dt**order
    for j, (idx, w) in enumerate(time_stencils(nt, order, accuracy)):
        out[j] = np.tensordot(w, moved[idx], axes=(0, 0)) / scale
    return np.moveaxis(out, 0, ax)


def time_derivative(f: Field, order: int = 1, accuracy: int | None = None) -> Field:
    acc = accuracy or DEFAULT_TOLERANCES.fd_order
    return f.like(time_derivative_array(f.values, f.grid, order, acc), f"d{order}t {f.name}")


# ---------------------------------------------------------------------------
# mollification
# ---------------------------------------------------------------------------

def _bump(s):
    s = np.asarray(s, dtype=float)
    out = np.zeros_like(s)
    inside = np.abs(s) < 1
    out[inside] = np.exp(-1.0 / (1.0 - s[inside] ** 2))
    return out


@lru_cache(maxsize=1)
def _bump_mass() -> float:
    val, _ = integrate.quad(lambda s: float(_bump(s)), -1, 1, epsabs=1e-14, epsrel=1e-12, limit=200)
    return val


def bump_profile(s):
    """Unit-mass C-infinity bump on [-1, 1]."""
    return _bump(s) / _bump_mass()


@lru_cache(maxsize=4096)
def bump_symbol(xi: float) -> float:
    """Fourier symbol of the unit bump: integral of b(s) cos(xi s)."""
    if xi == 0:
        return 1.0
    val, _ = integrate.quad(lambda s: float(bump_profile(s)) * math.cos(xi * s), -1, 1,
                            epsabs=1e-14, epsrel=1e-11, limit=400)
    return val


@dataclass(frozen=True)
class Mollifier:
    """Tensor-product bump of scale alpha; the time factor lives on [-alpha, 0]."""

    alpha: float

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")

    def time_profile(self, s):
        """Unit-mass density on [-1, 0] (before scaling)."""
        return 2.0 * bump_profile(2.0 * np.asarray(s, dtype=float) + 1.0)

    def space_profile(self, y):
        """Unit-mass density on [-1, 1] per axis (before scaling)."""
        return bump_profile(y)

    def spatial_symbol(self, grid: GridSpec) -> np.ndarray:
        sym = np.ones(grid.spatial_shape)
        for k in grid.wavenumbers:
            table = {kk: bump_symbol(abs(kk) * self.alpha) for kk in np.unique(np.abs(k))}
            sym = sym * np.vectorize(lambda kk: table[abs(kk)])(k)
        return sym

    def time_weights(self, grid: GridSpec) -> tuple[int, np.ndarray]:
        """Offsets m >= 0 and normalized weights for samples t_j + m*dt in [t_j, t_j + alpha]."""
        m = np.arange(0, int(math.floor(self.alpha / grid.dt + 1e-9)) + 1)
        w = self.time_profile(-m * grid.dt / self.alpha)
        total = w.sum()
        if total <= 0:
            raise AlphaTooLarge("mollifier window contains no interior samples")
        return m, w / total


def mollify_array(a: np.ndarray, grid: GridSpec, moll: Mollifier) -> tuple[np.ndarray, GridSpec]:
    if moll.alpha > grid.T:
        raise AlphaTooLarge(f"alpha={moll.alpha} exceeds T={grid.T}")
    if moll.alpha < 2 * grid.dt * (1 - 1e-9):
        raise AlphaTooLarge(f"alpha={moll.alpha} is below two time steps ({2 * grid.dt})")
    offsets, w = moll.time_weights(grid)
    steps = grid.steps_until(grid.T - moll.alpha)
    out_grid = grid.truncated(max(steps, 1))
    tax = a.ndim - grid.n - 1
    moved = np.moveaxis(a, tax, 0)
    acc = np.zeros((out_grid.nt,) + moved.shape[1:])
    for m, wm in zip(offsets, w):
        acc += wm * moved[m:m + out_grid.nt]
    sym = moll.spatial_symbol(grid)
    acc = ifft(fft(acc, grid.n) * sym, grid.n)
    return np.moveaxis(acc, 0, tax), out_grid


def mollify(f: Field, m: Mollifier) -> Field:
    vals, g = mollify_array(f.values, f.grid, m)
    return Field(g, f.kind, vals, f"moll {f.name}", f.units)


# ---------------------------------------------------------------------------
# norms
# ---------------------------------------------------------------------------

def pointwise_magnitude(values: np.ndarray, kind: str, matrix_norm: str = "spectral") -> np.ndarray:
    if kind == "scalar":
        return np.abs(values)
    if kind == "vector":
        return np.sqrt((values**2).sum(axis=0))
    if matrix_norm == "frobenius":
        return np.sqrt((values**2).sum(axis=(0, 1)))
    ev = sym_eigvals(values)
    if matrix_norm == "nuclear":
        return np.abs(ev).sum(axis=0)
    return np.abs(ev).max(axis=0)


def oversample_array(a: np.ndarray, n: int, factor: int) -> np.ndarray:
    """Trigonometric interpolation onto a grid refined by ``factor`` per axis."""
    if factor == 1:
        return a
    N = a.shape[-1]
    M = N * factor
    ah = np.fft.fftshift(fft(a, n), axes=_axes(n))
    pad = [(0, 0)] * (a.ndim - n) + [((M - N) // 2, (M - N) - (M - N) // 2)] * n
    big = np.pad(ah, pad)
    big = np.fft.ifftshift(big, axes=_axes(n))
    return np.fft.ifftn(big, axes=_axes(n)).real * factor**n


def norm(f: Field, kind: str, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    """Space-time norm: trapezoid in time, collocation in space.

    Tensors use the pointwise spectral norm for Linf/C0, Frobenius for L2 and
    the nuclear norm (the trace on positive semidefinite data) for L1.
    """
    g = f.grid
    kind = kind.upper()
    if kind in ("LINF", "C0"):
        return float(pointwise_magnitude(f.values, f.kind).max(initial=0.0))
    if kind == "L2":
        mag2 = pointwise_magnitude(f.values, f.kind, "frobenius") ** 2
        per_t = mag2.sum(axis=_axes(g.n)) * g.cell_volume
        return float(math.sqrt(np.dot(g.time_weights, per_t)))
    if kind == "L1":
        ncomp = len(component_shape(f.kind, g.n))
        factor = tol.l1_oversample
        per_t = np.empty(g.nt)
        for j in range(g.nt):
            sl = f.values[(slice(None),) * ncomp + (j,)]
            fine = oversample_array(sl, g.n, factor)
            mag = pointwise_magnitude(fine, f.kind, "nuclear")
            per_t[j] = mag.sum() * (g.dx / factor) ** g.n
        return float(np.dot(g.time_weights, per_t))
    raise ValueError(f"unknown norm kind {kind!r}")


def norms(f: Field, kind: str, tol: Tolerances = DEFAULT_TOLERANCES) -> float:
    return norm(f, kind, tol)


def space_time_integral(a: np.ndarray, grid: GridSpec, time_weights: np.ndarray | None = None) -> float:
    """Integral of a scalar array of shape (nt, *spatial)."""
    w = grid.time_weights if time_weights is None else time_weights
    return float(np.dot(w, a.sum(axis=_axes(grid.n))) * grid.cell_volume)


# ---------------------------------------------------------------------------
# binary container
# ---------------------------------------------------------------------------

def _packed_indices(kind: str, n: int) -> list[tuple[int, ...]]:
    if kind == "scalar":
        return [()]
    if kind == "vector":
        return [(i,) for i in range(n)]
    return [(i, j) for i in range(n) for j in range(i, n)]


def write_field(f: Field, fh: BinaryIO) -> None:
    """JSON header line, then little-endian float64 payload in (t, space..., component) order."""
    comps = _packed_indices(f.kind, f.grid.n)
    header = {
        "format": "machlab-field/1",
        "grid": f.grid.to_dict(),
        "kind": f.kind,
        "name": f.name,
        "units": f.units,
        "traceless": f.traceless,
        "components": [list(c) for c in comps],
        "order": "time-major, row-major spatial, component-minor",
    }
    fh.write((json.dumps(header, sort_keys=True) + "\n").encode("utf-8"))
    stacked = np.stack([f.values[c] for c in comps], axis=-1)
    fh.write(np.ascontiguousarray(stacked, dtype="<f8").tobytes())


def read_field(fh: BinaryIO) -> Field:
    header = json.loads(fh.readline().decode("utf-8"))
    grid = GridSpec.from_dict(header["grid"])
    kind = header["kind"]
    comps = [tuple(c) for c in header["components"]]
    shape = (grid.nt,) + grid.spatial_shape + (len(comps),)
    raw = np.frombuffer(fh.read(), dtype="<f8")
    if raw.size != math.prod(shape):
        raise DimensionMismatch(f"payload has {raw.size} values, header implies {math.prod(shape)}")
    data = raw.reshape(shape)
    values = np.zeros(component_shape(kind, grid.n) + (grid.nt,) + grid.spatial_shape)
    for p, c in enumerate(comps):
        values[c] = data[..., p]
        if kind == "tensor":
            values[c[::-1]] = data[..., p]
    return Field(grid, kind, values, header.get("name", ""), header.get("units", ""), header.get("traceless", False))


def save_field(f: Field, path) -> None:
    with open(path, "wb") as fh:
        write_field(f, fh)


def load_field(path) -> Field:
    with open(path, "rb") as fh:
        return read_field(fh)
