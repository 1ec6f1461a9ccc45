"""Pointwise eigenvalues of symmetric 2x2 and 3x3 matrix fields.

Matrices are stored with the two component axes first: shape (n, n, *points).
"""

from __future__ import annotations

import numpy as np

DEGENERATE_REL = 1e-12


def sym_eigvals(A: np.ndarray) -> np.ndarray:
    """Ascending eigenvalues, shape (n, *points)."""
    n = A.shape[0]
    if A.shape[1] != n:
        raise ValueError("expected square component axes")
    if n == 1:
        return A[0].copy()
    if n == 2:
        return _eig2(A)
    if n == 3:
        return _eig3(A)
    return np.moveaxis(np.linalg.eigvalsh(np.moveaxis(np.moveaxis(A, 0, -1), 0, -1)), -1, 0)


def lambda_min(A: np.ndarray) -> np.ndarray:
    return sym_eigvals(A)[0]


def lambda_max(A: np.ndarray) -> np.ndarray:
    return sym_eigvals(A)[-1]


def _eig2(A):
    a, b, d = A[0, 0], 0.5 * (A[0, 1] + A[1, 0]), A[1, 1]
    mid = 0.5 * (a + d)
    rad = np.hypot(0.5 * (a - d), b)
    return np.stack([mid - rad, mid + rad])


def _eig3(A):
    # trigonometric closed form; near-isotropic points go through LAPACK
    S = 0.5 * (A + np.swapaxes(A, 0, 1))
    q = (S[0, 0] + S[1, 1] + S[2, 2]) / 3.0
    off = S[0, 1] ** 2 + S[0, 2] ** 2 + S[1, 2] ** 2
    p2 = (S[0, 0] - q) ** 2 + (S[1, 1] - q) ** 2 + (S[2, 2] - q) ** 2 + 2 * off
    p = np.sqrt(p2 / 6.0)
    scale = np.maximum(np.abs(S).max(axis=(0, 1)), np.finfo(float).tiny)
    degenerate = p <= DEGENERATE_REL * scale
    psafe = np.where(degenerate, 1.0, p)
    B = (S - q * np.eye(3).reshape(3, 3, *([1] * q.ndim))) / psafe
    detB = (B[0, 0] * (B[1, 1] * B[2, 2] - B[1, 2] * B[2, 1])
            - B[0, 1] * (B[1, 0] * B[2, 2] - B[1, 2] * B[2, 0])
            + B[0, 2] * (B[1, 0] * B[2, 1] - B[1, 1] * B[2, 0]))
    r = np.clip(detB / 2.0, -1.0, 1.0)
    phi = np.arccos(r) / 3.0
    e_max = q + 2 * p * np.cos(phi)
    e_min = q + 2 * p * np.cos(phi + 2 * np.pi / 3)
    e_mid = 3 * q - e_max - e_min
    out = np.stack([e_min, e_mid, e_max])
    if np.any(degenerate):
        pts = np.moveaxis(np.moveaxis(S[:, :, degenerate], 0, -1), 0, -1)
        out[:, degenerate] = np.linalg.eigvalsh(pts).T
    return out


def sym_eigh(A: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Eigenvalues (ascending) and eigenvectors of a single small symmetric matrix."""
    return np.linalg.eigh(0.5 * (A + A.T))
