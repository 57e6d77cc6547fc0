"""Quadric algebra: coefficient/matrix forms, evaluation, polar geometry.

Coefficients are stored plainly as ``q = (A, B, C, D, E, F, G, H, I, J)`` for

    f(x, y, z) = Ax² + By² + Cz² + 2Dxy + 2Exz + 2Fyz + 2Gx + 2Hy + 2Iz + J

so the symmetric 4×4 matrix is a pure re-arrangement of ``q``. The factor-2
monomials live in the system builders of :mod:`quadricvote.fitting`.
"""

from __future__ import annotations

import enum
from typing import NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .errors import NoPolar, NotCentral

# (row, col) of each coefficient inside the 4x4 matrix
_MATRIX_INDEX = (
    (0, 0), (1, 1), (2, 2), (0, 1), (0, 2), (1, 2), (0, 3), (1, 3), (2, 3), (3, 3),
)

CLASSIFY_RTOL = 1e-7
CENTER_RTOL = 1e-9
POLAR_RTOL = 1e-12


class OrientedPoint(NamedTuple):
    x: NDArray[np.float64]
    n: NDArray[np.float64]


class QuadricClass(str, enum.Enum):
    PLANE = "plane"
    PLANE_PAIR = "plane_pair"
    CENTRAL = "central"
    NON_CENTRAL = "non_central_degenerate"
    OTHER = "other"


def to_matrix(q: ArrayLike) -> NDArray[np.float64]:
    q = np.asarray(q, dtype=np.float64)
    if q.shape != (10,):
        raise ValueError(f"expected 10 coefficients, got shape {q.shape}")
    Q = np.empty((4, 4))
    for k, (i, j) in enumerate(_MATRIX_INDEX):
        Q[i, j] = Q[j, i] = q[k]
    return Q


def to_coeffs(Q: ArrayLike) -> NDArray[np.float64]:
    """Inverse of :func:`to_matrix`; a non-symmetric input is symmetrized."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape != (4, 4):
        raise ValueError(f"expected a 4x4 matrix, got shape {Q.shape}")
    if not np.array_equal(Q, Q.T):
        Q = 0.5 * (Q + Q.T)
    return np.array([Q[i, j] for i, j in _MATRIX_INDEX])


def as_matrix(Q: ArrayLike) -> NDArray[np.float64]:
    """Accept either a 10-vector or a 4x4 matrix and return the matrix."""
    Q = np.asarray(Q, dtype=np.float64)
    if Q.shape == (10,):
        return to_matrix(Q)
    if Q.shape != (4, 4):
        raise ValueError(f"not a quadric: shape {Q.shape}")
    return Q


def normalize(q: ArrayLike) -> NDArray[np.float64]:
    """Unit Euclidean norm with the largest-magnitude entry made positive.

    Entries within a relative 1e-6 of the maximum magnitude count as tied and
    the first of them decides the sign, so near-symmetric quadrics (e.g. a unit
    sphere, where |A| = |J|) do not flip sign on rounding noise.
    """
    q = np.asarray(q, dtype=np.float64)
    if q.shape == (4, 4):
        q = to_coeffs(q)
    norm = np.linalg.norm(q)
    if norm == 0.0:
        raise ValueError("the zero vector is not a quadric")
    q = q / norm
    mag = np.abs(q)
    lead = int(np.flatnonzero(mag >= mag.max() * (1.0 - 1e-6))[0])
    return q if q[lead] > 0 else -q


def unit(q: ArrayLike) -> NDArray[np.float64]:
    """Unit norm, sign preserved (keeps the gradient orientation)."""
    q = np.asarray(q, dtype=np.float64)
    return q / np.linalg.norm(q)


def homogeneous(x: ArrayLike) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    return np.concatenate([x, np.ones(x.shape[:-1] + (1,))], axis=-1)


def algebraic_distance(Q: ArrayLike, x: ArrayLike) -> NDArray[np.float64] | float:
    """[xᵀ 1] Q [xᵀ 1]ᵀ for one point (3,) or a batch (N, 3)."""
    Q = as_matrix(Q)
    X = homogeneous(x)
    d = np.einsum("...i,ij,...j->...", X, Q, X)
    return float(d) if d.ndim == 0 else d


def gradient(Q: ArrayLike, x: ArrayLike) -> NDArray[np.float64]:
    """2 · Q[:3, :] · [xᵀ 1]ᵀ for one point or a batch."""
    Q = as_matrix(Q)
    return 2.0 * homogeneous(x) @ Q[:3, :].T


def polar_plane(Q: ArrayLike, p: ArrayLike) -> NDArray[np.float64]:
    Q = as_matrix(Q)
    p = np.asarray(p, dtype=np.float64)
    plane = Q @ p
    if np.linalg.norm(plane) < POLAR_RTOL * np.linalg.norm(Q, 2) * np.linalg.norm(p):
        raise NoPolar("Q p vanishes; the polar plane does not exist")
    return plane


def center(Q: ArrayLike) -> NDArray[np.float64]:
    Q = as_matrix(Q)
    M = Q[:3, :3]
    s = np.linalg.svd(M, compute_uv=False)
    if s[0] == 0.0 or s[-1] < CENTER_RTOL * s[0]:
        raise NotCentral("upper-left 3x3 block is singular")
    return np.linalg.solve(M, -Q[:3, 3])


def matrix_rank(M: ArrayLike, rtol: float) -> int:
    s = np.linalg.svd(np.asarray(M, dtype=np.float64), compute_uv=False)
    if s.size == 0 or s[0] == 0.0:
        return 0
    return int(np.count_nonzero(s > rtol * s[0]))


def classify(Q: ArrayLike) -> QuadricClass:
    """Coarse class from the rank of Q and the existence of a center.

    OTHER marks central quadrics with an empty real locus (imaginary
    ellipsoids); everything else follows the rank/center rule.
    """
    Q = as_matrix(Q)
    rank = matrix_rank(Q, CLASSIFY_RTOL)
    if rank <= 1:
        return QuadricClass.PLANE
    if rank == 2:
        return QuadricClass.PLANE_PAIR
    try:
        c = center(Q)
    except NotCentral:
        return QuadricClass.NON_CENTRAL
    # translated constant term: f(c) = Q[3] . [c 1]
    k = float(Q[3, :3] @ c + Q[3, 3])
    eig = np.linalg.eigvalsh(Q[:3, :3])
    scale = np.abs(eig).max()
    definite = np.all(eig > CENTER_RTOL * scale) or np.all(eig < -CENTER_RTOL * scale)
    if definite and np.sign(k) == np.sign(eig[0]) and abs(k) > CLASSIFY_RTOL * np.abs(Q).max():
        return QuadricClass.OTHER
    return QuadricClass.CENTRAL


def plane_pair(plane1: ArrayLike, plane2: ArrayLike) -> NDArray[np.float64]:
    """Π₁Π₂ᵀ + Π₂Π₁ᵀ; for Π₁ = Π₂ this is 2ΠΠᵀ, the doubled plane."""
    p1 = np.asarray(plane1, dtype=np.float64)
    p2 = np.asarray(plane2, dtype=np.float64)
    if not p1.any() or not p2.any():
        raise ValueError("planes must be nonzero 4-vectors")
    return np.outer(p1, p2) + np.outer(p2, p1)


def plane_quadric(plane: ArrayLike) -> NDArray[np.float64]:
    """Rank-1 quadric ΠΠᵀ."""
    p = np.asarray(plane, dtype=np.float64)
    return np.outer(p, p)


def plane_through(points: ArrayLike) -> NDArray[np.float64]:
    """Homogeneous plane through three points (unit normal part)."""
    P = np.asarray(points, dtype=np.float64)
    n = np.cross(P[1] - P[0], P[2] - P[0])
    n /= np.linalg.norm(n)
    return np.append(n, -n @ P[0])


def unit_sphere() -> NDArray[np.float64]:
    return np.array([1.0, 1.0, 1.0, 0, 0, 0, 0, 0, 0, -1.0])


def sphere_quadric(c: ArrayLike, r: float) -> NDArray[np.float64]:
    """Coefficients of ‖x − c‖² − r² = 0."""
    c = np.asarray(c, dtype=np.float64)
    return np.array([1.0, 1.0, 1.0, 0, 0, 0, -c[0], -c[1], -c[2], c @ c - r * r])


def transform(q: ArrayLike, T: ArrayLike) -> NDArray[np.float64]:
    """Pull a quadric back through a homogeneous map: Q ← Tᵀ Q T.

    If ``T`` maps frame-a points to frame-b points and ``q`` lives in frame b,
    the result describes the same surface in frame a.
    """
    T = np.asarray(T, dtype=np.float64)
    Q = as_matrix(q)
    return to_coeffs(T.T @ Q @ T)


def pole(Q: ArrayLike, plane: ArrayLike) -> NDArray[np.float64]:
    """Homogeneous pole P with Q P ∼ plane (requires a regular Q)."""
    Q = as_matrix(Q)
    return np.linalg.solve(Q, np.asarray(plane, dtype=np.float64))


def tangent_plane_intersection(Q: ArrayLike, points: ArrayLike) -> NDArray[np.float64]:
    """Common homogeneous point of the tangent planes at three surface points."""
    P = homogeneous(np.asarray(points, dtype=np.float64))
    planes = P @ as_matrix(Q)
    return np.linalg.svd(planes)[2][-1]


def dehomogenize(X: ArrayLike) -> NDArray[np.float64]:
    X = np.asarray(X, dtype=np.float64)
    return X[..., :3] / X[..., 3:]
