"""Linear quadric fits to oriented points.

Two formulations align the quadric gradient with the measured normals:

* the *full* fit keeps one unknown scale per normal, ``∇Q(xᵢ) = αᵢ nᵢ``,
  and takes the null vector of a (4N)×(N+10) homogeneous system;
* the *approximate* fit ties every scale to one, ``∇Q(xᵢ) = nᵢ``, giving an
  inhomogeneous (4N)×10 least-squares problem.

Taubin's gradient-normalized fit is kept as a baseline, and a five-unknown
sphere system serves the sphere-specific detector.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import ArrayLike, NDArray

from . import quadric
from .errors import DegenerateConfiguration, ImaginaryRadius

NORMAL_TOL = 1e-6
APPROX_RTOL = 1e-9
FULL_GAP_RTOL = 1e-6
INVERSE_ITERATIONS = 100


@dataclass(frozen=True)
class FullSystem:
    matrix: NDArray[np.float64]  # (4N, N + 10)
    n_points: int


@dataclass(frozen=True)
class ApproxSystem:
    A: NDArray[np.float64]  # (4N, 10), or (4N, 5) for spheres
    b: NDArray[np.float64]  # (4N,)
    omega: float


@dataclass(frozen=True)
class FitResult:
    q: NDArray[np.float64]
    residual: float
    scales: NDArray[np.float64] | None = None


@dataclass(frozen=True)
class SphereFit:
    center: NDArray[np.float64]
    radius: float
    residual: float
    q: NDArray[np.float64]  # 10-coefficient form, unit norm, outward gradient


def _points(x: ArrayLike) -> NDArray[np.float64]:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != 3:
        raise ValueError(f"expected (N, 3) positions, got shape {x.shape}")
    return x


def _oriented(points: ArrayLike, normals: ArrayLike):
    x = _points(points)
    n = _points(normals)
    if x.shape != n.shape:
        raise ValueError("points and normals differ in shape")
    if x.shape[0] == 0:
        raise ValueError("at least one oriented point is required")
    err = np.abs(np.linalg.norm(n, axis=1) - 1.0)
    if err.max() > NORMAL_TOL:
        raise ValueError(f"normals must be unit length (max deviation {err.max():.2e})")
    return x, n


def incidence_rows(points: ArrayLike) -> NDArray[np.float64]:
    """Monomial rows v(x)ᵀ with the factor-2 cross and linear terms."""
    x, y, z = _points(points).T
    one = np.ones_like(x)
    return np.column_stack(
        [x * x, y * y, z * z, 2 * x * y, 2 * x * z, 2 * y * z, 2 * x, 2 * y, 2 * z, one]
    )


def gradient_rows(points: ArrayLike) -> NDArray[np.float64]:
    """Jacobian of v(x) w.r.t. (x, y, z), shape (N, 3, 10)."""
    x, y, z = _points(points).T
    zero = np.zeros_like(x)
    two = np.full_like(x, 2.0)
    gx = [2 * x, zero, zero, 2 * y, 2 * z, zero, two, zero, zero, zero]
    gy = [zero, 2 * y, zero, 2 * x, zero, 2 * z, zero, two, zero, zero]
    gz = [zero, zero, 2 * z, zero, 2 * x, 2 * y, zero, zero, two, zero]
    return np.stack([np.stack(gx, -1), np.stack(gy, -1), np.stack(gz, -1)], axis=1)


def build_full_system(points: ArrayLike, normals: ArrayLike, omega: float = 1.0) -> FullSystem:
    x, n = _oriented(points, normals)
    N = len(x)
    A = np.zeros((4 * N, N + 10))
    A[:N, :10] = incidence_rows(x)
    grad = gradient_rows(x)
    for i in range(N):
        rows = slice(N + 3 * i, N + 3 * i + 3)
        A[rows, :10] = omega * grad[i]
        A[rows, 10 + i] = -omega * n[i]
    return FullSystem(A, N)


def fit_full(points: ArrayLike, normals: ArrayLike, omega: float = 1.0) -> FitResult:
    """Least-squares null vector of the full system, with free per-point scales.

    Each scale touches only its own three rows. Rotating those rows so one
    of them is aligned with the normal gives, with unknowns ordered (scales, q),
    the exact triangular factor R = [[D, H], [0, R_C]], where D is diagonal,
    H holds the normal-aligned gradient rows and R_C comes from the SVD of C
    (incidence rows plus the tangential gradient rows). Inverse iteration with
    R then finds the smallest singular pair without forming the Gram matrix.
    """
    x, n = _oriented(points, normals)
    N = len(x)
    if N < 4:
        raise DegenerateConfiguration(f"the full fit needs at least 4 points, got {N}")
    r = np.linalg.norm(n, axis=1)
    if (r == 0).any():
        raise ValueError("normals must be non-zero")
    nh = n / r[:, None]
    G = omega * gradient_rows(x)
    H = np.einsum("nk,nki->ni", nh, G)
    tangential = G - nh[:, :, None] * H[:, None, :]
    C = np.concatenate([incidence_rows(x), tangential.reshape(-1, 10)])
    D = -omega * r
    _, sc, Vt = np.linalg.svd(C, full_matrices=False)
    if sc[-2] - sc[-1] <= FULL_GAP_RTOL * sc[0]:
        raise DegenerateConfiguration("two smallest singular values coincide; solution not unique")
    V = Vt.T
    sig = np.maximum(sc, np.finfo(float).eps * sc[0])

    def solve_gram(vs, vq):
        # RᵀR x = v by two block-triangular solves, R_C = diag(sig) Vᵀ
        ys = vs / D
        yq = (V.T @ (vq - H.T @ ys)) / sig
        xq = V @ (yq / sig)
        return (ys - H @ xq) / D, xq

    q = V[:, -1]
    s = -(H @ q) / D
    for _ in range(INVERSE_ITERATIONS):
        xs, xq = solve_gram(s, q)
        norm = np.sqrt(xs @ xs + xq @ xq)
        xs, xq = xs / norm, xq / norm
        if xq @ q < 0:
            xs, xq = -xs, -xq
        done = np.abs(xq - q).max() <= 1e-15 and np.abs(xs - s).max() <= 1e-15
        s, q = xs, xq
        if done:
            break
    norm = np.sqrt(s @ s + q @ q)
    s, q = s / norm, q / norm
    resid = np.concatenate([D * s + H @ q, sc * (Vt @ q)])
    qn = quadric.normalize(q)
    factor = np.sign(qn @ q) / np.linalg.norm(q)
    return FitResult(qn, float(np.linalg.norm(resid) / np.sqrt(4 * N)), s * factor)


def build_approx_system(points: ArrayLike, normals: ArrayLike, omega: float = 1.0) -> ApproxSystem:
    x, n = _oriented(points, normals)
    N = len(x)
    A = np.empty((4 * N, 10))
    A[:N] = incidence_rows(x)
    A[N:] = omega * gradient_rows(x).reshape(3 * N, 10)
    b = np.concatenate([np.zeros(N), omega * n.ravel()])
    return ApproxSystem(A, b, float(omega))


def solve_approx(system: ApproxSystem) -> NDArray[np.float64]:
    """Raw least-squares solution of A q = b (not normalized)."""
    U, s, Vt = np.linalg.svd(system.A, full_matrices=False)
    if s[-1] <= APPROX_RTOL * s[0]:
        raise DegenerateConfiguration(
            f"system is rank deficient (rank {int(np.count_nonzero(s > APPROX_RTOL * s[0]))})"
        )
    return Vt.T @ ((U.T @ system.b) / s)


def fit_approx(points: ArrayLike, normals: ArrayLike, omega: float = 1.0) -> FitResult:
    system = build_approx_system(points, normals, omega)
    q = solve_approx(system)
    residual = np.linalg.norm(system.A @ q - system.b) / np.sqrt(len(system.b))
    return FitResult(quadric.normalize(q), float(residual))


def fit_taubin(points: ArrayLike) -> FitResult:
    """Minimize Σ f(xᵢ)² subject to Σ ‖∇f(xᵢ)‖² = 1.

    The constant term never enters the gradient, so it is eliminated in
    closed form first; the remaining 9×9 pencil is then symmetric-definite.
    """
    x = _points(points)
    N = len(x)
    if N < 9:
        raise DegenerateConfiguration(f"Taubin's fit needs at least 9 points, got {N}")
    M = incidence_rows(x)[:, :9]
    mean = M.mean(axis=0)
    Mc = M - mean
    G = gradient_rows(x)[:, :, :9].reshape(3 * N, 9)
    try:
        w, V = scipy.linalg.eigh(Mc.T @ Mc, G.T @ G)
    except np.linalg.LinAlgError as exc:
        raise DegenerateConfiguration("singular gradient pencil") from exc
    q9 = V[:, 0]
    q = np.append(q9, -mean @ q9)
    residual = np.linalg.norm(incidence_rows(x) @ q) / np.linalg.norm(G @ q9)
    return FitResult(quadric.normalize(q), float(residual))


def build_sphere_system(points: ArrayLike, normals: ArrayLike, omega: float = 1.0) -> ApproxSystem:
    """Five-unknown system for A‖x‖² + 2Bx + 2Cy + 2Dz + E = 0.

    Gradient rows are the exact derivative of the incidence row,
    ∇ = 2A x + 2(B, C, D), i.e. the block (2x, 2I₃, 0).
    """
    x, n = _oriented(points, normals)
    N = len(x)
    A = np.zeros((4 * N, 5))
    A[:N, 0] = np.einsum("ij,ij->i", x, x)
    A[:N, 1:4] = 2 * x
    A[:N, 4] = 1.0
    grad = np.zeros((N, 3, 5))
    grad[:, :, 0] = 2 * x
    grad[:, :, 1:4] = 2 * np.eye(3)
    A[N:] = omega * grad.reshape(3 * N, 5)
    b = np.concatenate([np.zeros(N), omega * n.ravel()])
    return ApproxSystem(A, b, float(omega))


def sphere_from_coeffs(q5: ArrayLike) -> tuple[NDArray[np.float64], float]:
    q5 = np.asarray(q5, dtype=np.float64)
    a = q5[0]
    if a == 0.0:
        raise ValueError("leading coefficient is zero; not a sphere")
    c = -q5[1:4] / a
    r2 = c @ c - q5[4] / a
    if r2 < 0.0:
        raise ImaginaryRadius(f"squared radius {r2:.3g} is negative")
    return c, float(np.sqrt(r2))


def sphere_to_coeffs(q5: ArrayLike) -> NDArray[np.float64]:
    """Lift (A, B, C, D, E) to the 10-coefficient layout."""
    a, b, c, d, e = np.asarray(q5, dtype=np.float64)
    return np.array([a, a, a, 0.0, 0.0, 0.0, b, c, d, e])


def fit_sphere(points: ArrayLike, normals: ArrayLike, omega: float = 1.0) -> SphereFit:
    system = build_sphere_system(points, normals, omega)
    U, s, Vt = np.linalg.svd(system.A, full_matrices=False)
    if len(s) < 5 or s[-1] <= APPROX_RTOL * s[0]:
        raise DegenerateConfiguration("sphere system is rank deficient; need two oriented points")
    q5 = Vt.T @ ((U.T @ system.b) / s)
    c, r = sphere_from_coeffs(q5)
    residual = np.linalg.norm(system.A @ q5 - system.b) / np.sqrt(len(system.b))
    return SphereFit(c, r, float(residual), quadric.unit(sphere_to_coeffs(q5)))
