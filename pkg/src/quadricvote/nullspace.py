"""Null-space parameterization of under-determined fits and local voting.

A basis too small to pin down the quadric gives ``q = p + N_A λ`` with ``p``
the minimum-norm least-squares solution and ``N_A`` an orthonormal kernel
basis. Extra oriented points fix ``λ``; for a one-dimensional kernel a single
point does so in closed form, which makes per-point voting cheap.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Literal, NamedTuple

import numpy as np
from numpy.typing import ArrayLike, NDArray

from . import quadric
from .errors import DegenerateBasis, NoConsensus, RankDeficient
from .fitting import ApproxSystem, build_approx_system, build_sphere_system, gradient_rows, incidence_rows

RANK_RTOL = 1e-8
FAST_MIN_NORM = 1e-12
DEFAULT_BINS = 90

Kind = Literal["quadric", "sphere"]


@dataclass(frozen=True)
class ParametricSolution:
    p: NDArray[np.float64]
    basis: NDArray[np.float64]  # (n_coeffs, dim), orthonormal columns
    dim: int
    omega: float = 1.0
    kind: Kind = "quadric"

    @property
    def mu(self) -> NDArray[np.float64]:
        return self.basis[:, 0]

    @property
    def p_norm(self) -> float:
        return float(np.linalg.norm(self.p))

    def at(self, lam: ArrayLike) -> NDArray[np.float64]:
        """Coefficients p + N_A λ (unnormalized)."""
        return self.p + self.basis @ np.atleast_1d(np.asarray(lam, dtype=np.float64))

    def rows(self, points: ArrayLike, normals: ArrayLike) -> ApproxSystem:
        build = build_sphere_system if self.kind == "sphere" else build_approx_system
        return build(points, normals, self.omega)


def decompose(
    system: ApproxSystem,
    expected_dim: int | None = None,
    rtol: float = RANK_RTOL,
    kind: Kind = "quadric",
) -> ParametricSolution:
    """Split the solutions of an under-determined system into p + span(N_A).

    ``expected_dim`` enforces the kernel size a basis is supposed to produce
    (1 for three oriented points); a different size raises DegenerateBasis.
    """
    A, b = system.A, system.b
    n = A.shape[1]
    U, s, Vt = np.linalg.svd(A, full_matrices=True)
    rank = int(np.count_nonzero(s > rtol * s[0])) if s.size and s[0] > 0 else 0
    dim = n - rank
    if dim == 0:
        raise DegenerateBasis("system is fully determined; there is no null space")
    if expected_dim is not None and dim != expected_dim:
        raise DegenerateBasis(f"null space has dimension {dim}, expected {expected_dim}")
    p = Vt[:rank].T @ ((U[:, :rank].T @ b) / s[:rank])
    return ParametricSolution(p, Vt[rank:].T.copy(), dim, system.omega, kind)


def lambda_general(sol: ParametricSolution, points: ArrayLike, normals: ArrayLike) -> NDArray[np.float64]:
    """Least-squares λ from (A_k N_A) λ = n_k − A_k p."""
    extra = sol.rows(points, normals)
    M = extra.A @ sol.basis
    rhs = extra.b - extra.A @ sol.p
    U, s, Vt = np.linalg.svd(M, full_matrices=False)
    # N_A is orthonormal, so ‖A_k‖ bounds every singular value of A_k N_A
    scale = np.linalg.norm(extra.A, 2)
    if s.size < sol.dim or s[-1] <= RANK_RTOL * scale:
        raise RankDeficient("extra points do not constrain every null-space direction")
    return Vt.T @ ((U.T @ rhs) / s)


def _quadric_rows(x: NDArray[np.float64], omega: float) -> NDArray[np.float64]:
    a, b, c = x
    w2 = 2.0 * omega
    return np.array([
        [a * a, b * b, c * c, 2 * a * b, 2 * a * c, 2 * b * c, 2 * a, 2 * b, 2 * c, 1.0],
        [w2 * a, 0.0, 0.0, w2 * b, w2 * c, 0.0, w2, 0.0, 0.0, 0.0],
        [0.0, w2 * b, 0.0, w2 * a, 0.0, w2 * c, 0.0, w2, 0.0, 0.0],
        [0.0, 0.0, w2 * c, 0.0, w2 * a, w2 * b, 0.0, 0.0, w2, 0.0],
    ])


def _sphere_rows(x: NDArray[np.float64], omega: float) -> NDArray[np.float64]:
    a, b, c = x
    w2 = 2.0 * omega
    return np.array([
        [a * a + b * b + c * c, 2 * a, 2 * b, 2 * c, 1.0],
        [w2 * a, w2, 0.0, 0.0, 0.0],
        [w2 * b, 0.0, w2, 0.0, 0.0],
        [w2 * c, 0.0, 0.0, w2, 0.0],
    ])


def lambda_fast_1d(sol: ParametricSolution, point: ArrayLike, normal: ArrayLike) -> float:
    """Closed-form λ for one extra oriented point and a 1-D null space."""
    if sol.dim != 1:
        raise ValueError(f"closed form needs a 1-D null space, got {sol.dim}")
    x = np.asarray(point, dtype=np.float64)
    n = np.asarray(normal, dtype=np.float64)
    A1 = _sphere_rows(x, sol.omega) if sol.kind == "sphere" else _quadric_rows(x, sol.omega)
    a = A1 @ sol.basis[:, 0]
    aa = a @ a
    if aa < FAST_MIN_NORM**2:
        raise RankDeficient("the point adds no constraint along the null direction")
    r = -A1 @ sol.p
    r[1:] += sol.omega * n
    return float(a @ r / aa)


def lambdas_fast_1d(sol: ParametricSolution, points: ArrayLike, normals: ArrayLike):
    """Vectorized :func:`lambda_fast_1d`; returns (λ, valid mask)."""
    x = np.asarray(points, dtype=np.float64).reshape(-1, 3)
    n = np.asarray(normals, dtype=np.float64).reshape(-1, 3)
    w = sol.omega
    if sol.kind == "sphere":
        k = len(x)
        R = np.zeros((k, 4, 5))
        R[:, 0, 0] = np.einsum("ij,ij->i", x, x)
        R[:, 0, 1:4] = 2 * x
        R[:, 0, 4] = 1.0
        R[:, 1:, 0] = 2 * w * x
        R[:, 1:, 1:4] = 2 * w * np.eye(3)
    else:
        R = np.concatenate([incidence_rows(x)[:, None, :], w * gradient_rows(x)], axis=1)
    a = R @ sol.basis[:, 0]
    r = -(R @ sol.p)
    r[:, 1:] += w * n
    aa = np.einsum("ij,ij->i", a, a)
    valid = aa >= FAST_MIN_NORM**2
    lam = np.zeros(len(x))
    lam[valid] = np.einsum("ij,ij->i", a[valid], r[valid]) / aa[valid]
    return lam, valid


def theta(lam: ArrayLike, sol: ParametricSolution) -> NDArray[np.float64] | float:
    """Angle between p and p + λμ seen from the origin of coefficient space.

    p is orthogonal to the unit kernel direction μ, so this is
    atan2(λ, ‖p‖): zero at the particular solution, monotone in λ, and
    tending to ±π/2 as |λ| grows.
    """
    t = np.arctan2(np.asarray(lam, dtype=np.float64), sol.p_norm)
    return float(t) if t.ndim == 0 else t


def theta_bin(t: ArrayLike, bin_count: int = DEFAULT_BINS):
    idx = np.floor((np.asarray(t) + np.pi / 2) / np.pi * bin_count).astype(np.int64)
    idx = np.clip(idx, 0, bin_count - 1)
    return int(idx) if idx.ndim == 0 else idx


def theta_quantize(lam: float, sol: ParametricSolution, bin_count: int = DEFAULT_BINS) -> tuple[float, int]:
    t = theta(lam, sol)
    return t, theta_bin(t, bin_count)


@dataclass
class Accumulator:
    bin_count: int = DEFAULT_BINS
    bins: NDArray[np.int64] = field(init=False)
    lambda_lists: list[list[float]] = field(init=False)

    def __post_init__(self):
        if self.bin_count < 1:
            raise ValueError("bin_count must be positive")
        self.bins = np.zeros(self.bin_count, dtype=np.int64)
        self.lambda_lists = [[] for _ in range(self.bin_count)]

    @property
    def total(self) -> int:
        return int(self.bins.sum())


def vote(acc: Accumulator, bin_index: int, lam: float) -> Accumulator:
    if not 0 <= bin_index < acc.bin_count:
        raise IndexError(f"bin {bin_index} outside [0, {acc.bin_count})")
    acc.bins[bin_index] += 1
    acc.lambda_lists[bin_index].append(float(lam))
    return acc


def vote_many(acc: Accumulator, bin_indices: ArrayLike, lams: ArrayLike) -> Accumulator:
    for b, lam in zip(np.asarray(bin_indices).tolist(), np.asarray(lams).tolist()):
        vote(acc, b, lam)
    return acc


class Peak(NamedTuple):
    q: NDArray[np.float64]  # unit norm, orientation of p + λμ preserved
    lam: float
    votes: int
    bin: int


def extract_peak(acc: Accumulator, s_min: int, sol: ParametricSolution) -> Peak:
    best = int(np.argmax(acc.bins))
    votes = int(acc.bins[best])
    if votes < s_min or votes == 0:
        raise NoConsensus(f"peak has {votes} votes, need {s_min}")
    lam = float(np.mean(acc.lambda_lists[best]))
    return Peak(quadric.unit(sol.at(lam)), lam, votes, best)
