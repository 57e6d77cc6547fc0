"""Sphere detector: one-point bases on the five-coefficient system."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray

from ..errors import DegenerateConfiguration, NoConsensus, QuadricError
from ..fitting import build_sphere_system, fit_sphere, sphere_from_coeffs, sphere_to_coeffs
from ..nullspace import Accumulator, decompose, extract_peak, lambdas_fast_1d, theta, theta_bin, vote_many
from .basis import Basis, SceneIndex
from .config import DetectorConfig
from .detect import _agreement, draw_bases, local_points, run_votes
from .preprocess import PointCloud
from .scoring import single_linkage, suppress_explained

MAX_RADIUS = 2.0


@dataclass(frozen=True)
class SphereDetection:
    center: NDArray[np.float64]
    radius: float
    score: float
    votes: int
    basis: Basis | None = None
    support_count: int = 0

    @property
    def q(self) -> NDArray[np.float64]:
        c = self.center
        return sphere_to_coeffs([1.0, -c[0], -c[1], -c[2], c @ c - self.radius**2])


def point_to_sphere(points: ArrayLike, center: ArrayLike, radius: float) -> NDArray[np.float64] | float:
    """Unsigned distance |‖p − c‖ − r|."""
    d = np.abs(np.linalg.norm(np.asarray(points, dtype=np.float64) - center, axis=-1) - radius)
    return float(d) if np.ndim(d) == 0 else d


def sphere_distance(c1: ArrayLike, r1: float, c2: ArrayLike, r2: float) -> float:
    """½(|r₁ − r₂| + ‖c₁ − c₂‖)."""
    return 0.5 * (abs(r1 - r2) + float(np.linalg.norm(np.asarray(c1) - np.asarray(c2))))


def sphere_compatible(center, radius, points, normals, tau: float, tau_n: float) -> NDArray[np.bool_]:
    P = np.asarray(points, dtype=np.float64)
    N = np.asarray(normals, dtype=np.float64)
    v = P - center
    vn = np.linalg.norm(v, axis=1)
    cos = np.einsum("ij,ij->i", v, N) / np.where(vn > 0, vn, 1.0)
    return (np.abs(vn - radius) < tau) & (vn > 0) & (1.0 - cos < tau_n)


def sphere_score(center, radius, points, normals, tau: float, tau_n: float) -> float:
    return float(sphere_compatible(center, radius, points, normals, tau, tau_n).mean())


def _sphere_inliers(c, r, P, N, config):
    v = P - c
    return (point_to_sphere(P, c, r) < config.sphere_tau) & _agreement(v, N, config.tau_n)


def _refine_sphere(c, r, P, N, config):
    count = int(_sphere_inliers(c, r, P, N, config).sum())
    for _ in range(3):
        m = _sphere_inliers(c, r, P, N, config)
        if m.sum() < 2:
            break
        try:
            fit = fit_sphere(P[m], N[m], config.omega)
        except (DegenerateConfiguration, QuadricError):
            break
        n_new = int(_sphere_inliers(fit.center, fit.radius, P, N, config).sum())
        if n_new <= count:
            break
        c, r, count = fit.center, fit.radius, n_new
    return c, r


def vote_sphere_basis(index: SceneIndex, config: DetectorConfig, basis: Basis) -> SphereDetection | None:
    try:
        system = build_sphere_system(basis.points, basis.normals, config.omega)
        sol = decompose(system, expected_dim=1, kind="sphere")
    except QuadricError:
        return None
    near = local_points(index, basis, config)
    P, N = index.points[near], index.normals[near]
    lam, valid = lambdas_fast_1d(sol, P, N)
    q5 = sol.p[None, :] + lam[:, None] * sol.mu[None, :]
    g = 2 * q5[:, :1] * P + 2 * q5[:, 1:4]
    ok = valid & _agreement(g, N, config.tau_n)
    bins = theta_bin(theta(lam[ok], sol), config.bin_count)
    acc = vote_many(Accumulator(config.bin_count), np.atleast_1d(bins), lam[ok])
    try:
        peak = extract_peak(acc, config.s_min, sol)
        c, r = sphere_from_coeffs(sol.at(peak.lam))
    except (NoConsensus, QuadricError, ValueError):
        return None
    if config.refine:
        local = np.concatenate([np.asarray(basis.indices), near])
        c, r = _refine_sphere(c, r, index.points[local], index.normals[local], config)
    if not 0 < r <= MAX_RADIUS:
        return None
    return SphereDetection(np.asarray(c), float(r), 0.0, peak.votes, basis)


def detect_spheres(cloud: PointCloud, config: DetectorConfig, threads: int = 1) -> list[SphereDetection]:
    """Sphere detection on a preprocessed cloud; sorted by score, then votes."""
    if cloud.normals is None:
        raise ValueError("detection needs oriented points")
    index = SceneIndex(cloud.points, cloud.normals, 2.0)
    if len(index) < 1:
        return []
    bases = draw_bases(index, config, size=1)
    hyps = run_votes(index, config, bases, vote_sphere_basis, threads)
    hyps.sort(key=lambda h: (-h.votes, h.basis.order))

    stage1 = []
    for group in single_linkage(
        len(hyps), lambda i, j: sphere_distance(hyps[i].center, hyps[i].radius, hyps[j].center, hyps[j].radius) < config.sphere_eps
    ):
        members = [hyps[i] for i in group]
        c = np.mean([m.center for m in members], axis=0)
        r = float(np.mean([m.radius for m in members]))
        stage1.append(SphereDetection(c, r, 0.0, sum(m.votes for m in members), members[0].basis))

    P, N = index.points, index.normals
    masks = [sphere_compatible(h.center, h.radius, P, N, config.sphere_tau, config.tau_n) for h in stage1]
    scored = [
        SphereDetection(h.center, h.radius, float(m.mean()), h.votes, h.basis, int(m.sum()))
        for h, m in zip(stage1, masks)
    ]

    def rank(h):
        return (-h.score, -h.votes, h.basis.order)

    def far(i, j):
        a, b = masks[i], masks[j]
        union = np.count_nonzero(a | b)
        return union > 0 and 1.0 - np.count_nonzero(a & b) / union < config.eps_far

    out = []
    for group in single_linkage(len(scored), far):
        members = sorted((scored[i] for i in group), key=rank)
        best = members[0]
        out.append(SphereDetection(best.center, best.radius, best.score, sum(m.votes for m in members), best.basis, best.support_count))
    out.sort(key=rank)
    masks = [sphere_compatible(h.center, h.radius, P, N, config.sphere_tau, config.tau_n) for h in out]
    return [out[i] for i in suppress_explained(out, masks, config)]
