"""RANSAC over three-point bases with local null-space voting."""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from functools import partial

import numpy as np
from numpy.typing import NDArray

from .. import quadric
from ..errors import DegenerateConfiguration, Exhausted, NoConsensus, QuadricError
from ..fitting import build_approx_system, fit_full
from ..nullspace import Accumulator, decompose, extract_peak, lambdas_fast_1d, theta, theta_bin, vote_many
from .basis import Basis, SceneIndex, select_basis
from .config import DetectorConfig
from .preprocess import PointCloud
from .scoring import GRAD_EPS, DetectionHypothesis, cluster_hypotheses, compatible, suppress_explained

REFINE_ROUNDS = 3


def draw_bases(index: SceneIndex, config: DetectorConfig, size: int = 3) -> list[Basis]:
    """Sequential basis sampling from one seeded stream, so the list does not
    depend on how many workers later consume it."""
    rng = np.random.default_rng(config.seed)
    bases = []
    for order in range(config.max_bases):
        try:
            bases.append(select_basis(index, config, rng, size=size, order=order))
        except Exhausted:
            break
    return bases


def local_points(index: SceneIndex, basis: Basis, config: DetectorConfig) -> NDArray[np.int64]:
    near = index.radius(basis.indices[0], config.basis_max_dist * index.diameter)
    return near[~np.isin(near, basis.indices)]


def _agreement(g, normals, tau_n):
    gn = np.linalg.norm(g, axis=-1)
    cos = np.einsum("ij,ij->i", g, normals) / np.where(gn > GRAD_EPS, gn, 1.0)
    return (gn > GRAD_EPS) & (cos > tau_n)


def _inliers(q, P, N, config):
    q = quadric.unit(q)
    inc = np.abs(quadric.algebraic_distance(q, P)) < config.tau
    return inc & _agreement(quadric.gradient(q, P), N, config.tau_n)


def refine(q: NDArray[np.float64], P, N, config: DetectorConfig) -> NDArray[np.float64]:
    """Re-fit with free per-point scales on the current inliers until the
    inlier count stops growing; the orientation follows the normals."""
    best, count = q, int(_inliers(q, P, N, config).sum())
    for _ in range(REFINE_ROUNDS):
        m = _inliers(best, P, N, config)
        if m.sum() < 9:
            break
        try:
            new = fit_full(P[m], N[m], config.omega).q
        except DegenerateConfiguration:
            break
        if np.einsum("ij,ij->", quadric.gradient(new, P[m]), N[m]) < 0:
            new = -new
        c = int(_inliers(new, P, N, config).sum())
        if c < count:
            break
        # a refit that keeps every inlier is still a better estimate than the peak
        best, grew, count = new, c > count, c
        if not grew:
            break
    return quadric.unit(best)


def vote_basis(index: SceneIndex, config: DetectorConfig, basis: Basis) -> DetectionHypothesis | None:
    """Decompose one basis, let its neighborhood vote on λ and return the peak.

    Reads the index only; safe to run concurrently for distinct bases.
    """
    try:
        sol = decompose(build_approx_system(basis.points, basis.normals, config.omega), expected_dim=1)
    except QuadricError:
        return None
    near = local_points(index, basis, config)
    P, N = index.points[near], index.normals[near]
    lam, valid = lambdas_fast_1d(sol, P, N)
    # gradient of p + λμ is linear in λ
    g = quadric.gradient(sol.p, P) + lam[:, None] * quadric.gradient(sol.mu, P)
    ok = valid & _agreement(g, N, config.tau_n)
    bins = theta_bin(theta(lam[ok], sol), config.bin_count)
    acc = vote_many(Accumulator(config.bin_count), np.atleast_1d(bins), lam[ok])
    try:
        peak = extract_peak(acc, config.s_min, sol)
    except NoConsensus:
        return None
    q = peak.q
    if config.refine:
        local = np.concatenate([np.asarray(basis.indices), near])
        q = refine(q, index.points[local], index.normals[local], config)
    return DetectionHypothesis(q, peak.votes, 0.0, basis, 0)


def run_votes(index: SceneIndex, config: DetectorConfig, bases: list[Basis], body, threads: int = 1) -> list:
    """Apply ``body`` to every basis; results keep the basis order."""
    work = partial(body, index, config)
    if threads > 1 and len(bases) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(work, bases))
    else:
        results = [work(b) for b in bases]
    return [r for r in results if r is not None]


def detect(cloud: PointCloud, config: DetectorConfig, threads: int = 1) -> list[DetectionHypothesis]:
    """Detect quadrics in a preprocessed cloud (unit-ball frame, normals set).

    Hypotheses are sorted by score, then votes, then basis order. Those below
    ``min_score``, or mostly explained by a better one, are dropped. The
    result does not depend on ``threads``.
    """
    if cloud.normals is None:
        raise ValueError("detection needs oriented points")
    index = SceneIndex(cloud.points, cloud.normals, 2.0)
    if len(index) < 3:
        return []
    bases = draw_bases(index, config)
    hyps = run_votes(index, config, bases, vote_basis, threads)
    clustered = cluster_hypotheses(hyps, index.points, index.normals, config)
    masks = [compatible(h.q, index.points, index.normals, config.tau, config.tau_n) for h in clustered]
    return [clustered[i] for i in suppress_explained(clustered, masks, config)]
