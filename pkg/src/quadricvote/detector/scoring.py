"""Hypothesis scoring, inter-quadric distances and two-stage clustering."""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np
from numpy.typing import ArrayLike, NDArray

from .. import quadric
from .basis import Basis
from .config import DetectorConfig

GRAD_EPS = 1e-12
PINV_RCOND = 1e-9


@dataclass(frozen=True)
class DetectionHypothesis:
    q: NDArray[np.float64]  # unit norm, gradient oriented along the normals
    votes: int
    score: float
    basis: Basis | None
    support_count: int


def gradient_agreement(q: ArrayLike, point: ArrayLike, normal: ArrayLike, tau_n: float) -> bool:
    """True iff the unit gradient at ``point`` has dot product > tau_n with ``normal``."""
    g = quadric.gradient(q, np.asarray(point, dtype=np.float64))
    gn = np.linalg.norm(g)
    if gn < GRAD_EPS:
        return False
    return bool(g @ np.asarray(normal, dtype=np.float64) / gn > tau_n)


def compatible(q: ArrayLike, points: ArrayLike, normals: ArrayLike, tau: float, tau_n: float) -> NDArray[np.bool_]:
    """Per-sample incidence (|d| < tau on unit-norm q) and normal test
    (1 - n·∇̂Q < tau_n)."""
    q = quadric.unit(q)
    P = np.asarray(points, dtype=np.float64)
    N = np.asarray(normals, dtype=np.float64)
    Q = quadric.to_matrix(q)
    inc = np.abs(quadric.algebraic_distance(Q, P)) < tau
    g = quadric.gradient(Q, P)
    gn = np.linalg.norm(g, axis=1)
    cos = np.einsum("ij,ij->i", g, N) / np.where(gn > GRAD_EPS, gn, 1.0)
    return inc & (gn > GRAD_EPS) & (1.0 - cos < tau_n)


def score(q: ArrayLike, points: ArrayLike, normals: ArrayLike, tau: float, tau_n: float) -> float:
    P = np.asarray(points)
    if len(P) == 0:
        raise ValueError("score needs at least one sample")
    return float(compatible(q, P, normals, tau, tau_n).mean())


def d_close(q1: ArrayLike, q2: ArrayLike, gate: float) -> float:
    """Gated ‖Q₁Q₂⁺ − I‖_F; +inf when ‖q₁ − q₂‖₁ ≥ gate."""
    a, b = quadric.normalize(q1), quadric.normalize(q2)
    if np.abs(a - b).sum() >= gate:
        return np.inf
    Q1, Q2 = quadric.to_matrix(a), quadric.to_matrix(b)
    return float(np.linalg.norm(Q1 @ np.linalg.pinv(Q2, rcond=PINV_RCOND) - np.eye(4)))


def d_far(q1: ArrayLike, q2: ArrayLike, points: ArrayLike, normals: ArrayLike, tau: float, tau_n: float) -> float:
    """Fraction of samples not compatible with both quadrics at once."""
    if len(np.asarray(points)) == 0:
        raise ValueError("d_far needs at least one sample")
    both = compatible(q1, points, normals, tau, tau_n) & compatible(q2, points, normals, tau, tau_n)
    return float(1.0 - both.mean())


def _jaccard_distance(a: NDArray[np.bool_], b: NDArray[np.bool_]) -> float:
    union = np.count_nonzero(a | b)
    return 1.0 if union == 0 else 1.0 - np.count_nonzero(a & b) / union


def single_linkage(n: int, linked) -> list[list[int]]:
    parent = list(range(n))

    def find(i):
        while parent[i] != i:
            parent[i] = parent[parent[i]]
            i = parent[i]
        return i

    for i in range(n):
        for j in range(i + 1, n):
            if find(i) != find(j) and linked(i, j):
                parent[max(find(i), find(j))] = min(find(i), find(j))
    groups: dict[int, list[int]] = {}
    for i in range(n):
        groups.setdefault(find(i), []).append(i)
    return list(groups.values())


def _mean_q(qs: list[NDArray[np.float64]]) -> NDArray[np.float64]:
    ref = qs[0]
    aligned = [q if q @ ref >= 0 else -q for q in qs]
    return quadric.unit(np.mean(aligned, axis=0))


def _rank_key(h: DetectionHypothesis):
    return (-h.score, -h.votes, h.basis.order if h.basis is not None else -1)


def cluster_hypotheses(
    hyps: list[DetectionHypothesis],
    points: ArrayLike,
    normals: ArrayLike,
    config: DetectorConfig,
) -> list[DetectionHypothesis]:
    """Merge duplicates coarse-to-fine and return scored, sorted clusters.

    Stage one links hypotheses whose symmetrized d_close is below eps_close
    and averages them. Stage two links stage-one representatives whose
    compatible sample sets overlap (Jaccard distance below eps_far) and keeps
    the best-scoring member; averaging two distinct parametrizations of the
    same patch could leave the surface.
    """
    if not hyps:
        return []
    P = np.asarray(points, dtype=np.float64)
    N = np.asarray(normals, dtype=np.float64)
    hyps = sorted(hyps, key=lambda h: (-h.votes, h.basis.order if h.basis is not None else -1))

    def close(i, j):
        a, b = hyps[i].q, hyps[j].q
        return max(d_close(a, b, config.close_gate), d_close(b, a, config.close_gate)) < config.eps_close

    stage1 = []
    for group in single_linkage(len(hyps), close):
        members = [hyps[i] for i in group]
        q = _mean_q([m.q for m in members])
        stage1.append(replace(members[0], q=q, votes=sum(m.votes for m in members)))

    masks = [compatible(h.q, P, N, config.tau, config.tau_n) for h in stage1]
    stage1 = [
        replace(h, score=float(m.mean()), support_count=int(m.sum())) for h, m in zip(stage1, masks)
    ]

    def far(i, j):
        return _jaccard_distance(masks[i], masks[j]) < config.eps_far

    out = []
    for group in single_linkage(len(stage1), far):
        members = sorted((stage1[i] for i in group), key=_rank_key)
        out.append(replace(members[0], votes=sum(m.votes for m in members)))
    return sorted(out, key=_rank_key)


def suppress_explained(
    ranked: list,
    masks: list[NDArray[np.bool_]],
    config: DetectorConfig,
) -> list[int]:
    """Indices (in ranking order) of hypotheses that explain enough samples on
    their own.

    Hypotheses claim samples in order of accumulated votes, the evidence of
    repeated local consensus, rather than score: a quadric threading through
    parts of two objects can out-score either true surface while gathering
    few votes. A hypothesis survives when at least
    ``max(s_min, min_exclusive * support)`` of its compatible samples are still
    unclaimed.
    """
    if not masks:
        return []
    claimed = np.zeros_like(masks[0])
    keep = []
    order = sorted(range(len(ranked)), key=lambda i: (-ranked[i].votes, i))
    for i in order:
        m = masks[i]
        if ranked[i].score < config.min_score:
            continue
        exclusive = int(np.count_nonzero(m & ~claimed))
        if exclusive >= max(config.s_min, config.min_exclusive * int(m.sum())):
            keep.append(i)
            claimed |= m
    return sorted(keep)
