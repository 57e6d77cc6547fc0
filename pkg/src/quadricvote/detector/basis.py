"""Scene index and random basis selection."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray
from scipy.spatial import cKDTree

from .. import quadric
from ..errors import Exhausted
from ..fitting import build_approx_system
from .config import DetectorConfig

BASIS_RANK_RTOL = 1e-8


@dataclass
class SceneIndex:
    """Sampled scene plus a k-d tree and the set of triplets already used."""

    points: NDArray[np.float64]
    normals: NDArray[np.float64]
    diameter: float = 2.0
    tree: cKDTree = field(init=False, repr=False)
    seen: set[int] = field(default_factory=set, repr=False)

    def __post_init__(self):
        self.points = np.ascontiguousarray(self.points, dtype=np.float64)
        self.normals = np.ascontiguousarray(self.normals, dtype=np.float64)
        self.tree = cKDTree(self.points)

    def __len__(self) -> int:
        return len(self.points)

    def radius(self, i: int, r: float) -> NDArray[np.int64]:
        """Indices within distance ``r`` of point ``i``, sorted."""
        return np.array(sorted(self.tree.query_ball_point(self.points[i], r)), dtype=np.int64)

    def knn(self, i: int, k: int) -> NDArray[np.int64]:
        _, idx = self.tree.query(self.points[i], k=min(k, len(self)))
        return np.atleast_1d(idx)


def basis_key(indices, n_points: int) -> int:
    """Order-free 64-bit key of an index set."""
    key = 0
    for i in sorted(int(j) for j in indices):
        key = key * n_points + i
    if key >= 1 << 64:
        raise OverflowError("scene too large for a 64-bit basis key")
    return key


@dataclass(frozen=True)
class Basis:
    indices: tuple[int, ...]
    points: NDArray[np.float64]
    normals: NDArray[np.float64]
    key: int
    order: int = 0  # position in the sampling sequence


def select_basis(
    index: SceneIndex,
    config: DetectorConfig,
    rng: np.random.Generator,
    size: int = 3,
    order: int = 0,
) -> Basis:
    """Rejection-sample an unseen, well-spread basis.

    Members are pairwise between ``basis_min_dist`` and ``basis_max_dist``
    (times the diameter) apart with normals at least
    ``basis_min_angle_deg`` apart, and a three-point basis must give a
    rank-9 system. The key is recorded on success.
    """
    n = len(index)
    if n < size:
        raise Exhausted(f"need {size} points, the scene has {n}")
    lo = config.basis_min_dist * index.diameter
    hi = config.basis_max_dist * index.diameter
    cos_max = np.cos(np.radians(config.basis_min_angle_deg))
    P, N = index.points, index.normals
    for _ in range(config.max_attempts):
        first = int(rng.integers(n))
        chosen = [first]
        if size > 1:
            near = index.radius(first, hi)
            for _ in range(size - 1):
                ok = np.ones(len(near), dtype=bool)
                for c in chosen:
                    d = np.linalg.norm(P[near] - P[c], axis=1)
                    ok &= (d >= lo) & (d <= hi) & (N[near] @ N[c] <= cos_max)
                pool = near[ok]
                if len(pool) == 0:
                    break
                chosen.append(int(pool[rng.integers(len(pool))]))
            if len(chosen) < size:
                continue
        key = basis_key(chosen, n)
        if key in index.seen:
            continue
        if size == 3:
            A = build_approx_system(P[chosen], N[chosen], config.omega).A
            if quadric.matrix_rank(A, BASIS_RANK_RTOL) != 9:
                continue
        index.seen.add(key)
        idx = tuple(chosen)
        return Basis(idx, P[list(idx)], N[list(idx)], key, order)
    raise Exhausted(f"no admissible basis in {config.max_attempts} attempts")
