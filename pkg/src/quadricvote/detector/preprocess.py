"""Cloud preparation: unit-ball normalization, min-distance downsampling,
normal estimation, plane removal and difference-of-normals pruning."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree

from .. import quadric
from ..errors import EmptyCloud
from .config import DetectorConfig

RANK_EPS = 1e-12


@dataclass(frozen=True)
class PointCloud:
    points: NDArray[np.float64]
    normals: NDArray[np.float64] | None = None
    diameter: float = 2.0

    def __post_init__(self):
        if self.normals is not None and self.normals.shape != self.points.shape:
            raise ValueError("normals must match points in shape")

    def __len__(self) -> int:
        return len(self.points)

    def subset(self, idx) -> PointCloud:
        n = None if self.normals is None else self.normals[idx]
        return PointCloud(self.points[idx], n, self.diameter)


@dataclass(frozen=True)
class Normalization:
    """x_normalized = (x - center) / scale."""

    center: NDArray[np.float64]
    scale: float

    @property
    def matrix(self) -> NDArray[np.float64]:
        """Homogeneous map from input coordinates to the unit-ball frame."""
        T = np.eye(4) / self.scale
        T[3, 3] = 1.0
        T[:3, 3] = -self.center / self.scale
        return T

    def apply(self, points: ArrayLike) -> NDArray[np.float64]:
        return (np.asarray(points, dtype=np.float64) - self.center) / self.scale

    def quadric_to_input(self, q: ArrayLike) -> NDArray[np.float64]:
        """Express a unit-ball-frame quadric in input coordinates."""
        return quadric.transform(q, self.matrix)

    def sphere_to_input(self, c: ArrayLike, r: float) -> tuple[NDArray[np.float64], float]:
        return np.asarray(c) * self.scale + self.center, r * self.scale


def normalize_unit_ball(cloud: PointCloud) -> tuple[PointCloud, Normalization]:
    if len(cloud) == 0:
        raise EmptyCloud("cannot normalize an empty cloud")
    c = cloud.points.mean(axis=0)
    radius = np.linalg.norm(cloud.points - c, axis=1).max()
    scale = float(radius) if radius > 0 else 1.0
    rec = Normalization(c, scale)
    return PointCloud(rec.apply(cloud.points), cloud.normals, 2.0 * scale), rec


def voxel_downsample(cloud: PointCloud, tau_s: float, diameter: float = 2.0) -> PointCloud:
    """Greedy thinning in input order: keep a point unless an already kept one
    lies closer than ``tau_s * diameter``. A hash grid of that cell size
    limits each check to the 27 surrounding cells."""
    if tau_s <= 0:
        raise ValueError("tau_s must be positive")
    d = tau_s * diameter
    d2 = d * d
    cells: dict[tuple[int, int, int], list[int]] = {}
    P = cloud.points
    keys = np.floor(P / d).astype(np.int64)
    kept: list[int] = []
    offsets = [(i, j, k) for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)]
    for idx in range(len(P)):
        kx, ky, kz = keys[idx]
        x = P[idx]
        clash = False
        for ox, oy, oz in offsets:
            for other in cells.get((kx + ox, ky + oy, kz + oz), ()):
                diff = P[other] - x
                if diff @ diff < d2:
                    clash = True
                    break
            if clash:
                break
        if not clash:
            cells.setdefault((kx, ky, kz), []).append(idx)
            kept.append(idx)
    return cloud.subset(np.array(kept, dtype=np.int64))


def _pca_normal(nb: NDArray[np.float64]):
    """Smallest-eigenvector normal and whether the patch has rank >= 2."""
    nb = nb - nb.mean(axis=-2, keepdims=True)
    cov = np.einsum("...ki,...kj->...ij", nb, nb)
    w, V = np.linalg.eigh(cov)
    ok = w[..., 1] > RANK_EPS * np.maximum(w[..., 2], RANK_EPS)
    return V[..., :, 0], ok


def estimate_normals(
    cloud: PointCloud,
    k: int = 12,
    viewpoint: ArrayLike | None = None,
) -> PointCloud:
    """k-NN plane-fit normals; collinear neighborhoods are dropped.

    Normals face ``viewpoint`` when one is given, otherwise they point away
    from the cloud centroid.
    """
    if k < 3:
        raise ValueError("k must be at least 3")
    P = cloud.points
    if len(P) < k:
        raise ValueError(f"need at least k={k} points, got {len(P)}")
    _, idx = cKDTree(P).query(P, k=k)
    n, ok = _pca_normal(P[idx])
    ref = P - P.mean(axis=0) if viewpoint is None else np.asarray(viewpoint, dtype=np.float64) - P
    flip = np.einsum("ij,ij->i", n, ref) < 0
    n[flip] *= -1
    return PointCloud(P[ok], n[ok], cloud.diameter)


def _radius_normals(tree, P, r):
    normals = np.zeros_like(P)
    ok = np.zeros(len(P), dtype=bool)
    for i, nb in enumerate(tree.query_ball_point(P, r)):
        if len(nb) < 3:
            continue
        normals[i], ok[i] = _pca_normal(P[nb])
    return normals, ok


def don_filter(cloud: PointCloud, r_small: float, r_large: float, threshold: float) -> PointCloud:
    """Keep points whose normals at two support radii nearly agree."""
    if not r_small < r_large:
        raise ValueError("r_small must be smaller than r_large")
    P = cloud.points
    if len(P) == 0:
        return cloud
    tree = cKDTree(P)
    ns, ok_s = _radius_normals(tree, P, r_small)
    nl, ok_l = _radius_normals(tree, P, r_large)
    flip = np.einsum("ij,ij->i", ns, nl) < 0
    nl[flip] *= -1
    don = np.linalg.norm(ns - nl, axis=1) / 2
    return cloud.subset(np.flatnonzero(ok_s & ok_l & (don <= threshold)))


def _plane_support(P, N, plane, tol, tau_n):
    dist = np.abs(P @ plane[:3] + plane[3])
    return (dist < tol) & (np.abs(N @ plane[:3]) >= tau_n)


def remove_planes(
    cloud: PointCloud,
    config: DetectorConfig,
    rng: np.random.Generator | None = None,
    candidates: int = 200,
) -> tuple[PointCloud, list[NDArray[np.float64]]]:
    """Peel off dominant planes, the rank-1 case of the detector.

    A single oriented point already pins a plane, so each round scores planes
    through random oriented points, refines the best by a least-squares fit
    to its supporters and removes them. Rounds stop once the best plane has
    fewer than ``10 * s_min`` supporters.
    """
    if cloud.normals is None:
        raise ValueError("plane removal needs normals")
    rng = np.random.default_rng(config.seed) if rng is None else rng
    keep = np.arange(len(cloud))
    planes: list[NDArray[np.float64]] = []
    need = 10 * config.s_min
    while len(keep) >= need:
        P, N = cloud.points[keep], cloud.normals[keep]
        seeds = rng.choice(len(P), size=min(candidates, len(P)), replace=False)
        best, best_mask = None, None
        for s in seeds:
            plane = np.append(N[s], -N[s] @ P[s])
            mask = _plane_support(P, N, plane, config.plane_tau, config.tau_n)
            if best_mask is None or mask.sum() > best_mask.sum():
                best, best_mask = plane, mask
        if best_mask.sum() < need:
            break
        for _ in range(2):
            sup = P[best_mask]
            c = sup.mean(axis=0)
            n = np.linalg.eigh((sup - c).T @ (sup - c))[1][:, 0]
            best = np.append(n, -n @ c)
            best_mask = _plane_support(P, N, best, config.plane_tau, config.tau_n)
        if best_mask.sum() < need:
            break
        planes.append(best)
        keep = keep[~best_mask]
    return cloud.subset(keep), planes


@dataclass(frozen=True)
class Prepared:
    cloud: PointCloud  # unit-ball frame, downsampled, with normals
    normalization: Normalization
    planes: list[NDArray[np.float64]]


def preprocess(
    cloud: PointCloud,
    config: DetectorConfig,
    viewpoint: ArrayLike | None = None,
) -> Prepared:
    """Normalization, downsampling, normals, then the optional filters."""
    normed, rec = normalize_unit_ball(cloud)
    thin = voxel_downsample(normed, config.tau_s, 2.0)
    if thin.normals is None:
        vp = None if viewpoint is None else rec.apply(viewpoint)
        thin = estimate_normals(thin, config.normal_k, vp)
    else:
        nrm = np.linalg.norm(thin.normals, axis=1, keepdims=True)
        good = nrm[:, 0] > 0
        thin = PointCloud(thin.points[good], thin.normals[good] / nrm[good], thin.diameter)
    planes: list[NDArray[np.float64]] = []
    if config.remove_planes:
        thin, planes = remove_planes(thin, config, np.random.default_rng([config.seed, 1]))
    if config.use_don:
        thin = don_filter(thin, 2.0 * config.don_radius_small, 2.0 * config.don_radius_large, config.don_threshold)
    if len(thin) == 0:
        raise EmptyCloud("no points survived preprocessing")
    return Prepared(thin, rec, planes)
