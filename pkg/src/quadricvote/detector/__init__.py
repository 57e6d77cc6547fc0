"""Multi-quadric detection in unsegmented oriented point clouds."""

from .basis import Basis, SceneIndex, select_basis
from .config import DetectorConfig
from .detect import detect
from .preprocess import (
    Normalization,
    PointCloud,
    don_filter,
    estimate_normals,
    normalize_unit_ball,
    preprocess,
    remove_planes,
    voxel_downsample,
)
from .scoring import DetectionHypothesis, cluster_hypotheses, d_close, d_far, gradient_agreement, score
from .spheres import SphereDetection, detect_spheres, point_to_sphere, sphere_distance

__all__ = [
    "Basis",
    "DetectionHypothesis",
    "DetectorConfig",
    "Normalization",
    "PointCloud",
    "SceneIndex",
    "SphereDetection",
    "cluster_hypotheses",
    "d_close",
    "d_far",
    "detect",
    "detect_spheres",
    "don_filter",
    "estimate_normals",
    "gradient_agreement",
    "normalize_unit_ball",
    "point_to_sphere",
    "preprocess",
    "remove_planes",
    "score",
    "select_basis",
    "sphere_distance",
    "voxel_downsample",
]
