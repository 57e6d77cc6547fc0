import numpy as np
import pytest

from quadricvote import quadric, synth
from quadricvote.detector import DetectorConfig, PointCloud, detect_spheres, point_to_sphere, sphere_distance


def test_sphere_distance_examples():
    assert sphere_distance([0, 0, 0], 1.0, [0, 0, 0], 1.0) == 0.0
    assert sphere_distance([0, 0, 0], 1.0, [3, 4, 0], 2.0) == pytest.approx(3.0)


def test_point_to_sphere():
    assert point_to_sphere([2.0, 0, 0], [0, 0, 0], 1.0) == 1.0
    assert point_to_sphere([0.0, 0, 0], [0, 0, 0], 1.0) == 1.0
    np.testing.assert_allclose(point_to_sphere(np.eye(3), [0, 0, 0], 1.0), 0.0)


def sphere_scene(seed, spheres, clutter, sigma=0.0, count=600):
    rng = np.random.default_rng(seed)
    qs = [quadric.sphere_quadric(c, r) for c, r in spheres]
    return synth.compose_scene(qs, count, clutter, sigma, rng)


def test_unit_sphere_with_clutter():
    scene = sphere_scene(0, [((0, 0, 0), 0.6)], 0.3)
    found = detect_spheres(PointCloud(scene.points, scene.normals), DetectorConfig())
    assert found
    assert np.linalg.norm(found[0].center) < 0.01
    assert abs(found[0].radius - 0.6) < 0.01


def test_two_spheres_noisy():
    spheres = [((0.45, 0, 0), 0.3), ((-0.45, 0.1, 0), 0.25)]
    scene = sphere_scene(1, spheres, 0.3, sigma=0.005)
    found = detect_spheres(PointCloud(scene.points, scene.normals), DetectorConfig())
    assert len(found) >= 2
    for c, r in spheres:
        assert min(sphere_distance(f.center, f.radius, c, r) for f in found[:2]) < 0.02


def test_sphere_detections_sorted_and_consistent():
    scene = sphere_scene(2, [((0.2, 0, 0.1), 0.5)], 0.2)
    cloud = PointCloud(scene.points, scene.normals)
    a = detect_spheres(cloud, DetectorConfig())
    b = detect_spheres(cloud, DetectorConfig(), threads=3)
    assert [(f.radius, f.score, f.votes) for f in a] == [(f.radius, f.score, f.votes) for f in b]
    assert [f.score for f in a] == sorted((f.score for f in a), reverse=True)
    s = a[0]
    # the quadric view of a detection is the same sphere
    assert np.abs(quadric.algebraic_distance(s.q, s.center + s.radius * np.eye(3))).max() < 1e-12
