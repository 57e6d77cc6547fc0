import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from quadricvote import quadric
from quadricvote.errors import NoPolar, NotCentral
from quadricvote.quadric import QuadricClass

finite = st.floats(-10, 10, allow_nan=False, allow_infinity=False)
coeffs = arrays(np.float64, 10, elements=finite).filter(lambda q: np.abs(q).max() > 1e-3)
point = arrays(np.float64, 3, elements=st.floats(-2, 2, allow_nan=False))

SPHERE = quadric.unit_sphere()


def explicit_poly(q, x):
    A, B, C, D, E, F, G, H, I, J = q
    a, b, c = x
    return (A * a * a + B * b * b + C * c * c + 2 * D * a * b + 2 * E * a * c + 2 * F * b * c
            + 2 * G * a + 2 * H * b + 2 * I * c + J)


@given(coeffs)
def test_matrix_round_trip_is_exact(q):
    Q = quadric.to_matrix(q)
    assert np.array_equal(Q, Q.T)
    assert np.array_equal(quadric.to_coeffs(Q), q)
    assert np.array_equal(quadric.to_matrix(quadric.to_coeffs(Q)), Q)


def test_algebraic_distance_on_and_inside_unit_sphere():
    assert quadric.algebraic_distance(SPHERE, [1.0, 0, 0]) == 0.0
    assert quadric.algebraic_distance(SPHERE, [0.0, 0, 0]) == -1.0


@given(coeffs, point)
def test_algebraic_distance_matches_polynomial(q, x):
    assert quadric.algebraic_distance(q, x) == pytest.approx(explicit_poly(q, x), abs=1e-12 * (1 + np.abs(q).sum() * 4))


def test_gradient_of_unit_sphere():
    np.testing.assert_allclose(quadric.gradient(SPHERE, [1.0, 0, 0]), [2.0, 0, 0])


def test_gradient_vanishes_at_cone_apex():
    cone = np.array([1.0, 1, -1, 0, 0, 0, 0, 0, 0, 0])
    np.testing.assert_array_equal(quadric.gradient(cone, [0.0, 0, 0]), np.zeros(3))


@given(coeffs, point)
def test_gradient_matches_finite_difference(q, x):
    h = 1e-5
    fd = [(explicit_poly(q, x + h * e) - explicit_poly(q, x - h * e)) / (2 * h) for e in np.eye(3)]
    np.testing.assert_allclose(quadric.gradient(q, x), fd, atol=1e-6 * (1 + np.abs(q).sum()))


def _proportional(a, b):
    a, b = np.asarray(a, float), np.asarray(b, float)
    return np.linalg.matrix_rank(np.vstack([a, b]), tol=1e-10) == 1


def test_polar_plane_of_surface_point_is_tangent_plane():
    assert _proportional(quadric.polar_plane(SPHERE, [1.0, 0, 0, 1]), [1, 0, 0, -1])


def test_polar_plane_of_center_is_plane_at_infinity():
    assert _proportional(quadric.polar_plane(SPHERE, [0.0, 0, 0, 1]), [0, 0, 0, -1])


def test_polar_plane_of_point_on_rank_one_quadric_fails():
    plane = np.array([0.0, 0, 1, -0.5])
    with pytest.raises(NoPolar):
        quadric.polar_plane(quadric.plane_quadric(plane), [0.3, 0.2, 0.5, 1.0])


def test_center_of_sphere():
    np.testing.assert_allclose(quadric.center(quadric.sphere_quadric([1, 2, 3], 0.5)), [1, 2, 3], atol=1e-12)
    np.testing.assert_allclose(quadric.center(SPHERE), np.zeros(3), atol=1e-15)


def test_paraboloid_has_no_center():
    paraboloid = np.array([1.0, 1, 0, 0, 0, 0, 0, 0, -0.5, 0])  # x² + y² − z = 0
    with pytest.raises(NotCentral):
        quadric.center(paraboloid)


def test_classify_examples():
    rng = np.random.default_rng(0)
    p1, p2 = rng.normal(size=4), rng.normal(size=4)
    assert quadric.classify(quadric.plane_quadric(p1)) is QuadricClass.PLANE
    assert quadric.classify(quadric.plane_pair(p1, p2)) is QuadricClass.PLANE_PAIR
    assert quadric.classify(SPHERE) is QuadricClass.CENTRAL
    assert quadric.classify([1.0, 1, 0, 0, 0, 0, 0, 0, -0.5, 0]) is QuadricClass.NON_CENTRAL
    assert quadric.classify([1.0, 1, 1, 0, 0, 0, 0, 0, 0, 1]) is QuadricClass.OTHER


@given(st.floats(-1e3, 1e3).filter(lambda s: abs(s) > 1e-3))
def test_classify_is_scale_invariant(s):
    for q in (SPHERE, [1.0, 1, 0, 0, 0, 0, 0, 0, -0.5, 0], quadric.to_coeffs(quadric.plane_pair([1, 0, 0, 0], [0, 1, 0, 0]))):
        assert quadric.classify(s * np.asarray(q)) is quadric.classify(q)


def test_plane_pair_examples():
    zz = quadric.to_coeffs(quadric.plane_pair([0, 0, 1, 0], [0, 0, 1, 0]))
    assert np.count_nonzero(zz) == 1 and zz[2] != 0
    xy = quadric.to_coeffs(quadric.plane_pair([1, 0, 0, 0], [0, 1, 0, 0]))
    np.testing.assert_array_equal(xy, [0, 0, 0, 1, 0, 0, 0, 0, 0, 0])  # 2·D·xy with D = 1


def test_plane_pair_vanishes_on_its_planes():
    rng = np.random.default_rng(1)
    for _ in range(50):
        p1, p2 = rng.normal(size=4), rng.normal(size=4)
        n = p1[:3]
        x = rng.normal(size=3)
        x -= (p1[:3] @ x + p1[3]) / (n @ n) * n
        assert abs(quadric.algebraic_distance(quadric.plane_pair(p1, p2), x)) < 1e-12 * (1 + np.abs(x).max() ** 2)


@given(coeffs, st.floats(-100, 100).filter(lambda s: abs(s) > 1e-2))
def test_normalize_is_scale_and_sign_invariant(q, s):
    a, b = quadric.normalize(q), quadric.normalize(s * q)
    np.testing.assert_allclose(a, b, atol=1e-12)
    assert np.linalg.norm(a) == pytest.approx(1.0)
    assert a[np.argmax(np.abs(a))] > 0


def test_normalize_rejects_zero():
    with pytest.raises(ValueError):
        quadric.normalize(np.zeros(10))


def test_transform_moves_surface_with_points():
    rng = np.random.default_rng(2)
    T = np.eye(4)
    T[:3, :3] = 1.7 * np.linalg.qr(rng.normal(size=(3, 3)))[0]
    T[:3, 3] = rng.normal(size=3)
    q = quadric.sphere_quadric([0.1, -0.2, 0.3], 0.4)
    pts = rng.normal(size=(20, 3))
    pts = 0.4 * pts / np.linalg.norm(pts, axis=1, keepdims=True) + [0.1, -0.2, 0.3]
    # points of the frame-b surface map back to frame a through T⁻¹
    back = (np.linalg.inv(T) @ quadric.homogeneous(pts).T).T
    back = back[:, :3] / back[:, 3:]
    assert np.abs(quadric.algebraic_distance(quadric.transform(q, T), back)).max() < 1e-12


def test_pole_and_tangent_planes_agree_on_sphere():
    pts = np.eye(3)
    plane = quadric.plane_through(pts)
    P = quadric.pole(SPHERE, plane)
    X = quadric.tangent_plane_intersection(SPHERE, pts)
    np.testing.assert_allclose(quadric.dehomogenize(P), quadric.dehomogenize(X), atol=1e-12)
    np.testing.assert_allclose(quadric.dehomogenize(P), [1, 1, 1], atol=1e-12)
