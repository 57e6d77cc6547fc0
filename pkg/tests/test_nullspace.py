import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from quadricvote import quadric, synth
from quadricvote.detector import DetectorConfig
from quadricvote.detector.scoring import d_close
from quadricvote.errors import DegenerateBasis, NoConsensus, RankDeficient
from quadricvote.fitting import build_approx_system, fit_approx
from quadricvote.nullspace import (
    Accumulator,
    decompose,
    extract_peak,
    lambda_fast_1d,
    lambda_general,
    lambdas_fast_1d,
    theta,
    theta_bin,
    theta_quantize,
    vote,
    vote_many,
)
from quadricvote.quadric import QuadricClass


def basis_samples(seed, count, level=False):
    """Samples of a random central quadric; with ``level`` the data are
    exact for the unit-normal system (q scaled by 1/level is the solution)."""
    rng = np.random.default_rng(seed)
    q = synth.random_quadric(rng, QuadricClass.CENTRAL)
    if level:
        P, N, lev = synth.sample_gradient_level(q, count, rng)
        return q / lev, P, N
    P, N = synth.sample_surface(q, count, rng)
    return q, P, N


def solution(P, N, dim=1):
    return decompose(build_approx_system(P, N), expected_dim=dim)


def coeff_distance(a, b):
    return float(np.linalg.norm(quadric.normalize(a) - quadric.normalize(b)))


# decomposition


def test_three_points_give_one_dimensional_kernel():
    for seed in range(20):
        _, P, N = basis_samples(seed, 3)
        assert solution(P, N).dim == 1


def test_two_points_give_three_dimensional_kernel():
    _, P, N = basis_samples(1, 2)
    sol = decompose(build_approx_system(P, N))
    assert sol.dim == 3 and sol.basis.shape == (10, 3)


def test_collinear_points_are_degenerate():
    P = np.array([[0.0, 0, 0], [0.2, 0.1, 0], [0.4, 0.2, 0]])
    N = np.array([[0, 0, 1.0], [0, 0.6, 0.8], [0.6, 0, 0.8]])
    A = build_approx_system(P, N).A
    assert np.linalg.matrix_rank(A, tol=1e-8 * np.linalg.norm(A, 2)) < 9
    with pytest.raises(DegenerateBasis):
        solution(P, N)


def test_kernel_invariants_over_many_bases():
    rng = np.random.default_rng(2)
    for _ in range(500):
        q = synth.random_quadric(rng, QuadricClass.CENTRAL)
        P, N = synth.sample_surface(q, 3, rng)
        system = build_approx_system(P, N)
        sol = decompose(system, expected_dim=1)
        assert np.linalg.norm(system.A @ sol.basis) < 1e-8 * np.linalg.norm(system.A)
        np.testing.assert_allclose(sol.basis.T @ sol.basis, np.eye(1), atol=1e-10)
        assert abs(sol.p @ sol.mu) < 1e-10  # minimum-norm p is orthogonal to the kernel


def test_kernel_of_three_point_basis_is_data_plane():
    _, P, N = basis_samples(3, 3)
    mu = solution(P, N).mu
    assert quadric.classify(mu) is QuadricClass.PLANE
    plane = quadric.to_coeffs(quadric.plane_quadric(quadric.plane_through(P)))
    assert coeff_distance(mu, plane) < 1e-9


# λ solves


def test_lambda_general_recovers_basis_quadric():
    for seed in range(20):
        q, P, N = basis_samples(seed, 4, level=True)
        sol = solution(P[:3], N[:3])
        lam = lambda_general(sol, P[3:], N[3:])
        assert coeff_distance(sol.at(lam), q) < 1e-6


def test_basis_point_as_extra_adds_no_constraint():
    # A_k N_A = 0 for a basis point: every λ leaves its rows satisfied, and
    # with no constraint on λ the solve reports rank deficiency
    _, P, N = basis_samples(4, 3, level=True)
    sol = solution(P, N)
    extra = sol.rows(P[:1], N[:1])
    for lam in (-5.0, 0.0, 0.7, 30.0):
        assert np.linalg.norm(extra.A @ sol.at(lam) - extra.b) < 1e-10
    with pytest.raises(RankDeficient):
        lambda_general(sol, P[:1], N[:1])


def test_two_point_basis_with_two_extras_matches_four_point_fit():
    for seed in range(10):
        _, P, N = basis_samples(seed, 4, level=True)
        sol = decompose(build_approx_system(P[:2], N[:2]), expected_dim=3)
        lam = lambda_general(sol, P[2:], N[2:])
        assert lam.shape == (3,)
        assert coeff_distance(sol.at(lam), fit_approx(P, N).q) < 1e-6


def test_fast_lambda_equals_general():
    rng = np.random.default_rng(5)
    for _ in range(300):
        q = synth.random_quadric(rng, QuadricClass.CENTRAL)
        P, N = synth.sample_surface(q, 4, rng)
        sol = solution(P[:3], N[:3])
        x, n = synth.random_in_ball(rng, 1)[0], synth.random_unit_vectors(rng, 1)[0]
        for xi, ni in ((P[3], N[3]), (x, n)):
            assert lambda_fast_1d(sol, xi, ni) == pytest.approx(lambda_general(sol, [xi], [ni])[0], abs=1e-10)


def test_vectorized_fast_lambda_matches_scalar():
    _, P, N = basis_samples(6, 40)
    sol = solution(P[:3], N[:3])
    lam, valid = lambdas_fast_1d(sol, P[3:], N[3:])
    assert valid.all()
    np.testing.assert_allclose(lam, [lambda_fast_1d(sol, x, n) for x, n in zip(P[3:], N[3:])], atol=1e-12)


def test_fourth_point_on_data_plane_adds_no_constraint():
    """The kernel direction is the data-plane quadric, which vanishes to
    second order on its own plane; a fourth point there cannot select λ."""
    _, P, N = basis_samples(7, 3)
    sol = solution(P, N)
    plane = quadric.plane_through(P)
    x = P.mean(axis=0)
    assert abs(plane[:3] @ x + plane[3]) < 1e-12
    with pytest.raises(RankDeficient):
        lambda_fast_1d(sol, x, plane[:3])
    lam, valid = lambdas_fast_1d(sol, [x], [plane[:3]])
    assert not valid[0]
    assert quadric.classify(sol.mu) is QuadricClass.PLANE


def test_exact_fourth_point_reproduces_ground_truth():
    for seed in range(20):
        q, P, N = basis_samples(100 + seed, 4, level=True)
        sol = solution(P[:3], N[:3])
        assert coeff_distance(sol.at(lambda_fast_1d(sol, P[3], N[3])), q) < 1e-6


def test_reconstruction_independent_of_fourth_point():
    for seed in range(10):
        _, P, N = basis_samples(200 + seed, 12, level=True)
        sol = solution(P[:3], N[:3])
        qs = [sol.at(lambda_fast_1d(sol, x, n)) for x, n in zip(P[3:], N[3:])]
        for a in qs[1:]:
            assert coeff_distance(a, qs[0]) < 1e-8


# quantization


def test_theta_of_zero_is_center_bin():
    _, P, N = basis_samples(8, 3)
    sol = solution(P, N)
    t, b = theta_quantize(0.0, sol)
    assert t == 0.0 and b == 45


def test_theta_limits_reach_boundary_bins():
    _, P, N = basis_samples(8, 3)
    sol = solution(P, N)
    assert theta_quantize(1e300, sol) == (pytest.approx(np.pi / 2), 89)
    assert theta_quantize(-1e300, sol)[1] == 0
    assert theta_bin(np.pi / 2) == 89


@given(st.lists(st.floats(-1e6, 1e6, allow_nan=False), min_size=2, max_size=20))
def test_theta_is_monotone_in_lambda(lams):
    _, P, N = basis_samples(9, 3)
    sol = solution(P, N)
    lams = np.sort(np.array(lams))
    t = theta(lams, sol)
    assert np.all(np.diff(t) >= 0)
    assert np.all(np.diff(theta_bin(t)) >= 0)


def test_bin_adequacy_at_90_bins():
    """Two λ drawn from one bounded bin give quadrics closer than the
    clustering threshold for at least 95% of random bases."""
    config = DetectorConfig()
    rng = np.random.default_rng(7)
    close = total = 0
    while total < 1000:
        q = synth.random_quadric(rng, QuadricClass.CENTRAL)
        P, N = synth.sample_surface(q, 3, rng)
        sol = solution(P, N)
        b = int(rng.integers(1, config.bin_count - 1))
        width = np.pi / config.bin_count
        t1, t2 = rng.uniform(-np.pi / 2 + b * width, -np.pi / 2 + (b + 1) * width, 2)
        q1, q2 = sol.at(np.tan(t1) * sol.p_norm), sol.at(np.tan(t2) * sol.p_norm)
        d = max(d_close(q1, q2, config.close_gate), d_close(q2, q1, config.close_gate))
        close += d < config.eps_close
        total += 1
    assert close / total >= 0.95, f"{close / total:.3f} of bases"


# accumulator


def test_single_vote():
    acc = vote(Accumulator(), 10, 0.5)
    assert acc.total == 1 and acc.lambda_lists[10] == [0.5]


def test_peak_bin_holds_repeated_votes():
    acc = Accumulator()
    vote_many(acc, [3] * 7 + [4, 5], np.arange(9.0))
    assert int(np.argmax(acc.bins)) == 3
    assert acc.total == sum(len(v) for v in acc.lambda_lists)


def test_vote_rejects_bad_bin():
    with pytest.raises(IndexError):
        vote(Accumulator(10), 10, 0.0)


def test_noiseless_votes_concentrate():
    rng = np.random.default_rng(11)
    fractions = []
    for _ in range(10):
        q = synth.random_ellipsoid(rng, np.zeros(3), radii=(0.3, 0.7))
        scene = synth.compose_scene([q], 200, 0.0, 0.0, rng)
        P, N = scene.points, scene.normals
        sol = solution(P[:3], N[:3])
        lam, valid = lambdas_fast_1d(sol, P[3:], N[3:])
        bins = theta_bin(theta(lam[valid], sol))
        fractions.append(np.bincount(bins, minlength=90).max() / valid.sum())
    assert min(fractions) >= 0.9, f"peak-bin fractions {np.round(fractions, 2)}"


def test_noiseless_votes_concentrate_on_consistent_data():
    # data for which the unit-normal system is exact
    for seed in range(10):
        _, P, N = basis_samples(300 + seed, 200, level=True)
        sol = solution(P[:3], N[:3])
        lam, valid = lambdas_fast_1d(sol, P[3:], N[3:])
        bins = theta_bin(theta(lam[valid], sol))
        assert np.bincount(bins).max() == valid.sum()


def test_peak_lambda_is_bin_mean():
    _, P, N = basis_samples(12, 3)
    sol = solution(P, N)
    acc = vote_many(Accumulator(), [50, 50, 50], [2.0, 2.1, 1.9])
    peak = extract_peak(acc, 3, sol)
    assert peak.lam == pytest.approx(2.0)
    assert peak.votes == 3 and peak.bin == 50
    np.testing.assert_allclose(peak.q, quadric.unit(sol.at(2.0)))


def test_peak_below_threshold():
    _, P, N = basis_samples(12, 3)
    sol = solution(P, N)
    acc = vote_many(Accumulator(), [50, 50], [2.0, 2.1])
    with pytest.raises(NoConsensus):
        extract_peak(acc, 3, sol)
    with pytest.raises(NoConsensus):
        extract_peak(Accumulator(), 0, sol)


def test_peak_from_noisy_voters():
    """Exact basis on an ellipsoid, 200 voters at 0.5% noise, s_min = 20."""
    rng = np.random.default_rng(13)
    errors = []
    for _ in range(10):
        q = synth.random_ellipsoid(rng, np.zeros(3), radii=(0.3, 0.7))
        P, N, level = synth.sample_gradient_level(q, 203, rng)
        sol = solution(P[:3], N[:3])
        Pn, Nn = synth.add_noise(P[3:], N[3:], 0.005, synth.quadric_size(P), rng)
        lam, valid = lambdas_fast_1d(sol, Pn, Nn)
        acc = vote_many(Accumulator(), theta_bin(theta(lam[valid], sol)), lam[valid])
        errors.append(coeff_distance(extract_peak(acc, 20, sol).q, q))
    assert max(errors) < 1e-3, f"coefficient errors {np.round(errors, 4)}"
