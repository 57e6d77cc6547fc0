"""Synthetic quadrics, surface sampling, noise and scene composition."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from numpy.typing import ArrayLike, NDArray
from scipy.spatial import cKDTree
from scipy.spatial.transform import Rotation

from . import quadric
from .errors import NotCentral, QuadricError, UnsampleableSurface
from .quadric import QuadricClass

MAX_ATTEMPTS = 100
COARSE_CLASSES = (
    QuadricClass.PLANE,
    QuadricClass.PLANE_PAIR,
    QuadricClass.CENTRAL,
    QuadricClass.NON_CENTRAL,
)


def random_rotation(rng: np.random.Generator) -> NDArray[np.float64]:
    return Rotation.random(random_state=rng).as_matrix()


def _pose(rng, max_offset):
    """Homogeneous map world -> canonical for a random rigid placement."""
    R = random_rotation(rng)
    t = random_in_ball(rng, 1)[0] * max_offset
    T = np.eye(4)
    T[:3, :3] = R.T
    T[:3, 3] = -R.T @ t
    return T


def random_in_ball(rng: np.random.Generator, count: int, radius: float = 1.0) -> NDArray[np.float64]:
    d = random_unit_vectors(rng, count)
    r = radius * rng.random(count) ** (1.0 / 3.0)
    return d * r[:, None]


def random_unit_vectors(rng: np.random.Generator, count: int) -> NDArray[np.float64]:
    v = rng.normal(size=(count, 3))
    return v / np.linalg.norm(v, axis=1, keepdims=True)


def _random_plane(rng, max_offset=0.5):
    n = random_unit_vectors(rng, 1)[0]
    return np.append(n, rng.uniform(-max_offset, max_offset))


def _canonical(rng, cls: QuadricClass):
    if cls is QuadricClass.PLANE:
        return quadric.to_coeffs(quadric.plane_quadric(_random_plane(rng))), False
    if cls is QuadricClass.PLANE_PAIR:
        Q = quadric.plane_pair(_random_plane(rng), _random_plane(rng))
        return quadric.to_coeffs(Q), False
    if cls is QuadricClass.CENTRAL:
        a, b, c = rng.uniform(0.25, 0.7, size=3)
        signs = [(1, 1, 1), (1, 1, -1), (1, -1, -1)][rng.integers(3)]
        return np.array([signs[0] / a**2, signs[1] / b**2, signs[2] / c**2, 0, 0, 0, 0, 0, 0, -1.0]), True
    if cls is QuadricClass.NON_CENTRAL:
        kind = rng.integers(3)
        if kind == 0:  # elliptic cylinder
            a, b = rng.uniform(0.25, 0.7, size=2)
            return np.array([1 / a**2, 1 / b**2, 0, 0, 0, 0, 0, 0, 0, -1.0]), True
        # elliptic (kind 1) or hyperbolic (kind 2) paraboloid: z = x²/a ± y²/b - h
        a, b = rng.uniform(0.5, 2.0, size=2)
        sb = 1.0 if kind == 1 else -1.0
        h = rng.uniform(0.0, 0.4)
        return np.array([1 / a, sb / b, 0, 0, 0, 0, 0, 0, -0.5, -h]), True
    raise ValueError(f"cannot generate class {cls}")


def random_quadric(rng: np.random.Generator, cls: QuadricClass | str | None = None) -> NDArray[np.float64]:
    """Random quadric of a coarse class whose surface crosses the unit ball.

    ``cls=None`` (or "any") draws the class uniformly from the four classes
    with a real locus.
    """
    if cls is None or cls == "any":
        cls = COARSE_CLASSES[rng.integers(len(COARSE_CLASSES))]
    cls = QuadricClass(cls)
    for _ in range(MAX_ATTEMPTS):
        q, posed = _canonical(rng, cls)
        if posed:
            q = quadric.transform(q, _pose(rng, 0.3))
        q = quadric.normalize(q)
        if quadric.classify(q) is not cls:
            continue
        try:
            sample_surface(q, 4, rng, max_rays=4000)
        except UnsampleableSurface:
            continue
        return q
    raise QuadricError(f"could not generate a {cls.value} quadric in {MAX_ATTEMPTS} attempts")


def random_ellipsoid(
    rng: np.random.Generator,
    center: ArrayLike = (0.0, 0.0, 0.0),
    radii: tuple[float, float] = (0.15, 0.3),
) -> NDArray[np.float64]:
    """Randomly rotated ellipsoid with semi-axes drawn from ``radii``."""
    a, b, c = rng.uniform(*radii, size=3)
    q = np.array([1 / a**2, 1 / b**2, 1 / c**2, 0, 0, 0, 0, 0, 0, -1.0])
    T = np.eye(4)
    R = random_rotation(rng)
    T[:3, :3] = R.T
    T[:3, 3] = -R.T @ np.asarray(center, dtype=np.float64)
    return quadric.normalize(quadric.transform(q, T))


def orientation_sign(q: ArrayLike) -> float:
    """Sign that makes s·∇Q point away from the center of a central quadric.

    On the surface (x − c)·∇f = −2 f(c), so outward means f(c) < 0. Non-central
    quadrics and cones keep the gradient of ``q`` as given.
    """
    Q = quadric.as_matrix(q)
    if quadric.classify(Q) is not QuadricClass.CENTRAL:
        return 1.0
    try:
        c = quadric.center(Q)
    except NotCentral:
        return 1.0
    k = quadric.algebraic_distance(Q, c)
    if abs(k) < 1e-12 * np.abs(Q).max():
        return 1.0
    return 1.0 if k < 0 else -1.0


def surface_normals(q: ArrayLike, points: ArrayLike) -> NDArray[np.float64]:
    g = quadric.gradient(q, points) * orientation_sign(q)
    return g / np.linalg.norm(g, axis=-1, keepdims=True)


def _ray_hits(Q, origins, dirs):
    O = quadric.homogeneous(origins)
    D = np.concatenate([dirs, np.zeros((len(dirs), 1))], axis=1)
    a = np.einsum("ij,jk,ik->i", D, Q, D)
    b = 2 * np.einsum("ij,jk,ik->i", D, Q, O)
    c = np.einsum("ij,jk,ik->i", O, Q, O)
    disc = b * b - 4 * a * c
    ok = disc >= 0
    sq = np.sqrt(np.where(ok, disc, 0.0))
    qq = -0.5 * (b + np.where(b >= 0, sq, -sq))
    with np.errstate(divide="ignore", invalid="ignore"):
        t1 = np.where(np.abs(a) > 1e-14, qq / a, np.nan)
        t2 = np.where(np.abs(qq) > 1e-14, c / qq, np.nan)
    ts = np.stack([t1, t2], axis=1)
    ts[~ok] = np.nan
    # one Newton polish on the ray polynomial
    g = a[:, None] * ts**2 + b[:, None] * ts + c[:, None]
    dg = 2 * a[:, None] * ts + b[:, None]
    with np.errstate(divide="ignore", invalid="ignore"):
        ts = np.where(np.abs(dg) > 1e-14, ts - g / dg, ts)
    pts = origins[:, None, :] + ts[..., None] * dirs[:, None, :]
    pts = pts.reshape(-1, 3)
    good = np.isfinite(pts).all(axis=1)
    pts = pts[good]
    return pts[np.linalg.norm(pts, axis=1) <= 1.0]


def sample_surface(
    q: ArrayLike,
    count: int,
    rng: np.random.Generator,
    max_rays: int = 200_000,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Random oriented samples of the surface inside the unit ball.

    Rays from random interior seeds are intersected with the quadric; normals
    are unit gradients with one global sign (see :func:`orientation_sign`).
    """
    q = quadric.normalize(q) if np.asarray(q).shape == (4, 4) else np.asarray(q, dtype=np.float64)
    Q = quadric.as_matrix(q)
    if quadric.classify(Q) is QuadricClass.PLANE:
        return _sample_plane(Q, count, rng, max_rays)
    pts_all, rays = [], 0
    found = 0
    batch = max(64, 4 * count)
    while found < count and rays < max_rays:
        n = min(batch, max_rays - rays)
        hits = _ray_hits(Q, random_in_ball(rng, n), random_unit_vectors(rng, n))
        rays += n
        if len(hits):
            g = quadric.gradient(Q, hits)
            keep = np.linalg.norm(g, axis=1) > 1e-9
            keep &= np.abs(quadric.algebraic_distance(Q, hits)) < 1e-12
            hits = hits[keep]
        pts_all.append(hits)
        found += len(hits)
        if rays >= 1000 and found < 0.01 * rays:
            break
    if found < count:
        raise UnsampleableSurface(f"{found} hits from {rays} rays")
    pts = np.concatenate(pts_all)[:count]
    return pts, surface_normals(q, pts)


def _sample_plane(Q, count, rng, max_rays):
    w, V = np.linalg.eigh(Q)
    plane = V[:, np.argmax(np.abs(w))]
    n = plane[:3] / np.linalg.norm(plane[:3])
    d = plane[3] / np.linalg.norm(plane[:3])
    if abs(d) > 1.0:
        raise UnsampleableSurface("plane misses the unit ball")
    pts = random_in_ball(rng, 4 * count + 16)
    pts = pts - ((pts @ n + d)[:, None]) * n
    pts = pts[np.linalg.norm(pts, axis=1) <= 1.0][:count]
    if len(pts) < count:
        raise UnsampleableSurface("too few plane samples inside the unit ball")
    return pts, np.tile(n, (count, 1))


def sample_gradient_level(
    q: ArrayLike,
    count: int,
    rng: np.random.Generator,
    level: float | None = None,
) -> tuple[NDArray[np.float64], NDArray[np.float64], float]:
    """Surface samples that all share one gradient norm.

    These are the noiseless data for which ∇Q(xᵢ) = nᵢ holds exactly after
    scaling q by 1/level, i.e. the data the unit-scale fit reproduces exactly.
    Returns (points, normals, level).
    """
    q = np.asarray(q, dtype=np.float64)
    Q = quadric.as_matrix(q)
    M, bvec = Q[:3, :3], Q[:3, 3]
    out = []
    total = 0
    for _ in range(20):
        start, _ = sample_surface(q, 4 * count, rng)
        if level is None:
            level = float(np.median(np.linalg.norm(quadric.gradient(Q, start), axis=1)))
        x = start.copy()
        for _ in range(60):
            g = 2 * (x @ M + bvec)
            f = quadric.algebraic_distance(Q, x)
            h = np.einsum("ij,ij->i", g, g) - level**2
            J = np.stack([g, 4 * g @ M], axis=1)  # (k, 2, 3)
            F = np.stack([f, h], axis=1)
            JJt = J @ J.transpose(0, 2, 1)
            ok = np.abs(np.linalg.det(JJt)) > 1e-20
            step = np.zeros_like(x)
            sol = np.linalg.solve(JJt[ok], F[ok][..., None])[..., 0]
            step[ok] = np.einsum("kij,ki->kj", J[ok], sol)
            x = x - step
        g = 2 * (x @ M + bvec)
        gn = np.linalg.norm(g, axis=1)
        good = (
            np.isfinite(x).all(axis=1)
            & (np.abs(quadric.algebraic_distance(Q, x)) < 1e-13)
            & (np.abs(gn - level) < 1e-12 * level)
            & (np.linalg.norm(x, axis=1) <= 1.0)
        )
        out.append(x[good])
        total += int(good.sum())
        if total >= count:
            break
    if total < count:
        raise UnsampleableSurface(f"only {total} samples on the gradient level set")
    pts = np.concatenate(out)
    pts = pts[rng.permutation(len(pts))[:count]]
    return pts, surface_normals(q, pts), float(level)


def quadric_size(points: ArrayLike) -> float:
    """Bounding-box diagonal of surface samples (already clipped to the ball)."""
    P = np.asarray(points, dtype=np.float64)
    return float(np.linalg.norm(P.max(axis=0) - P.min(axis=0)))


def pca_normals(points: ArrayLike, k: int = 12) -> NDArray[np.float64]:
    """Unsigned normals from the smallest eigenvector of each k-NN covariance."""
    P = np.asarray(points, dtype=np.float64)
    k = min(k, len(P))
    _, idx = cKDTree(P).query(P, k=k)
    nb = P[idx]
    nb = nb - nb.mean(axis=1, keepdims=True)
    cov = np.einsum("nki,nkj->nij", nb, nb)
    _, V = np.linalg.eigh(cov)
    return V[:, :, 0]


def add_noise(
    points: ArrayLike,
    normals: ArrayLike,
    sigma: float,
    size: float,
    rng: np.random.Generator,
    perturb_normals: bool = False,
    k: int = 12,
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Isotropic Gaussian position noise with std ``sigma * size``.

    With ``perturb_normals`` the normals are re-estimated from the noisy
    neighborhoods and flipped toward the given (ground-truth) normals.
    """
    P = np.asarray(points, dtype=np.float64)
    N = np.asarray(normals, dtype=np.float64)
    if sigma < 0:
        raise ValueError("sigma must be non-negative")
    if sigma == 0:
        return P.copy(), N.copy()
    noisy = P + rng.normal(scale=sigma * size, size=P.shape)
    if not perturb_normals:
        return noisy, N.copy()
    est = pca_normals(noisy, k)
    flip = np.einsum("ij,ij->i", est, N) < 0
    est[flip] *= -1
    return noisy, est


def _foot_distances(Q, X):
    """Distance from each row of X to its nearest stationary foot point.

    In the eigenframe of the 3×3 block, y_i = (x_i − μ b_i) / (1 + μ λ_i);
    clearing denominators in f(y(μ)) = 0 leaves a degree-6 polynomial whose
    leading coefficients do not depend on x, so all rows share one degree and
    the roots come from a stack of companion matrices.
    """
    P = np.polynomial.polynomial
    lam, R = np.linalg.eigh(Q[:3, :3])
    br = R.T @ Q[:3, 3]
    xr = X @ R
    d2 = [P.polymul([1.0, l], [1.0, l]) for l in lam]
    coeffs = np.zeros((len(X), 7))
    coeffs[:, :] = Q[3, 3] * np.pad(P.polymul(P.polymul(d2[0], d2[1]), d2[2]), (0, 7))[:7]
    for i in range(3):
        others = np.pad(P.polymul(*[d2[j] for j in range(3) if j != i]), (0, 5))[:5]
        x, b, l = xr[:, i], br[i], lam[i]
        term = l * np.stack([x * x, -2 * x * b, np.full_like(x, b * b)], axis=1)
        term += 2 * b * np.stack([x, x * l - b, np.full_like(x, -b * l)], axis=1)
        for k in range(3):
            coeffs[:, k:k + 5] += term[:, k:k + 1] * others
    scale = np.abs(coeffs).max(axis=1, keepdims=True)
    scale[scale == 0] = 1.0
    coeffs /= scale
    lead = np.abs(coeffs).max(axis=0)
    deg = int(np.flatnonzero(lead > 1e-12)[-1]) if (lead > 1e-12).any() else 0
    out = np.full(len(X), np.inf)
    if deg < 1:
        return out
    top = coeffs[:, deg]
    ok = np.abs(top) > 1e-12
    comp = np.zeros((len(X), deg, deg))
    comp[:, 1:, :-1] = np.eye(deg - 1)
    comp[ok, :, -1] = -coeffs[ok, :deg] / top[ok, None]
    roots = np.linalg.eigvals(comp[ok])
    rows = np.flatnonzero(ok)
    for r in range(deg):
        mu = roots[:, r]
        real = np.abs(mu.imag) <= 1e-7 * np.maximum(1.0, np.abs(mu))
        mu = mu.real
        den = 1 + mu[:, None] * lam
        good = real & (np.abs(den).min(axis=1) > 1e-12)
        y = ((xr[rows] - mu[:, None] * br) / np.where(good[:, None], den, 1.0)) @ R.T
        g = 2 * (y @ Q[:3, :3] + Q[:3, 3])
        gg = np.einsum("ij,ij->i", g, g)
        good &= gg > 0
        y = y - (quadric.algebraic_distance(Q, y) / np.where(gg > 0, gg, 1.0))[:, None] * g  # polish
        good &= np.abs(quadric.algebraic_distance(Q, y)) < 1e-9 * np.sqrt(gg)
        dist = np.linalg.norm(X[rows] - y, axis=1)
        out[rows] = np.where(good, np.minimum(out[rows], dist), out[rows])
    return out


def geometric_distance(q: ArrayLike, x: ArrayLike, iterations: int = 20) -> NDArray[np.float64] | float:
    """Euclidean distance from points to the implicit surface.

    Points are first pushed onto the surface along the gradient, then the
    foot point is polished with Newton's method on the Lagrange conditions
    y − x + μ∇f(y) = 0, f(y) = 0. Points with a vanishing gradient fall back
    to the nearest of a dense surface sample.
    """
    Q = quadric.as_matrix(q)
    Q = Q / np.abs(Q).max()
    X = np.atleast_2d(np.asarray(x, dtype=np.float64))
    M, bvec = Q[:3, :3], Q[:3, 3]

    def f(y):
        return quadric.algebraic_distance(Q, y)

    def grad(y):
        return 2 * (y @ M + bvec)

    out = np.empty(len(X))
    g0 = np.linalg.norm(grad(X), axis=1)
    singular = g0 < 1e-12
    y = X[~singular].copy()
    x0 = X[~singular]
    for _ in range(iterations):
        g = grad(y)
        gg = np.einsum("ij,ij->i", g, g)
        y = y - (f(y) / np.where(gg > 0, gg, 1.0))[:, None] * g
    g = grad(y)
    gg = np.einsum("ij,ij->i", g, g)
    mu = np.einsum("ij,ij->i", x0 - y, g) / np.where(gg > 0, gg, 1.0)
    eye = np.eye(3)
    for _ in range(iterations):
        g = grad(y)
        F = np.concatenate([y - x0 + mu[:, None] * g, f(y)[:, None]], axis=1)
        if np.abs(F).max() < 1e-15:
            break
        J = np.zeros((len(y), 4, 4))
        J[:, :3, :3] = eye + 2 * mu[:, None, None] * M
        J[:, :3, 3] = g
        J[:, 3, :3] = g
        ok = np.abs(np.linalg.det(J)) > 1e-18
        if not ok.any():
            break
        delta = np.zeros((len(y), 4))
        delta[ok] = np.linalg.solve(J[ok], F[ok][..., None])[..., 0]
        y = y - delta[:, :3]
        mu = mu - delta[:, 3]
    out[~singular] = np.linalg.norm(x0 - y, axis=1)
    # Newton can settle on a non-global stationary point; check every root
    out[~singular] = np.minimum(out[~singular], _foot_distances(Q, x0))
    if singular.any():
        dense, _ = sample_surface(quadric.to_coeffs(Q), 20000, np.random.default_rng(0))
        dist, _ = cKDTree(dense).query(X[singular])
        out[singular] = dist
    return float(out[0]) if np.ndim(x) == 1 else out


@dataclass
class GroundTruthScene:
    quadrics: list[NDArray[np.float64]]
    points: NDArray[np.float64]
    normals: NDArray[np.float64]
    labels: NDArray[np.int64]  # quadric index, -1 for clutter
    clean: NDArray[np.float64]  # positions before noise (clutter unchanged)
    clean_normals: NDArray[np.float64]
    noise_sigma: float = 0.0
    sizes: list[float] = field(default_factory=list)

    def surface(self, i: int):
        m = self.labels == i
        return self.points[m], self.normals[m]


def compose_scene(
    quadrics: list[ArrayLike],
    per_surface_count: int,
    clutter_fraction: float,
    sigma: float,
    rng: np.random.Generator,
    perturb_normals: bool = False,
) -> GroundTruthScene:
    """Union of noisy surface samples and uniform unit-ball clutter."""
    if not 0.0 <= clutter_fraction < 1.0:
        raise ValueError("clutter_fraction must lie in [0, 1)")
    qs = [np.asarray(q, dtype=np.float64) for q in quadrics]
    pts, nrm, lab, clean, clean_n, sizes = [], [], [], [], [], []
    for i, q in enumerate(qs):
        P, N = sample_surface(q, per_surface_count, rng)
        size = quadric_size(P)
        Pn, Nn = add_noise(P, N, sigma, size, rng, perturb_normals)
        pts.append(Pn)
        nrm.append(Nn)
        clean.append(P)
        clean_n.append(N)
        lab.append(np.full(len(P), i))
        sizes.append(size)
    n_surface = per_surface_count * len(qs)
    n_clutter = int(round(clutter_fraction * n_surface / (1.0 - clutter_fraction)))
    if n_clutter:
        C = random_in_ball(rng, n_clutter)
        CN = random_unit_vectors(rng, n_clutter)
        pts.append(C)
        nrm.append(CN)
        clean.append(C)
        clean_n.append(CN)
        lab.append(np.full(n_clutter, -1))
    return GroundTruthScene(
        quadrics=qs,
        points=np.concatenate(pts),
        normals=np.concatenate(nrm),
        labels=np.concatenate(lab).astype(np.int64),
        clean=np.concatenate(clean),
        clean_normals=np.concatenate(clean_n),
        noise_sigma=sigma,
        sizes=sizes,
    )


def disjoint_centers(
    rng: np.random.Generator,
    count: int,
    extent: float = 0.55,
    separation: float = 0.65,
    max_tries: int = 10_000,
) -> NDArray[np.float64]:
    """Centers inside a ball of radius ``extent``, pairwise ``separation`` apart."""
    if count == 1:
        return random_in_ball(rng, 1, 0.2)
    if count == 2:
        d = random_unit_vectors(rng, 1)[0]
        return np.stack([0.5 * d, -0.5 * d])
    out: list[NDArray[np.float64]] = []
    for _ in range(max_tries):
        c = random_in_ball(rng, 1, extent)[0]
        if all(np.linalg.norm(c - o) >= separation for o in out):
            out.append(c)
            if len(out) == count:
                return np.array(out)
    raise QuadricError(f"cannot place {count} disjoint centers")
