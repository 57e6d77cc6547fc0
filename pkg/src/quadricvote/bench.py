"""Noise-sweep benchmark of the linear fits against ground truth."""

from __future__ import annotations

import math
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from numpy.typing import NDArray

from . import quadric, synth
from .errors import QuadricError
from .fitting import fit_approx, fit_full, fit_taubin
from .quadric import QuadricClass

METHODS = ("ours-full", "ours-approx", "taubin")
SIGMA_GRID = (0.0, 0.01, 0.02, 0.03, 0.04, 0.05)
CSV_HEADER = ("method", "sigma", "trial", "geom_err", "ang_err", "gradnorm_err", "runtime_s")


@dataclass(frozen=True)
class FitMetrics:
    mean_geom_error: float
    mean_angular_error: float
    gradient_norm_error: float
    runtime: float
    failed: bool = False
    error: str = ""


def _fitter(method: str, omega: float) -> Callable[[NDArray, NDArray], NDArray]:
    if method == "ours-full":
        return lambda P, N: fit_full(P, N, omega).q
    if method == "ours-approx":
        return lambda P, N: fit_approx(P, N, omega).q
    if method == "taubin":
        return lambda P, N: fit_taubin(P).q
    raise ValueError(f"unknown method {method!r}; choose from {', '.join(METHODS)}")


def fit_metrics(q_fit, q_gt, points, normals) -> tuple[float, float, float]:
    """Geometric, angular and gradient-norm errors on ground-truth vertices.

    Both quadrics are normalized first; the fitted gradient field is flipped
    if most of its gradients oppose the ground-truth normals.
    """
    q_fit, q_gt = quadric.normalize(q_fit), quadric.normalize(q_gt)
    geom = float(np.mean(synth.geometric_distance(q_fit, points)))
    g = quadric.gradient(q_fit, points)
    gn = np.linalg.norm(g, axis=1)
    if np.einsum("ij,ij->", g, normals) < 0:
        g = -g
    cos = np.einsum("ij,ij->i", g, normals) / np.where(gn > 0, gn, 1.0)
    ang = float(np.mean(np.clip(1.0 - cos, 0.0, 2.0)))
    gt_norm = np.linalg.norm(quadric.gradient(q_gt, points), axis=1)
    return geom, ang, float(np.mean(np.abs(gn - gt_norm)))


def evaluate_fit(method: str, scene: synth.GroundTruthScene, omega: float = 1.0, timed: bool = True) -> FitMetrics:
    """Fit the noisy samples of quadric 0 and score it on the clean ones.

    Fit failures come back as a record with ``failed=True`` and NaN metrics.
    """
    fit = _fitter(method, omega)
    mask = scene.labels == 0
    t0 = time.perf_counter()
    try:
        q = fit(scene.points[mask], scene.normals[mask])
    except (QuadricError, ValueError, np.linalg.LinAlgError) as exc:
        nan = math.nan
        return FitMetrics(nan, nan, nan, 0.0, True, f"{type(exc).__name__}: {exc}")
    runtime = time.perf_counter() - t0 if timed else 0.0
    geom, ang, gnorm = fit_metrics(q, scene.quadrics[0], scene.clean[mask], scene.clean_normals[mask])
    return FitMetrics(geom, ang, gnorm, runtime)


@dataclass(frozen=True)
class SweepRow:
    method: str
    sigma: float
    trial: int
    metrics: FitMetrics

    def as_csv(self) -> tuple:
        m = self.metrics
        return (self.method, self.sigma, self.trial, m.mean_geom_error, m.mean_angular_error,
                m.gradient_norm_error, m.runtime)


def _trial(seed, sigma_index, sigma, quadric_index, q, rep, trial, methods, points, omega, perturb, timed):
    rng = np.random.default_rng([seed, sigma_index, quadric_index, rep])
    scene = synth.compose_scene([q], points, 0.0, sigma, rng, perturb_normals=perturb)
    return [SweepRow(m, sigma, trial, evaluate_fit(m, scene, omega, timed)) for m in methods]


def sweep(
    methods: Sequence[str] = METHODS,
    sigmas: Iterable[float] = SIGMA_GRID,
    trials: int = 20,
    seed: int = 0,
    n_quadrics: int = 10,
    points: int = 20,
    omega: float = 1.0,
    perturb_normals: bool = False,
    quadric_class: QuadricClass | str = QuadricClass.CENTRAL,
    threads: int = 1,
    timed: bool = False,
) -> list[SweepRow]:
    """``n_quadrics`` random quadrics, each fitted ``trials`` times per noise
    level with fresh samples and noise.

    Every (sigma, quadric, repetition) owns an RNG stream derived from
    ``seed``, so the table does not depend on ``threads``. Rows are ordered by
    method, sigma, then trial (trial = quadric * trials + repetition).
    Runtimes are recorded only with ``timed=True``; otherwise they are 0 and
    the output is reproducible byte for byte.
    """
    for m in methods:
        _fitter(m, omega)
    sigmas = list(sigmas)
    qs = [synth.random_quadric(np.random.default_rng([seed, 10_000 + i]), quadric_class) for i in range(n_quadrics)]
    jobs = [
        (seed, si, s, qi, q, rep, qi * trials + rep, tuple(methods), points, omega, perturb_normals, timed)
        for si, s in enumerate(sigmas)
        for qi, q in enumerate(qs)
        for rep in range(trials)
    ]
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(lambda a: _trial(*a), jobs))
    else:
        results = [_trial(*a) for a in jobs]
    rows = [r for batch in results for r in batch]
    order = {m: i for i, m in enumerate(methods)}
    rows.sort(key=lambda r: (order[r.method], sigmas.index(r.sigma), r.trial))
    return rows


def median_errors(rows: Sequence[SweepRow], method: str) -> dict[float, float]:
    """Median geometric error per sigma over the successful trials."""
    out: dict[float, list[float]] = {}
    for r in rows:
        if r.method == method and not r.metrics.failed:
            out.setdefault(r.sigma, []).append(r.metrics.mean_geom_error)
    return {s: float(np.median(v)) for s, v in out.items()}


def metrics_dict(m: FitMetrics) -> dict:
    return asdict(m)


@dataclass(frozen=True)
class MatchResult:
    precision: float
    recall: float
    matches: list[tuple[int, int]]  # (detection index, ground-truth index)
    precision_defined: bool = True


def match_detections(
    detected: Sequence[NDArray[np.float64]],
    scene: synth.GroundTruthScene,
    tau: float = 0.01,
    tau_n: float = 0.85,
    threshold: float = 0.3,
) -> MatchResult:
    """Greedy one-to-one matching by ascending d_far over each ground-truth
    quadric's own labeled samples."""
    from .detector.scoring import compatible

    pairs = []
    for gi, q_gt in enumerate(scene.quadrics):
        P, N = scene.surface(gi)
        gt_mask = compatible(q_gt, P, N, tau, tau_n)
        for di, q in enumerate(detected):
            d = 1.0 - float(np.mean(compatible(q, P, N, tau, tau_n) & gt_mask))
            if d < threshold:
                pairs.append((d, di, gi))
    pairs.sort()
    used_d, used_g, matches = set(), set(), []
    for _, di, gi in pairs:
        if di in used_d or gi in used_g:
            continue
        used_d.add(di)
        used_g.add(gi)
        matches.append((di, gi))
    n_gt = len(scene.quadrics)
    recall = len(matches) / n_gt if n_gt else 1.0
    if not detected:
        return MatchResult(1.0, recall, [], precision_defined=False)
    return MatchResult(len(matches) / len(detected), recall, sorted(matches))


TAU_GRID = (0.0025, 0.005, 0.0075, 0.01, 0.015, 0.02, 0.03)


def _calibration_quadric(rng, population):
    if population == "scene":
        # objects as placed by the synthetic detection scenes
        return synth.random_ellipsoid(rng, synth.random_in_ball(rng, 1, 0.5)[0])
    return synth.random_quadric(rng, population)


def inlier_fraction(
    tau: float,
    sigma: float = 0.005,
    n_quadrics: int = 50,
    points: int = 200,
    seed: int = 0,
    population: str = "scene",
    diameter: float = 2.0,
) -> float:
    """Share of noisy ground-truth samples whose algebraic distance to their
    own unit-norm quadric is below ``tau``.

    Noise is ``sigma`` times the scene ``diameter``. ``population`` is
    "scene" for detection-scene ellipsoids or a class name for
    :func:`synth.random_quadric`.
    """
    rng = np.random.default_rng(seed)
    hits = total = 0
    for _ in range(n_quadrics):
        q = quadric.unit(_calibration_quadric(rng, population))
        P, N = synth.sample_surface(q, points, rng)
        noisy, _ = synth.add_noise(P, N, sigma, diameter, rng)
        hits += int(np.count_nonzero(np.abs(quadric.algebraic_distance(q, noisy)) < tau))
        total += len(noisy)
    return hits / total


def calibrate_tau(target: float = 0.9, sigma: float = 0.005, grid: Sequence[float] = TAU_GRID, **kwargs) -> float:
    """Smallest τ on ``grid`` keeping at least ``target`` of the samples at
    noise ``sigma`` as inliers of their ground-truth quadric."""
    for tau in sorted(grid):
        if inlier_fraction(tau, sigma, **kwargs) >= target:
            return tau
    raise ValueError(f"no tau on the grid reaches {target:.0%} inliers at sigma={sigma}")
