"""Command line: fit, detect, synth and bench."""

from __future__ import annotations

import argparse
import sys
import time
from pathlib import Path
from typing import Sequence

import numpy as np

from . import bench, io, quadric, synth
from .detector import DetectorConfig, PointCloud, detect, detect_spheres, estimate_normals, normalize_unit_ball, preprocess
from .errors import FormatUnsupported, ParseError, QuadricError
from .fitting import fit_approx, fit_full, fit_sphere, fit_taubin

EXIT_OK, EXIT_INPUT, EXIT_NO_DETECTION = 0, 2, 3


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_help(sys.stderr)
        self.exit(EXIT_INPUT, f"{self.prog}: error: {message}\n")


def _floats(text: str) -> list[float]:
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _point(text: str) -> np.ndarray:
    vals = _floats(text)
    if len(vals) != 3:
        raise argparse.ArgumentTypeError("expected x,y,z")
    return np.array(vals)


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="quadricvote", description="Quadric fitting and detection on oriented point clouds.")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)

    f = sub.add_parser("fit", help="fit one quadric to a whole cloud")
    f.add_argument("input", type=Path)
    f.add_argument("--method", choices=("full", "approx", "taubin", "sphere"), default="approx")
    f.add_argument("--omega", type=float, default=1.0)
    f.add_argument("--normal-k", type=int, default=12, help="neighbors for normals when the file has none")
    f.add_argument("--viewpoint", type=_point, help="orient estimated normals toward x,y,z")
    f.add_argument("--out", type=Path, help="JSON report path (default: stdout)")
    f.add_argument("--debug", action="store_true", help="also report the unit-ball-frame result")

    d = sub.add_parser("detect", help="detect quadrics or spheres in a scene")
    d.add_argument("input", type=Path)
    d.add_argument("--config", type=Path, help="TOML or JSON file with detector settings")
    d.add_argument("--type", choices=("generic", "sphere"), default="generic")
    d.add_argument("--tau-s", type=float)
    d.add_argument("--tau-n", type=float)
    d.add_argument("--s-min", type=int)
    d.add_argument("--max-bases", type=int)
    d.add_argument("--seed", type=int)
    d.add_argument("--threads", type=int, default=1, help="worker threads for per-basis voting")
    d.add_argument("--remove-planes", action="store_const", const=True)
    d.add_argument("--don", dest="use_don", action="store_const", const=True)
    d.add_argument("--viewpoint", type=_point)
    d.add_argument("--expect-min", type=int, default=0, help="exit 3 with fewer detections")
    d.add_argument("--out", type=Path)
    d.add_argument("--timing", action="store_true", help="include wall-clock timings (output no longer reproducible)")
    d.add_argument("--debug", action="store_true")

    s = sub.add_parser("synth", help="write a synthetic scene and its ground truth")
    s.add_argument("output", type=Path, help=".ply, .xyz or .xyzn")
    s.add_argument("--shape", default="ellipsoid",
                   choices=("ellipsoid", "sphere", "central", "non_central_degenerate", "plane", "plane_pair", "any"))
    s.add_argument("--count", type=int, default=2)
    s.add_argument("--points", type=int, default=500, help="samples per surface")
    s.add_argument("--clutter", type=float, default=0.3)
    s.add_argument("--sigma", type=float, default=0.005)
    s.add_argument("--perturb-normals", action="store_true")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--ascii", action="store_true", help="ASCII instead of binary PLY")
    s.add_argument("--truth", type=Path, help="ground-truth JSON path")

    b = sub.add_parser("bench", help="noise sweep of the linear fits, CSV output")
    b.add_argument("--methods", default=",".join(bench.METHODS))
    b.add_argument("--sigma-grid", type=_floats, default=list(bench.SIGMA_GRID))
    b.add_argument("--trials", type=int, default=20)
    b.add_argument("--quadrics", type=int, default=10)
    b.add_argument("--points", type=int, default=20)
    b.add_argument("--omega", type=float, default=1.0)
    b.add_argument("--perturb-normals", action="store_true")
    b.add_argument("--seed", type=int, default=0)
    b.add_argument("--threads", type=int, default=1)
    b.add_argument("--timing", action="store_true", help="record fit runtimes (output no longer reproducible)")
    b.add_argument("--out", type=Path)
    return p


def _emit(text: str, out: Path | None) -> None:
    if out is None:
        sys.stdout.write(text)
    else:
        out.write_text(text)


def _oriented(cloud: PointCloud, k: int, viewpoint) -> PointCloud:
    if cloud.normals is not None:
        n = cloud.normals / np.linalg.norm(cloud.normals, axis=1, keepdims=True)
        return PointCloud(cloud.points, n, cloud.diameter)
    return estimate_normals(cloud, k, viewpoint)


def cmd_fit(args) -> int:
    cloud = io.read_cloud(args.input)
    normed, rec = normalize_unit_ball(cloud)
    vp = None if args.viewpoint is None else rec.apply(args.viewpoint)
    normed = _oriented(normed, args.normal_k, vp)
    P, N = normed.points, normed.normals
    report: dict = {"command": "fit", "method": args.method, "omega": args.omega, "n_points": len(P)}
    if args.method == "sphere":
        res = fit_sphere(P, N, args.omega)
        c, r = rec.sphere_to_input(res.center, res.radius)
        q_norm, residual = res.q, res.residual
        report.update(center=c, radius=r)
    else:
        fit = {"full": lambda: fit_full(P, N, args.omega), "approx": lambda: fit_approx(P, N, args.omega),
               "taubin": lambda: fit_taubin(P)}[args.method]()
        q_norm, residual = fit.q, fit.residual
    q = quadric.normalize(rec.quadric_to_input(q_norm))
    report.update(q=q, **{"class": quadric.classify(q).value}, residual=residual)
    if args.debug:
        report["q_normalized"] = quadric.normalize(q_norm)
        report["normalization"] = {"center": rec.center, "scale": rec.scale}
    _emit(io.report_json(report), args.out)
    return EXIT_OK


def _config(args) -> DetectorConfig:
    base = DetectorConfig.load(args.config) if args.config else DetectorConfig()
    return base.with_overrides(
        tau_s=args.tau_s, tau_n=args.tau_n, s_min=args.s_min, max_bases=args.max_bases,
        seed=args.seed, remove_planes=args.remove_planes, use_don=args.use_don,
    )


def cmd_detect(args) -> int:
    config = _config(args)
    t0 = time.perf_counter()
    cloud = io.read_cloud(args.input)
    prep = preprocess(cloud, config, args.viewpoint)
    t1 = time.perf_counter()
    rec = prep.normalization
    detections = []
    if args.type == "sphere":
        for h in detect_spheres(prep.cloud, config, args.threads):
            c, r = rec.sphere_to_input(h.center, h.radius)
            q = quadric.normalize(quadric.sphere_quadric(c, r))
            item = {"center": c, "radius": r, "q": q, "class": quadric.classify(q).value,
                    "score": h.score, "votes": h.votes, "support_count": h.support_count}
            if args.debug:
                item.update(center_normalized=h.center, radius_normalized=h.radius)
            detections.append(item)
    else:
        for h in detect(prep.cloud, config, args.threads):
            q = quadric.normalize(rec.quadric_to_input(h.q))
            item = {"q": q, "class": quadric.classify(q).value, "score": h.score, "votes": h.votes,
                    "support_count": h.support_count}
            if args.debug:
                item.update(q_normalized=quadric.normalize(h.q), basis=list(h.basis.indices))
            detections.append(item)
    t2 = time.perf_counter()
    planes = []
    for pl in prep.planes:
        # plane in input coordinates: Πᵀ T x with T the normalizing map
        v = rec.matrix.T @ pl
        planes.append(v / np.linalg.norm(v[:3]))
    report = {
        "command": "detect",
        "type": args.type,
        "input": str(args.input),
        "config": config.to_dict(),
        "seed": config.seed,
        "n_points": len(cloud),
        "n_sampled": len(prep.cloud),
        "normalization": {"center": rec.center, "scale": rec.scale},
        "planes_removed": planes,
        "detections": detections,
    }
    if args.timing:
        report["timings"] = {"preprocess_s": t1 - t0, "detect_s": t2 - t1}
    _emit(io.report_json(report), args.out)
    if len(detections) < args.expect_min:
        print(f"expected at least {args.expect_min} detections, found {len(detections)}", file=sys.stderr)
        return EXIT_NO_DETECTION
    return EXIT_OK


def cmd_synth(args) -> int:
    if args.count < 1 or args.points < 1:
        raise ValueError("--count and --points must be positive")
    rng = np.random.default_rng(args.seed)
    spheres = []
    if args.shape in ("ellipsoid", "sphere"):
        centers = synth.disjoint_centers(rng, args.count)
        qs = []
        for c in centers:
            if args.shape == "sphere":
                r = float(rng.uniform(0.15, 0.3))
                qs.append(quadric.normalize(quadric.sphere_quadric(c, r)))
                spheres.append({"center": c, "radius": r})
            else:
                qs.append(synth.random_ellipsoid(rng, c))
    else:
        qs = [synth.random_quadric(rng, None if args.shape == "any" else args.shape) for _ in range(args.count)]
    scene = synth.compose_scene(qs, args.points, args.clutter, args.sigma, rng, args.perturb_normals)
    io.write_cloud(args.output, scene.points, scene.normals, binary=not args.ascii)
    if args.truth:
        truth = {
            "command": "synth",
            "seed": args.seed,
            "shape": args.shape,
            "sigma": args.sigma,
            "clutter": args.clutter,
            "quadrics": qs,
            "classes": [quadric.classify(q).value for q in qs],
            "sizes": scene.sizes,
            "labels": scene.labels,
        }
        if spheres:
            truth["spheres"] = spheres
        io.write_report(truth, args.truth)
    return EXIT_OK


def cmd_bench(args) -> int:
    methods = [m.strip() for m in args.methods.split(",") if m.strip()]
    rows = bench.sweep(
        methods, args.sigma_grid, args.trials, args.seed, args.quadrics, args.points, args.omega,
        args.perturb_normals, threads=args.threads, timed=args.timing,
    )
    _emit(io.csv_text((r.as_csv() for r in rows), bench.CSV_HEADER), args.out)
    return EXIT_OK


COMMANDS = {"fit": cmd_fit, "detect": cmd_detect, "synth": cmd_synth, "bench": cmd_bench}


def main(argv: Sequence[str] | None = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if args.command is None:
        parser.print_help(sys.stderr)
        return EXIT_INPUT
    try:
        return COMMANDS[args.command](args)
    except (ParseError, FormatUnsupported, FileNotFoundError, IsADirectoryError, ValueError, QuadricError) as exc:
        print(f"quadricvote {args.command}: {exc}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
