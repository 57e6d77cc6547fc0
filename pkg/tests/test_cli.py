import json
import subprocess
import sys

import numpy as np
import pytest

from quadricvote import io, quadric, synth
from quadricvote.cli import main


@pytest.fixture
def sphere_ply(tmp_path):
    P, N = synth.sample_surface(quadric.unit_sphere(), 300, np.random.default_rng(0))
    path = tmp_path / "sphere.ply"
    io.write_cloud(path, 5.0 * P + [1.0, 2.0, 3.0], N)  # radius 5 around (1, 2, 3)
    return path


def run(capsys, *argv):
    code = main([str(a) for a in argv])
    out = capsys.readouterr()
    return code, out.out, out.err


@pytest.mark.parametrize("method", ["approx", "full", "taubin"])
def test_fit_recovers_sphere(capsys, sphere_ply, method):
    code, out, _ = run(capsys, "fit", "--method", method, sphere_ply)
    assert code == 0
    report = json.loads(out)
    target = quadric.normalize(quadric.sphere_quadric([1, 2, 3], 5.0))
    assert np.linalg.norm(np.array(report["q"]) - target) < 1e-8
    assert report["class"] == "central"


def test_fit_unit_sphere_fixture(capsys, tmp_path):
    P, N = synth.sample_surface(quadric.unit_sphere(), 100, np.random.default_rng(1))
    path = tmp_path / "unit.xyzn"
    io.write_cloud(path, P, N)
    code, out, _ = run(capsys, "fit", "--method", "approx", path)
    assert code == 0
    np.testing.assert_allclose(json.loads(out)["q"], quadric.normalize(quadric.unit_sphere()), atol=1e-8)


def test_fit_sphere_method(capsys, sphere_ply):
    code, out, _ = run(capsys, "fit", "--method", "sphere", sphere_ply)
    report = json.loads(out)
    assert code == 0
    np.testing.assert_allclose(report["center"], [1, 2, 3], atol=1e-8)
    assert report["radius"] == pytest.approx(5.0, abs=1e-8)


def test_bench_twice_identical(capsys, tmp_path):
    argv = ["bench", "--sigma-grid", "0,0.01", "--trials", "2", "--seed", "7", "--quadrics", "2"]
    _, a, _ = run(capsys, *argv)
    _, b, _ = run(capsys, *argv, "--threads", "3")
    assert a == b
    assert a.splitlines()[0] == "method,sigma,trial,geom_err,ang_err,gradnorm_err,runtime_s"
    assert len(a.splitlines()) == 1 + 3 * 2 * 2 * 2


def test_detect_sphere_fixture(capsys, tmp_path):
    scene = tmp_path / "scene.ply"
    truth = tmp_path / "truth.json"
    assert run(capsys, "synth", scene, "--shape", "sphere", "--count", "2", "--seed", "3", "--truth", truth)[0] == 0
    code, out, _ = run(capsys, "detect", "--type", "sphere", scene, "--expect-min", "1")
    assert code == 0
    report = json.loads(out)
    spheres = json.loads(truth.read_text())["spheres"]
    for s in spheres:
        best = min(np.linalg.norm(np.subtract(d["center"], s["center"])) + abs(d["radius"] - s["radius"])
                   for d in report["detections"])
        assert best < 0.02


def test_detect_generic_reports_config_and_input_frame(capsys, tmp_path):
    scene = tmp_path / "scene.ply"
    run(capsys, "synth", scene, "--seed", "4")
    cfg = tmp_path / "c.toml"
    cfg.write_text("tau_n = 0.8\ns_min = 12\n")
    code, out, _ = run(capsys, "detect", scene, "--config", cfg, "--s-min", "15", "--seed", "2")
    report = json.loads(out)
    assert code == 0
    assert report["config"]["tau_n"] == 0.8 and report["config"]["s_min"] == 15  # CLI wins
    assert report["seed"] == 2 and "timings" not in report
    assert all(len(d["q"]) == 10 and d["votes"] >= 15 for d in report["detections"])


def test_detect_expect_min_not_met(capsys, tmp_path):
    rng = np.random.default_rng(5)
    path = tmp_path / "noise.ply"
    io.write_cloud(path, synth.random_in_ball(rng, 300), synth.random_unit_vectors(rng, 300))
    code, _, err = run(capsys, "detect", path, "--expect-min", "5", "--max-bases", "20")
    assert code == 3
    assert "expected at least 5" in err


@pytest.mark.parametrize(
    "argv",
    [
        [],
        ["fit"],
        ["fit", "x.ply", "--method", "magic"],
        ["detect", "x.ply", "--tau-n", "abc"],
        ["bench", "--sigma-grid", "0,a"],
        ["nope"],
    ],
)
def test_usage_errors_exit_two(capsys, argv):
    try:
        code = main(argv)
    except SystemExit as exc:
        code = exc.code
    assert code == 2
    assert "usage" in capsys.readouterr().err


def test_input_errors_exit_two(capsys, tmp_path):
    bad = tmp_path / "bad.ply"
    bad.write_text("not a ply\n")
    assert run(capsys, "fit", bad)[0] == 2
    assert run(capsys, "fit", tmp_path / "missing.xyz")[0] == 2
    assert run(capsys, "fit", tmp_path / "cloud.obj")[0] == 2


def test_module_entry_point(tmp_path):
    out = subprocess.run([sys.executable, "-m", "quadricvote", "--help"], capture_output=True, text=True)
    assert out.returncode == 0 and "detect" in out.stdout
