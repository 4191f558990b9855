import csv
import subprocess
import sys

import numpy as np
import pytest
import yaml

from puppetmap import calibration
from puppetmap.cli import EXIT_CONFIG, EXIT_LOST, EXIT_OK, bench_iterations, main
from puppetmap.render import read_pfm, read_pgm16


def write_scenario(path, frames=3, step_mm=0.0, **defaults):
    doc = {
        "name": "cli",
        "seed": 3,
        "frames": frames,
        "sensor": {"sigma_depth": 0.002},
        "trajectory": [
            {"t": 0, "pose": [0, 0, 2000, 0, 0, 0]},
            {"t": frames, "pose": [step_mm * frames, 0, 2000, 0, 0, 0]},
        ],
        "defaults": {"evaluate_mapping": False, **defaults},
    }
    path.write_text(yaml.safe_dump(doc))
    return path


def test_calibrate_synthetic(tmp_path, capsys):
    out = tmp_path / "rig.yaml"
    obs = tmp_path / "obs.csv"
    assert main(["calibrate", str(obs), "--synthetic", "--out", str(out)]) == EXIT_OK
    setup = calibration.load_setup(out)
    assert abs(setup.projector.gamma.alpha_u - 2145.99) < 1e-6
    assert "residual" in capsys.readouterr().out
    # the written observations calibrate the same way
    assert main(["calibrate", str(obs), "--init", "dlt"]) == EXIT_OK


def test_calibrate_without_input_is_config_error(capsys):
    assert main(["calibrate"]) == EXIT_CONFIG
    assert "config error" in capsys.readouterr().err


def test_pattern(tmp_path, capsys):
    assert main(["pattern", "--out", str(tmp_path / "p.csv"), "--image", str(tmp_path / "p.ppm"), "--seed", "2"]) == EXIT_OK
    rows = list(csv.DictReader(open(tmp_path / "p.csv")))
    assert len(rows) == 100 and set(r["color"] for r in rows) <= set(calibration.PALETTE)
    grid = np.array([calibration.PALETTE.index(r["color"]) for r in rows]).reshape(10, 10)
    assert calibration.windows_unique(grid)
    head = (tmp_path / "p.ppm").read_bytes()[:16]
    assert head.startswith(b"P6\n1024 768\n255\n")
    assert "unique: True" in capsys.readouterr().out


def test_pattern_infeasible_exits_nonzero(tmp_path):
    assert main(["pattern", "--rows", "100", "--cols", "100", "--colors", "2", "--out", str(tmp_path / "p.csv")]) == 1


def test_simulate_then_track_recorded_frames(tmp_path, capsys):
    scen = write_scenario(tmp_path / "s.yaml", frames=2)
    assert main(["simulate", str(scen), "--out", str(tmp_path / "frames")]) == EXIT_OK
    assert read_pfm(tmp_path / "frames" / "frame_0001.pfm").data.shape == (424, 512)
    truth = list(csv.DictReader(open(tmp_path / "frames" / "truth.csv")))
    assert len(truth) == 2 and float(truth[0]["tz_mm"]) == 2000.0
    assert main(["simulate", str(scen), "--out", str(tmp_path / "pgm"), "--format", "pgm", "--frames", "1"]) == EXIT_OK
    assert read_pgm16(tmp_path / "pgm" / "frame_0000.pgm").valid.any()
    out = tmp_path / "run"
    assert main(["track", str(scen), "--frames-dir", str(tmp_path / "frames"), "--out", str(out)]) == EXIT_OK
    assert (out / "metrics.csv").exists() and (out / "timings.csv").exists()
    assert "translation error median" in capsys.readouterr().out


def test_track_missing_recorded_frame(tmp_path):
    scen = write_scenario(tmp_path / "s.yaml", frames=2)
    (tmp_path / "empty").mkdir()
    assert main(["track", str(scen), "--frames-dir", str(tmp_path / "empty")]) == EXIT_CONFIG


def test_track_overrides_and_dumps(tmp_path):
    scen = write_scenario(tmp_path / "s.yaml", frames=2)
    code = main(["track", str(scen), "--out", str(tmp_path / "o"), "--iterations", "1", "--spacing", "4", "--search", "10", "--threshold", "0.5", "--no-mapping", "--dump-every", "1"])
    assert code == EXIT_OK
    assert (tmp_path / "o" / "overlay_0001.pgm").exists()
    rows = list(csv.DictReader(open(tmp_path / "o" / "metrics.csv")))
    assert rows[0]["on_ratio"] == ""


def test_strict_tracking_lost_exit_code(tmp_path, capsys):
    scen = write_scenario(tmp_path / "fast.yaml", frames=8, step_mm=50.0)
    assert main(["track", str(scen), "--search", "5", "--strict"]) == EXIT_LOST
    assert "tracking lost" in capsys.readouterr().err
    # without --strict the run completes and reports the loss
    assert main(["track", str(scen), "--search", "5"]) == EXIT_OK


@pytest.mark.parametrize("content", ["trajectory: [unclosed\n", "frames: 2\n", "trajectory: [{t: 0, pose: [0, 0]}]\n"])
def test_bad_scenarios_exit_2(tmp_path, content, capsys):
    (tmp_path / "bad.yaml").write_text(content)
    assert main(["track", str(tmp_path / "bad.yaml")]) == EXIT_CONFIG
    assert main(["simulate", str(tmp_path / "bad.yaml"), "--out", str(tmp_path / "x")]) == EXIT_CONFIG


def test_missing_scenario_exit_2(tmp_path):
    assert main(["track", str(tmp_path / "none.yaml")]) == EXIT_CONFIG


def test_evaluate_counts(tmp_path, capsys):
    assert main(["evaluate", "--counts", "3026107", "2742388", "67380", "--csv", str(tmp_path / "r.csv")]) == EXIT_OK
    out = capsys.readouterr().out
    assert "(90.62%)" in out and "(2.23%)" in out
    assert main(["evaluate"]) == EXIT_CONFIG


def test_evaluate_masks(tmp_path, capsys):
    from puppetmap.render import DepthImage, write_pgm16

    a = np.zeros((40, 40))
    a[10:30, 10:30] = 1.0
    b = np.roll(a, 5, axis=1)
    write_pgm16(tmp_path / "a.pgm", DepthImage(a))
    write_pgm16(tmp_path / "b.pgm", DepthImage(b))
    assert main(["evaluate", "--puppet-mask", str(tmp_path / "a.pgm"), "--suit-mask", str(tmp_path / "b.pgm")]) == EXIT_OK
    assert "300 px (75.00%)" in capsys.readouterr().out


def test_bench(capsys):
    assert main(["bench", "--repeats", "3"]) == EXIT_OK
    out = capsys.readouterr().out
    assert "total" in out and "samples per iteration" in out
    b = bench_iterations(2)
    assert b["total"].shape == (2,) and set(b["stages"]) == {"render", "extract", "match", "rigid", "joints"}


def test_module_entry_point():
    r = subprocess.run([sys.executable, "-m", "puppetmap", "--help"], capture_output=True, text=True)
    assert r.returncode == 0
    for cmd in ("calibrate", "pattern", "simulate", "track", "evaluate", "bench"):
        assert cmd in r.stdout
