"""Command-line entry point: ``puppetmap <command> ...``.

Exit codes: 0 success, 1 other processing error, 2 configuration error,
3 tracking lost (only with ``track --strict``).
"""
from __future__ import annotations

import argparse
import csv
import sys
import time
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import calibration, mapping, tracker
from .errors import ConfigError, PuppetMapError, TrackingLost
from .geometry import pose_to_mm
from .model import load_demo_model
from .render import SensorNoiseModel, read_pfm, read_pgm16, simulate_sensor_frame, write_pfm, write_pgm16
from .tracker import STAGES, TrackerSettings, track_iteration

EXIT_OK, EXIT_ERROR, EXIT_CONFIG, EXIT_LOST = 0, 1, 2, 3

# dot radius and RGB values for the pattern image
DOT_RADIUS = 12
RGB = {"red": (255, 0, 0), "green": (0, 255, 0), "blue": (0, 0, 255), "white": (255, 255, 255)}


def _setup(path) -> calibration.SetupCalibration:
    return calibration.reference_setup() if path in (None, "reference") else calibration.load_setup(path)


def _with_overrides(s: tracker.Scenario, args) -> tracker.Scenario:
    kw = {}
    for name in ("iterations", "spacing", "threshold"):
        if getattr(args, name, None) is not None:
            kw[name] = getattr(args, name)
    if getattr(args, "search", None) is not None:
        kw["search_half_length"] = args.search
    if getattr(args, "no_mapping", False):
        kw["evaluate_mapping"] = False
    return replace(s, settings=replace(s.settings, **kw)) if kw else s


# --------------------------------------------------------------------------- commands


def cmd_calibrate(args) -> int:
    setup = _setup(args.setup)
    if args.synthetic:
        truth = replace(setup.projector, size=tuple(args.size))
        observations = calibration.synthetic_observations(truth, calibration.SYNTHETIC_PLANES, noise_px=args.noise, seed=args.seed)
        if args.observations:
            calibration.write_observations_csv(args.observations, observations)
    elif args.observations:
        observations = calibration.read_observations_csv(args.observations)
    else:
        raise ConfigError("calibrate: give an observations CSV or --synthetic")
    calib = calibration.calibrate_projector(observations, init=args.init, size=tuple(args.size))
    g = calib.gamma
    print(f"alpha_u {g.alpha_u:.2f}  alpha_v {g.alpha_v:.2f}  u0 {g.u0:.2f}  v0 {g.v0:.2f}")
    print("p_M_c (mm, rad): " + " ".join(f"{x:.4f}" for x in pose_to_mm(calib.p_M_c)))
    print(f"residual {calib.residual_mean:.4f} +- {calib.residual_std:.4f} px over {sum(len(o.points) for o in observations)} points")
    if args.out:
        calibration.save_setup(replace(setup, projector=calib), args.out)
    return EXIT_OK


def write_pattern_ppm(path, pattern: calibration.DotPattern, size) -> None:
    w, h = size
    img = np.zeros((h, w, 3), dtype=np.uint8)
    vv, uu = np.mgrid[0:h, 0:w]
    for (i, j), color in np.ndenumerate(pattern.colors):
        u, v = pattern.centers[i, j]
        disk = (uu - u) ** 2 + (vv - v) ** 2 <= DOT_RADIUS**2
        img[disk] = RGB[calibration.PALETTE[color]]
    with open(path, "wb") as fh:
        fh.write(f"P6\n{w} {h}\n255\n".encode("ascii"))
        fh.write(img.tobytes())


def cmd_pattern(args) -> int:
    pattern = calibration.generate_pattern(args.rows, args.cols, colors=args.colors, seed=args.seed, size=tuple(args.size))
    rows = [
        {"row": i, "col": j, "color": calibration.PALETTE[c], "u_p": f"{pattern.centers[i, j, 0]:.3f}", "v_p": f"{pattern.centers[i, j, 1]:.3f}"}
        for (i, j), c in np.ndenumerate(pattern.colors)
    ]
    with open(args.out, "w", newline="") as fh:
        wr = csv.DictWriter(fh, fieldnames=["row", "col", "color", "u_p", "v_p"])
        wr.writeheader()
        wr.writerows(rows)
    if args.image:
        write_pattern_ppm(args.image, pattern, tuple(args.size))
    unique = calibration.windows_unique(pattern.colors)
    print(f"{args.rows}x{args.cols} pattern, {args.colors} colors, every 3x3 block unique: {unique}")
    return EXIT_OK


def cmd_simulate(args) -> int:
    s = tracker.load_scenario(args.scenario)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    n = s.frames if args.frames is None else args.frames
    with open(out / "truth.csv", "w", newline="") as fh:
        wr = csv.writer(fh)
        wr.writerow(["frame", "tx_mm", "ty_mm", "tz_mm", "rx_rad", "ry_rad", "rz_rad"] + [f"q{m + 1}_{j + 1}" for m in range(4) for j in range(3)])
        for k in range(n):
            pose, q = s.truth(k)
            real = simulate_sensor_frame(s.model, pose, q, s.gamma_d, s.frame_noise(k), s.sensor_size, s.backdrop_depth)
            if args.format == "pfm":
                write_pfm(out / f"frame_{k:04d}.pfm", real)
            else:
                write_pgm16(out / f"frame_{k:04d}.pgm", real)
            wr.writerow([k] + [f"{x:.6f}" for x in pose_to_mm(pose)] + [f"{x:.6f}" for x in q.ravel()])
    print(f"wrote {n} frames to {out}")
    return EXIT_OK


def _frame_reader(directory: Path):
    def read(k: int):
        for ext, fn in ((".pfm", read_pfm), (".pgm", read_pgm16)):
            p = directory / f"frame_{k:04d}{ext}"
            if p.exists():
                return fn(p)
        raise ConfigError(f"missing frame {k} in {directory} (expected frame_{k:04d}.pfm or .pgm)")

    return read


def cmd_track(args) -> int:
    s = _with_overrides(tracker.load_scenario(args.scenario), args)
    source = _frame_reader(Path(args.frames_dir)) if args.frames_dir else None
    t0 = time.perf_counter()
    try:
        result = tracker.run_scenario(s, args.out, dump_every=args.dump_every, strict=args.strict, frames=args.frames, source=source)
    except TrackingLost as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_LOST
    elapsed = time.perf_counter() - t0
    et, er = result.column("err_t_mm"), result.column("err_r_deg")
    print(f"{len(result.rows)} frames in {elapsed:.1f} s")
    print(f"translation error median {np.median(et):.2f} mm, max {np.max(et):.2f} mm")
    print(f"rotation error median {np.median(er):.3f} deg, max {np.max(er):.3f} deg")
    for m in range(4):
        qe = result.column(f"q_err_deg_limb{m + 1}")
        print(f"limb {m + 1} q error median {np.median(qe):.2f} deg")
    if result.lost_frames:
        print(f"tracking lost at frames {result.lost_frames}")
    return EXIT_OK


def cmd_evaluate(args) -> int:
    if args.counts:
        rep = mapping.MappingReport.from_counts(*args.counts)
    elif args.puppet_mask and args.suit_mask:
        rep = mapping.evaluate_mapping(read_pgm16(args.puppet_mask).valid, read_pgm16(args.suit_mask).valid)
    else:
        raise ConfigError("evaluate: give --counts or both --puppet-mask and --suit-mask")
    print(rep.summary())
    if args.csv:
        mapping.write_report_csv(args.csv, [rep])
    return EXIT_OK


def bench_iterations(repeats: int = 200, spacing: float = 3.0, seed: int = 0) -> dict:
    """Wall time of single tracking iterations on the demo puppet at 512x424."""
    model = load_demo_model()
    setup = calibration.reference_setup()
    s = tracker.demo_scenario(frames=repeats, pace=0.5, seed=seed)
    settings = TrackerSettings(iterations=1, spacing=spacing, evaluate_mapping=False)
    ms = {st: [] for st in STAGES}
    samples = []
    for k in range(repeats):
        pose, q = s.truth(k)
        real = simulate_sensor_frame(model, pose, q, setup.depth, s.frame_noise(k))
        res = track_iteration(model, pose, q, real, setup.depth, settings)
        for st in STAGES:
            ms[st].append(res.timings[st])
        samples.append(len(res.samples))
    total = np.sum([ms[st] for st in STAGES], axis=0)
    return {"stages": {st: np.array(v) for st, v in ms.items()}, "total": total, "samples": np.array(samples)}


def cmd_bench(args) -> int:
    b = bench_iterations(args.repeats, args.spacing, args.seed)
    print(f"{'stage':<8} {'median ms':>10} {'p90 ms':>8}")
    for st, v in list(b["stages"].items()) + [("total", b["total"])]:
        print(f"{st:<8} {np.median(v):>10.2f} {np.percentile(v, 90):>8.2f}")
    print(f"samples per iteration: median {int(np.median(b['samples']))}")
    return EXIT_OK


# --------------------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="puppetmap", description="Silhouette-based puppet tracking and projection mapping.")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("calibrate", help="projector intrinsics and pose from 2D-3D correspondences")
    p.add_argument("observations", nargs="?", help="CSV with plane_id,u_p,v_p,X,Y,Z (written instead with --synthetic)")
    p.add_argument("--synthetic", action="store_true", help="generate observations from the reference projector")
    p.add_argument("--noise", type=float, default=0.0, help="pixel noise for --synthetic (std per axis)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--init", choices=("nominal", "dlt"), default="nominal")
    p.add_argument("--setup", help="calibration file providing the camera sections (default: reference rig)")
    p.add_argument("--size", type=int, nargs=2, default=list(calibration.PROJECTOR_SIZE), metavar=("W", "H"))
    p.add_argument("--out", help="write the updated calibration file here")
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("pattern", help="color-coded dot pattern with unique 3x3 blocks")
    p.add_argument("--rows", type=int, default=10)
    p.add_argument("--cols", type=int, default=10)
    p.add_argument("--colors", type=int, default=4)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--size", type=int, nargs=2, default=list(calibration.PROJECTOR_SIZE), metavar=("W", "H"))
    p.add_argument("--out", required=True, help="CSV of dot colors and projector pixels")
    p.add_argument("--image", help="also write a PPM image of the pattern")
    p.set_defaults(func=cmd_pattern)

    p = sub.add_parser("simulate", help="write synthetic depth frames and ground truth for a scenario")
    p.add_argument("scenario")
    p.add_argument("--out", required=True)
    p.add_argument("--frames", type=int)
    p.add_argument("--format", choices=("pfm", "pgm"), default="pfm")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("track", help="run the tracking loop over a scenario")
    p.add_argument("scenario")
    p.add_argument("--out", help="directory for metrics.csv, timings.csv and dumps")
    p.add_argument("--frames-dir", help="read frame_NNNN.pfm/.pgm from here instead of simulating")
    p.add_argument("--frames", type=int)
    p.add_argument("--iterations", type=int)
    p.add_argument("--spacing", type=float, help="silhouette sample spacing, px")
    p.add_argument("--search", type=int, help="search half length, px")
    p.add_argument("--threshold", type=float, help="match acceptance, fraction of the ideal step response")
    p.add_argument("--no-mapping", action="store_true", help="skip the per-frame mapping report")
    p.add_argument("--dump-every", type=int, default=0, help="dump frame, overlay and matches every N frames")
    p.add_argument("--strict", action="store_true", help="exit with code 3 when tracking is lost")
    p.set_defaults(func=cmd_track)

    p = sub.add_parser("evaluate", help="mapping report from masks or raw pixel counts")
    p.add_argument("--puppet-mask", help="PGM, nonzero = puppet")
    p.add_argument("--suit-mask", help="PGM, nonzero = projected suit")
    p.add_argument("--counts", type=int, nargs=3, metavar=("PUPPET", "ON", "OUTSIDE"))
    p.add_argument("--csv", help="also write the report as CSV")
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("bench", help="per-stage timing of single tracking iterations")
    p.add_argument("--repeats", type=int, default=200)
    p.add_argument("--spacing", type=float, default=3.0)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_bench)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (PuppetMapError, ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
