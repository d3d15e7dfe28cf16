"""Command-line entry point: ``muxfocus <subcommand> [options]``.

Exit status is 0 on success, 1 on a domain error (bad data, failed estimate,
missing calibration) and 2 on a usage error.
"""
from __future__ import annotations

import argparse
import csv
import json
import sys
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import bench as bench_mod
from .config import ConfigError, resolve
from .crosstalk import CrosstalkCoefficients, correct, estimate_coefficients
from .focus import CalibrationCurve, best_focus, fit_calibration, predict_defocus, sweep_calibration
from .frames import GroundTruthPair, MuxFocusError
from .imio import load_frame, read_plane, save_frame, write_plane
from .optics import (
    PHANTOM_STYLES,
    generate_phantom,
    render_brightfield,
    render_multiplexed,
    render_zstack,
    shift_per_micron,
)
from .scan import export_focus_map, format_table, run_scan, summarize
from .shift import DEFAULT_PROMINENCE, correlation_profile, detect_layers, estimate_shift

# flag dest -> config key it overrides
FIELD_FLAGS = {
    "noise_sigma": "optics.noise_sigma",
    "illumination_na": "optics.illumination_na",
    "magnification": "optics.magnification",
    "defocus_blur_coeff": "optics.defocus_blur_coeff",
    "rows": "scan.rows",
    "cols": "scan.cols",
    "tile_pitch": "scan.tile_pitch",
    "method": "scan.method",
    "subsample_ratio": "scan.subsample_ratio",
    "blur_px": "scan.blur_px",
    "start_z_error": "scan.start_z_error",
    "tile_size": "scan.tile_size",
    "amplitude": "scan.focus_profile.amplitude",
    "t_image": "timing.t_image",
    "t_stage": "timing.t_stage",
}
METHOD_ALIASES = {"mi": "mutual_info", "mutual_info": "mutual_info", "xcorr": "xcorr"}


def _write_json(path: Path, payload) -> None:
    path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


def _method(name: str) -> str:
    try:
        return METHOD_ALIASES[name]
    except KeyError:
        raise argparse.ArgumentTypeError(f"unknown method {name!r}; use xcorr or mi") from None


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", type=Path, help="TOML file with [optics]/[scan]/[timing] tables")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", type=Path, default=Path("."), help="output directory")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="config override such as optics.noise_sigma=0.01 (repeatable)")
    p.add_argument("--noise-sigma", "--noise", dest="noise_sigma", type=float)


def _optics_flags(p) -> None:
    p.add_argument("--illumination-na", dest="illumination_na", type=float)
    p.add_argument("--magnification", type=float)
    p.add_argument("--defocus-blur-coeff", dest="defocus_blur_coeff", type=float)


def _phantom_flags(p, size=256) -> None:
    p.add_argument("--style", choices=PHANTOM_STYLES, default="tissue")
    p.add_argument("--width", type=int, default=size)
    p.add_argument("--height", type=int, default=size)


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="muxfocus", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True, metavar="COMMAND")

    p = sub.add_parser("phantom", help="write a ground-truth red/green phantom")
    _common(p)
    _phantom_flags(p)
    p.add_argument("--format", choices=("png", "pgm"), default="png")

    p = sub.add_parser("render", help="render multiplexed, brightfield or z-stack images")
    _common(p)
    _optics_flags(p)
    _phantom_flags(p)
    p.add_argument("--kind", choices=("multiplexed", "brightfield", "zstack"), default="multiplexed")
    p.add_argument("--defocus", type=float, default=0.0, help="um")
    p.add_argument("--blur-px", dest="blur_px", type=float)
    p.add_argument("--center", type=float, default=0.0)
    p.add_argument("--half-range", type=float, default=5.0)
    p.add_argument("--steps", type=int, default=11)
    p.add_argument("--red", type=Path, help="ground-truth red plane (default: generate)")
    p.add_argument("--green", type=Path, help="ground-truth green plane")
    p.add_argument("--format", choices=("png", "pgm"), default="png")

    p = sub.add_parser("calibrate", help="sweep defocus, fit and store the calibration line")
    _common(p)
    _optics_flags(p)
    p.add_argument("--z-min", type=float, default=-4.0)
    p.add_argument("--z-max", type=float, default=4.0)
    p.add_argument("--steps", type=int, default=9)
    p.add_argument("--method", type=_method)
    p.add_argument("--subsample-ratio", dest="subsample_ratio", type=int)
    p.add_argument("--size", type=int, default=256)

    p = sub.add_parser("shift", help="estimate the red/green shift of one frame")
    _common(p)
    p.add_argument("--red", type=Path, required=True)
    p.add_argument("--green", type=Path, required=True)
    p.add_argument("--method", type=_method, default="mutual_info")
    p.add_argument("--subsample-ratio", dest="subsample_ratio", type=int, default=1)
    p.add_argument("--iterations", type=int, default=5)
    p.add_argument("--max-lag", type=float)
    p.add_argument("--crosstalk", type=Path, help="coefficients JSON; corrects the frame first")
    p.add_argument("--calibration", type=Path, help="calibration JSON; adds predicted defocus")
    p.add_argument("--clock", choices=("wall", "off"), default="wall")

    p = sub.add_parser("scan", help="simulate a tracked whole-slide scan")
    _common(p)
    _optics_flags(p)
    p.add_argument("--calibration", type=Path, help="default: <out>/calibration.json")
    p.add_argument("--crosstalk", type=Path, help="session coefficients JSON (default: simulator truth)")
    for flag in ("rows", "cols", "tile-size", "subsample-ratio"):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=int)
    for flag in ("tile-pitch", "blur-px", "start-z-error", "amplitude", "t-image", "t-stage"):
        p.add_argument(f"--{flag}", dest=flag.replace("-", "_"), type=float)
    p.add_argument("--method", type=_method)
    p.add_argument("--oracle", action="store_true", help="also grade with a Brenner z-stack")

    p = sub.add_parser("bench", help="methods x subsample ratios benchmark table")
    _common(p)
    _optics_flags(p)
    p.add_argument("--tiles", type=int, default=594)
    p.add_argument("--methods", default="xcorr,mi")
    p.add_argument("--ratios", default="1,3,5,7")
    p.add_argument("--size", type=int, default=256)
    p.add_argument("--defocus-range", type=float, default=5.0)
    p.add_argument("--blur-px", dest="bench_blur", type=float, default=0.0)
    p.add_argument("--calibration", type=Path)
    p.add_argument("--clock", choices=("wall", "off"), default="wall")

    p = sub.add_parser("layers", help="correlation profile and layer peaks")
    _common(p)
    p.add_argument("--red", type=Path)
    p.add_argument("--green", type=Path)
    p.add_argument("--lags", default="0,8", help="layer lags (px) for a generated two-layer phantom")
    p.add_argument("--size", type=int, default=512)
    p.add_argument("--max-lag", type=float)
    p.add_argument("--prominence", type=float, default=DEFAULT_PROMINENCE)
    return parser


def _configs(args):
    overrides = list(args.overrides)
    for dest, key in FIELD_FLAGS.items():
        value = getattr(args, dest, None)
        if value is not None:
            overrides.append(f"{key}={json.dumps(value)}")
    return resolve(args.config, overrides)


def _float_list(text: str, parser, flag: str):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError:
        parser.error(f"{flag} expects comma-separated numbers, got {text!r}")


def _truth(args, ext=".png") -> GroundTruthPair:
    if getattr(args, "red", None) or getattr(args, "green", None):
        if not (args.red and args.green):
            raise MuxFocusError("--red and --green must be given together")
        return GroundTruthPair(red=read_plane(args.red), green=read_plane(args.green))
    return generate_phantom(args.seed, args.width, args.height, args.style)


def cmd_phantom(args, optics, plan, timing) -> int:
    obj = generate_phantom(args.seed, args.width, args.height, args.style)
    paths = save_frame(args.out / "phantom", obj, "." + args.format)
    print(json.dumps({"red": str(paths[0]), "green": str(paths[1])}))
    return 0


def cmd_render(args, optics, plan, timing) -> int:
    obj = _truth(args)
    ext = "." + args.format
    blur = plan.blur_px
    if args.kind == "multiplexed":
        frame = render_multiplexed(obj, args.defocus, blur, optics, seed=args.seed)
        paths = [str(p) for p in save_frame(args.out / "multiplexed", frame, ext)]
    elif args.kind == "brightfield":
        path = args.out / f"brightfield{ext}"
        write_plane(path, render_brightfield(obj, args.defocus, optics, seed=args.seed))
        paths = [str(path)]
    else:
        stack = render_zstack(obj, args.center, args.half_range, args.steps, optics,
                              focus_z=args.defocus, seed=args.seed)
        paths = []
        for k, plane in enumerate(stack.planes):
            path = args.out / f"zstack_{k:02d}{ext}"
            write_plane(path, plane)
            paths.append(str(path))
        trace = best_focus(stack)
        _write_json(args.out / "zstack.json", {
            "z_positions_um": stack.z_positions.tolist(),
            "brenner": trace.scores.tolist(),
            "best_z_um": trace.best_z,
        })
    print(json.dumps({"files": paths}))
    return 0


def cmd_calibrate(args, optics, plan, timing) -> int:
    if args.steps < 3:
        raise MuxFocusError("--steps must be at least 3")
    z_values = np.linspace(args.z_min, args.z_max, args.steps)
    method = args.method or plan.method
    ratio = args.subsample_ratio or 1
    samples = sweep_calibration(optics, z_values, method=method, subsample_ratio=ratio,
                                seed=args.seed, size=args.size)
    curve = fit_calibration(samples)
    curve.save(args.out / "calibration.json")
    # crosstalk calibration capture: in focus, aligned with single-LED truth
    obj = generate_phantom(args.seed, args.size, args.size, "tissue")
    coeffs = estimate_coefficients(render_multiplexed(obj, 0.0, 0.0, optics, seed=[args.seed, 99]), obj)
    coeffs.save(args.out / "crosstalk.json")
    with open(args.out / "calibration_samples.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("defocus_um", "shift_px"))
        w.writerows((repr(z), repr(s)) for z, s in samples)
    print(json.dumps({**curve.to_dict(), "geometry_slope_px_per_um": shift_per_micron(optics)},
                     sort_keys=True))
    return 0


def cmd_shift(args, optics, plan, timing) -> int:
    frame = load_frame(args.red, args.green)
    if args.crosstalk:
        frame = correct(frame, CrosstalkCoefficients.load(args.crosstalk))
    kwargs = {"max_lag": args.max_lag}
    if args.method == "mutual_info":
        kwargs["iterations"] = args.iterations
    est = estimate_shift(frame, args.method, args.subsample_ratio, **kwargs)
    payload = est.to_dict()
    if args.clock == "off":
        payload["elapsed"] = 0.0
    if args.calibration:
        payload["defocus_um"] = predict_defocus(CalibrationCurve.load(args.calibration), est.shift_y)
    text = json.dumps(payload, sort_keys=True)
    (args.out / "shift.json").write_text(text + "\n")
    print(text)
    return 0


def cmd_scan(args, optics, plan, timing) -> int:
    cal_path = args.calibration or args.out / "calibration.json"
    if not Path(cal_path).is_file():
        raise MuxFocusError(f"missing calibration: {cal_path} not found; run `muxfocus calibrate` first")
    curve = CalibrationCurve.load(cal_path)
    coeffs = CrosstalkCoefficients.load(args.crosstalk) if args.crosstalk else None
    report = run_scan(plan, optics, curve, timing, args.seed, coeffs=coeffs,
                      grade_with_oracle=args.oracle)
    report.save_json(args.out / "scan_report.json")
    report.save_records_csv(args.out / "scan_records.csv")
    export_focus_map(report, args.out)
    table = format_table(summarize(report, "method"))
    (args.out / "scan_summary.txt").write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_bench(args, optics, plan, timing) -> int:
    methods = [_method(m.strip()) for m in args.methods.split(",") if m.strip()]
    ratios = [int(r) for r in _float_list(args.ratios, args._parser, "--ratios")]
    curve = CalibrationCurve.load(args.calibration) if args.calibration else None
    records = bench_mod.run_benchmark(
        optics, args.tiles, methods=methods, ratios=ratios, seed=args.seed, size=args.size,
        defocus_range=args.defocus_range, blur_px=args.bench_blur, curve=curve,
        clock=args.clock == "wall",
    )
    rows = bench_mod.summarize_bench(records)
    bench_mod.write_records_csv(args.out / "bench.csv", records)
    bench_mod.write_summary_csv(args.out / "bench_summary.csv", rows)
    table = format_table(rows)
    (args.out / "bench_summary.txt").write_text(table)
    sys.stdout.write(table)
    return 0


def cmd_layers(args, optics, plan, timing) -> int:
    if args.red or args.green:
        if not (args.red and args.green):
            raise MuxFocusError("--red and --green must be given together")
        frame = load_frame(args.red, args.green)
    else:
        lags = _float_list(args.lags, args._parser, "--lags")
        obj = generate_phantom(args.seed, args.size, args.size, "two_layer", layer_lags=lags)
        cfg = replace(optics, crosstalk=CrosstalkCoefficients())
        frame = render_multiplexed(obj, 0.0, 0.0, cfg, seed=args.seed)
    profile = correlation_profile(frame, args.max_lag)
    peaks = detect_layers(profile, args.prominence)
    with open(args.out / "correlation_profile.csv", "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(("lag_px", "ncc"))
        w.writerows((int(l), repr(float(v))) for l, v in zip(profile.lags, profile.values))
    payload = {"peaks": [{"lag_px": l, "value": v} for l, v in peaks]}
    _write_json(args.out / "layers.json", payload)
    print(json.dumps(payload, sort_keys=True))
    return 0


COMMANDS = {
    "phantom": cmd_phantom,
    "render": cmd_render,
    "calibrate": cmd_calibrate,
    "shift": cmd_shift,
    "scan": cmd_scan,
    "bench": cmd_bench,
    "layers": cmd_layers,
}


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    args._parser = parser
    try:
        optics, plan, timing = _configs(args)
    except ConfigError as exc:
        parser.error(str(exc))
    except (OSError, ValueError, TypeError) as exc:
        print(f"muxfocus: error: bad configuration: {exc}", file=sys.stderr)
        return 1
    try:
        args.out.mkdir(parents=True, exist_ok=True)
        return COMMANDS[args.command](args, optics, plan, timing)
    except (MuxFocusError, OSError) as exc:
        print(f"muxfocus {args.command}: error: {exc}", file=sys.stderr)
        return 1


dispatch = main

if __name__ == "__main__":
    sys.exit(main())
