"""Acceptance suite: one test per criterion, each printing a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -s`` (or ``python
tests/test_acceptance.py``); the lines are also repeated in pytest's terminal
summary.
"""
import hashlib
import sys
import time
from dataclasses import replace

import numpy as np
import pytest

from muxfocus.bench import RATIOS, run_benchmark
from muxfocus.cli import main as cli_main
from muxfocus.crosstalk import CrosstalkCoefficients, correct, estimate_coefficients, mix
from muxfocus.focus import best_focus, fit_calibration, predict_defocus, sweep_calibration
from muxfocus.optics import OpticsConfig, generate_phantom, render_multiplexed, render_zstack, shift_per_micron
from muxfocus.scan import FocusProfile, ScanPlan, TimingModel, run_scan
from muxfocus.shift import correlation_profile, detect_layers, mi_shift
from oracles import cycle_schedule

pytestmark = pytest.mark.acceptance


# ---------------------------------------------------------------- 1


def test_c1_crosstalk_round_trip(criterion):
    t0 = time.perf_counter()
    rng = np.random.default_rng(101)
    worst_mix = worst_est = worst_noisy = 0.0
    for i in range(100):
        obj = generate_phantom([101, i], 64, 64, ("tissue", "blood_smear")[i % 2])
        w = CrosstalkCoefficients(*rng.uniform(0.0, 0.5, 2))
        back = correct(mix(obj, w), w)
        worst_mix = max(worst_mix, np.abs(back.red - obj.red).max(), np.abs(back.green - obj.green).max())
        frame = render_multiplexed(obj, 0.0, 0.0, OpticsConfig(crosstalk=w))
        est = estimate_coefficients(frame, obj)
        worst_est = max(worst_est, abs(est.w_gr - w.w_gr), abs(est.w_rg - w.w_rg))
    obj = generate_phantom(102, 256, 256, "tissue")
    w = CrosstalkCoefficients(0.12, 0.08)
    for seed in range(10):
        frame = render_multiplexed(obj, 0.0, 0.0, OpticsConfig(noise_sigma=0.01, crosstalk=w), seed=seed)
        est = estimate_coefficients(frame, obj)
        worst_noisy = max(worst_noisy, abs(est.w_gr - w.w_gr), abs(est.w_rg - w.w_rg))
    elapsed = time.perf_counter() - t0
    ok = worst_mix <= 1e-6 and worst_est <= 1e-6 and worst_noisy <= 0.02 and elapsed < 30
    criterion(1, "crosstalk round trip", ok,
              f"max |correct(mix)-O| {worst_mix:.1e}, max |w_hat-w| {worst_est:.1e} (noise 0), "
              f"{worst_noisy:.4f} (noise 0.01), {elapsed:.1f} s")
    assert ok


# ---------------------------------------------------------------- 2


def test_c2_shift_recovery_table(criterion):
    t0 = time.perf_counter()
    cfg = OpticsConfig(noise_sigma=0.003)
    records = run_benchmark(cfg, 200, seed=202, size=256, defocus_range=20.0 / shift_per_micron(cfg))
    elapsed = time.perf_counter() - t0
    mae, med = {}, {}
    for method in ("xcorr", "mutual_info"):
        for n in RATIOS:
            cell = [r for r in records if r.method == method and r.subsample_ratio == n]
            assert len(cell) == 200
            mae[method, n] = float(np.mean([r.shift_error_px(cfg) for r in cell]))
            med[method, n] = float(np.median([r.elapsed_s for r in cell]))
    ok = mae["mutual_info", 1] <= 0.3 and mae["xcorr", 1] <= 0.5 and elapsed < 300
    for method in ("xcorr", "mutual_info"):
        errs = [mae[method, n] for n in RATIOS]
        times = [med[method, n] for n in RATIOS]
        ok &= all(a < b for a, b in zip(errs, errs[1:]))
        ok &= all(a > b for a, b in zip(times, times[1:]))
    table = "; ".join(
        f"{m} " + " ".join(f"r{n}={mae[m, n]:.3f}px/{med[m, n] * 1e3:.2f}ms" for n in RATIOS)
        for m in ("xcorr", "mutual_info")
    )
    criterion(2, "shift recovery and ratio trade-off", ok, f"{table}; {elapsed:.0f} s")
    assert ok


# ---------------------------------------------------------------- 3

BLUR_FRAME = (512, 2048)  # rows, columns: wide enough for a 500 px smear
BLUR_MAX_LAG = 32  # separations here stay within +-16 px


def test_c3_motion_blur(criterion):
    cfg = OpticsConfig(noise_sigma=0.003)
    k = shift_per_micron(cfg)
    h, w = BLUR_FRAME
    calib_obj = generate_phantom(300, w, h, "tissue")
    samples = []
    for j, z in enumerate(np.linspace(-4.0, 4.0, 9)):
        frame = correct(render_multiplexed(calib_obj, z, 0.0, cfg, seed=[300, j]), cfg.crosstalk)
        samples.append((z, mi_shift(frame, 3, max_lag=BLUR_MAX_LAG).shift_y))
    curve = fit_calibration(samples)
    dev = {150: [], 500: []}
    resid = {150: [], 500: []}
    for seed in range(20):
        obj = generate_phantom([301, seed], w, h, "tissue")
        z = float(np.random.default_rng([302, seed]).uniform(-4.0, 4.0))
        est = {}
        for blur in (0, 150, 500):
            frame = render_multiplexed(obj, z, blur, cfg, seed=[303, seed])
            est[blur] = mi_shift(correct(frame, cfg.crosstalk), 3, max_lag=BLUR_MAX_LAG).shift_y
        for blur in (150, 500):
            dev[blur].append(abs(est[blur] - est[0]))
            resid[blur].append(abs(predict_defocus(curve, est[blur]) - z))
    ok = all(max(dev[b]) <= 0.3 and max(resid[b]) <= 0.2 for b in dev)
    detail = ", ".join(
        f"{b} px: max shift dev {max(dev[b]):.3f} px, max defocus residual {max(resid[b]):.3f} um"
        for b in (150, 500)
    )
    over = {b: [i for i, d in enumerate(dev[b]) if d > 0.3] for b in dev}
    criterion(3, "motion-blur robustness", ok,
              f"{detail}, seeds over 0.3 px {over} (slope {curve.slope:.3f}, geometry {k:.3f})")
    assert ok


# ---------------------------------------------------------------- 4 and 5


@pytest.fixture(scope="module")
def tracking_setup():
    cfg = OpticsConfig(noise_sigma=0.003)
    curve = fit_calibration(sweep_calibration(cfg, np.linspace(-4, 4, 9), method="mutual_info",
                                              subsample_ratio=3, seed=400))
    plan = ScanPlan(rows=10, cols=10, method="mutual_info", subsample_ratio=3,
                    focus_profile=FocusProfile(amplitude=3.0, seed=4))
    return cfg, curve, plan


def _profile_steps(plan):
    z = np.array([plan.focus_profile.relative(c * plan.tile_pitch, r * plan.tile_pitch)
                  for r, c in plan.order()])
    return z, np.abs(np.diff(z))


def test_c4_end_to_end_tracking(criterion, tracking_setup):
    cfg, curve, plan = tracking_setup
    z, steps = _profile_steps(plan)
    assert np.abs(z).max() <= 3.0 and steps.max() <= 1.0
    t0 = time.perf_counter()
    report = run_scan(plan, cfg, curve, TimingModel(), seed=404)
    elapsed = time.perf_counter() - t0
    ok = report.mean_error <= 0.35 and report.within_dof_fraction >= 0.95 and elapsed < 120
    criterion(4, "end-to-end tracking", ok,
              f"mean error {report.mean_error:.3f} um (std {report.std_error:.3f}), "
              f"{report.within_dof_fraction:.0%} within 0.7 um, profile p-p {np.ptp(z):.2f} um, "
              f"max step {steps.max():.2f} um, {elapsed:.0f} s")
    assert ok


def test_c5_absolute_offset_invariance(criterion, tracking_setup):
    cfg, curve, plan = tracking_setup
    lifted = replace(plan, focus_profile=replace(plan.focus_profile, base_z=50.0))
    a = run_scan(plan, cfg, curve, TimingModel(), seed=404)
    b = run_scan(lifted, cfg, curve, TimingModel(), seed=404)
    ea = np.array([r.residual_error for r in a.records])
    eb = np.array([r.residual_error for r in b.records])
    ok = ea.tobytes() == eb.tobytes()
    shift = np.mean([rb.true_focus - ra.true_focus for ra, rb in zip(a.records, b.records)])
    criterion(5, "absolute-offset invariance", ok,
              f"{int(np.sum(ea == eb))}/{ea.size} residuals bit-identical after +{shift:.0f} um lift")
    assert ok


# ---------------------------------------------------------------- 6


def test_c6_oracle_sanity(criterion):
    cfg = OpticsConfig(noise_sigma=0.005)
    rng = np.random.default_rng(606)
    errors = []
    for i in range(50):
        obj = generate_phantom([606, i], 128, 128, ("tissue", "blood_smear")[i % 2])
        z_true = float(rng.uniform(-4.0, 4.0))
        trace = best_focus(render_zstack(obj, 0.0, 5.0, 11, cfg, focus_z=z_true, seed=[606, i]))
        errors.append(abs(trace.best_z - z_true))
    hit = float(np.mean(np.array(errors) <= 0.5))
    ok = hit >= 0.95
    criterion(6, "Brenner oracle sanity", ok,
              f"{hit:.0%} of 50 within 0.5 um (mean {np.mean(errors):.3f}, max {np.max(errors):.3f} um)")
    assert ok


# ---------------------------------------------------------------- 7

LAYER_SETS = [(0.0, 8.0), (4.0, 12.0), (-6.0, 6.0)]


def test_c7_two_layer_detection(criterion):
    cfg = OpticsConfig(noise_sigma=0.003)
    outcomes = []
    for lags in LAYER_SETS:
        for seed in range(3):
            obj = generate_phantom([707, seed], 512, 512, "two_layer", layer_lags=lags)
            frame = correct(render_multiplexed(obj, 0.0, 0.0, cfg, seed=seed), cfg.crosstalk)
            peaks = detect_layers(correlation_profile(frame))
            good = len(peaks) == 2 and all(abs(p[0] - l) <= 1.0 for p, l in zip(peaks, sorted(lags)))
            outcomes.append((lags, seed, good, [round(p[0], 2) for p in peaks]))
    ok = all(o[2] for o in outcomes)
    found = "; ".join(f"{o[0]} s{o[1]}: {o[3]}" for o in outcomes if o[1] == 0)
    criterion(7, "two-layer detection", ok,
              f"{sum(o[2] for o in outcomes)}/{len(outcomes)} frames with exactly 2 peaks within 1 px ({found})")
    assert ok


# ---------------------------------------------------------------- 8


def test_c8_timing_model(criterion):
    timing = TimingModel()
    cfg = OpticsConfig(noise_sigma=0.003)
    curve = fit_calibration(sweep_calibration(cfg, np.linspace(-4, 4, 9), subsample_ratio=3, size=128))
    exact = True
    for method in ("xcorr", "mutual_info"):
        plan = ScanPlan(rows=4, cols=5, method=method, subsample_ratio=3, tile_size=128)
        report = run_scan(plan, cfg, curve, timing, seed=808, measured_processing=True)
        for rec in report.records[1:]:
            oracle = cycle_schedule(timing.t_image, timing.t_stage, rec.t_process, timing.t_z_move)
            exact &= rec.t_total == oracle
        exact &= report.records[0].t_total == timing.t_image
        exact &= report.total_time == sum(r.t_total for r in report.records)
    xc = timing.cycle_time("xcorr")
    mi = timing.cycle_time("mutual_info")
    ok = exact and abs(xc - 0.33) <= 0.01 and abs(mi - 0.35) <= 0.01
    criterion(8, "timing model", ok,
              f"measured-time cycles match schedule exactly: {exact}; "
              f"cycle xcorr {xc:.3f} s, mutual_info {mi:.3f} s")
    assert ok


# ---------------------------------------------------------------- 9


def _digest(directory):
    out = {}
    for path in sorted(directory.rglob("*")):
        if path.suffix in (".csv", ".json", ".txt"):
            out[path.relative_to(directory).as_posix()] = hashlib.sha256(path.read_bytes()).hexdigest()
    return out


def _run_all(root):
    frame = root / "frame"
    commands = [
        ["phantom", "--out", str(frame), "--seed", "9", "--width", "128", "--height", "128"],
        ["render", "--out", str(frame), "--seed", "9", "--width", "128", "--height", "128",
         "--defocus", "1.5", "--noise", "0.003"],
        ["render", "--out", str(root / "stack"), "--kind", "zstack", "--width", "96", "--height", "96",
         "--steps", "5", "--half-range", "2"],
        ["calibrate", "--out", str(root / "run"), "--seed", "9", "--size", "128", "--method", "mi",
         "--subsample-ratio", "3", "--noise", "0.003"],
        ["shift", "--out", str(root / "shift"), "--red", str(frame / "multiplexed_R.png"),
         "--green", str(frame / "multiplexed_G.png"), "--method", "mi", "--clock", "off",
         "--calibration", str(root / "run" / "calibration.json")],
        ["scan", "--out", str(root / "run"), "--seed", "9", "--rows", "3", "--cols", "4",
         "--tile-size", "128", "--noise", "0.003"],
        ["bench", "--out", str(root / "bench"), "--seed", "9", "--tiles", "3", "--size", "128",
         "--clock", "off", "--noise", "0.003"],
        ["layers", "--out", str(root / "layers"), "--seed", "9", "--size", "256", "--lags", "0,8"],
    ]
    codes = [cli_main(argv) for argv in commands]
    return codes, _digest(root)


def test_c9_cli_determinism(criterion, tmp_path, capsys):
    codes_a, a = _run_all(tmp_path / "a")
    codes_b, b = _run_all(tmp_path / "b")
    capsys.readouterr()
    subcommands = {"phantom", "render", "calibrate", "shift", "scan", "bench", "layers"}
    differing = sorted(k for k in a if a.get(k) != b.get(k))
    ok = codes_a == codes_b == [0] * 8 and a.keys() == b.keys() and not differing and len(a) >= 10
    criterion(9, "CLI determinism", ok,
              f"{len(subcommands)} subcommands, {len(a)} CSV/JSON/TXT files compared, "
              f"exit codes {codes_a}, differing: {differing or 'none'}")
    assert ok


if __name__ == "__main__":
    sys.exit(pytest.main([__file__, "-s", "-q"]))
