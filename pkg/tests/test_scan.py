import csv
import json
import math
from dataclasses import replace

import numpy as np
import pytest
from PIL import Image

from muxfocus.focus import CalibrationCurve
from muxfocus.frames import MuxFocusError
from muxfocus.optics import OpticsConfig, shift_per_micron
from muxfocus.scan import (
    DEPTH_OF_FIELD,
    RECORD_CSV_HEADER,
    EmptyReportError,
    FocusProfile,
    ScanPlan,
    ScanReport,
    TimingModel,
    error_statistics,
    export_focus_map,
    read_focus_map,
    reconstruct_applied_z,
    run_scan,
    summarize,
)
from oracles import cycle_schedule

CFG = OpticsConfig(noise_sigma=0.003)
CURVE = CalibrationCurve(slope=shift_per_micron(CFG), intercept=0.0)
FLAT = FocusProfile(amplitude=0.0)


def small_plan(**kw):
    base = dict(rows=3, cols=4, tile_size=96, method="xcorr", subsample_ratio=1)
    base.update(kw)
    return ScanPlan(**base)


@pytest.fixture(scope="module")
def report():
    plan = ScanPlan(rows=4, cols=5, tile_size=128, focus_profile=FocusProfile(amplitude=3.0, seed=2))
    return run_scan(plan, CFG, CURVE, seed=3)


# ---------------------------------------------------------------- plan, profile and timing


def test_serpentine_order():
    assert ScanPlan(rows=2, cols=3).order() == [(0, 0), (0, 1), (0, 2), (1, 2), (1, 1), (1, 0)]


def test_plan_validation():
    with pytest.raises(MuxFocusError):
        ScanPlan(rows=0)
    with pytest.raises(MuxFocusError):
        ScanPlan(tile_pitch=0.0)
    with pytest.raises(MuxFocusError):
        ScanPlan(method="phase")
    assert ScanPlan(method="mi").method == "mutual_info"


def test_focus_profile_bounds_and_offset():
    prof = FocusProfile(amplitude=3.0, seed=9)
    x, y = np.meshgrid(np.linspace(0, 20000, 50), np.linspace(0, 20000, 50))
    z = prof(x, y)
    assert np.abs(z).max() <= 3.0 + 1e-12
    lifted = replace(prof, base_z=50.0)
    np.testing.assert_array_equal(lifted.relative(x, y), prof.relative(x, y))
    np.testing.assert_allclose(lifted(x, y), z + 50.0, atol=1e-12)


def test_focus_profile_tilt():
    prof = FocusProfile(amplitude=0.0, tilt_x=0.5, tilt_y=-0.2)
    assert prof(2000.0, 1000.0) == pytest.approx(0.5 * 2 - 0.2 * 1)


def test_timing_defaults_and_validation():
    t = TimingModel()
    assert (t.t_image, t.t_stage, t.overlap_stage_with_capture) == (0.04, 0.2, True)
    assert t.cycle_time("xcorr") == pytest.approx(cycle_schedule(0.04, 0.2, 0.044, 0.045))
    no_overlap = replace(t, overlap_stage_with_capture=False)
    assert no_overlap.cycle_time("xcorr") - t.cycle_time("xcorr") == pytest.approx(t.t_image)
    with pytest.raises(MuxFocusError):
        TimingModel(t_stage=-1.0)


# ---------------------------------------------------------------- run_scan


def test_single_tile_scan():
    rep = run_scan(small_plan(rows=1, cols=1, start_z_error=0.0), CFG, CURVE)
    assert rep.records[0].residual_error == 0.0
    assert rep.total_time == TimingModel().t_image
    assert rep.mean_error == 0.0 and rep.std_error == 0.0


def test_hundred_tile_schedule():
    timing = TimingModel()
    plan = small_plan(rows=10, cols=10, tile_size=64, focus_profile=FLAT, start_z_error=0.0)
    rep = run_scan(plan, CFG.with_(noise_sigma=0.0), CURVE, timing)
    cycle = cycle_schedule(timing.t_image, timing.t_stage, timing.t_process_xcorr, timing.t_z_move)
    assert rep.records[0].t_total == timing.t_image
    assert all(r.t_total == cycle for r in rep.records[1:])
    assert rep.total_time == pytest.approx(timing.t_image + 99 * cycle, rel=1e-12)
    assert rep.total_time == sum(r.t_total for r in rep.records)
    assert cycle == pytest.approx(0.33, abs=0.01)


def test_statistics_recompute(report):
    errors = np.array([r.residual_error for r in report.records])
    assert report.mean_error == pytest.approx(errors.mean(), abs=1e-12)
    assert report.std_error == pytest.approx(errors.std(), abs=1e-12)
    assert report.within_dof_fraction == pytest.approx(np.mean(errors <= DEPTH_OF_FIELD), abs=1e-12)
    assert all(r.residual_error >= 0 for r in report.records)
    assert error_statistics(errors) == (report.mean_error, report.std_error, report.within_dof_fraction)


def test_residual_definition(report):
    for r in report.records:
        assert r.residual_error == pytest.approx(abs(r.applied_z - r.true_focus), abs=1e-12)


def test_focus_map_reconstructs_applied_z(report):
    applied = np.array([r.applied_z for r in report.records])
    np.testing.assert_allclose(reconstruct_applied_z(report), applied, atol=1e-9, rtol=0)
    assert report.shape == (4, 5)
    first = report.records[0]
    assert report.differential_focus_map[first.row, first.col] == 0.0


def test_first_tile_carries_start_error(report):
    assert report.records[0].residual_error == pytest.approx(1.0, abs=1e-12)
    assert math.isnan(report.records[0].predicted_shift)


def test_error_does_not_compound():
    plan = ScanPlan(rows=10, cols=10, tile_size=128, focus_profile=FocusProfile(amplitude=3.0, seed=7))
    rep = run_scan(plan, CFG, CURVE, seed=7)
    errors = [r.residual_error for r in rep.records]
    assert max(errors[-10:]) <= 2 * max(errors[:10])


def test_estimator_failure_is_flagged_and_carried():
    # a 20 um jump between neighbours is beyond the measurable range of a 96 px tile
    plan = small_plan(rows=1, cols=3, focus_profile=FocusProfile(amplitude=0.0, tilt_x=20.0))
    rep = run_scan(plan, CFG, CURVE)
    flagged = [r for r in rep.records if r.flag]
    assert flagged and all(r.flag.startswith("estimator_failure") for r in flagged)
    for prev, cur in zip(rep.records, rep.records[1:]):
        if cur.flag:
            assert cur.applied_z == prev.applied_z
            assert rep.differential_focus_map[cur.row, cur.col] == 0.0
    assert len(rep.records) == 3


def test_oracle_grading(report):
    plan = small_plan(rows=1, cols=3, focus_profile=FocusProfile(amplitude=2.0, wavelength=3000.0))
    rep = run_scan(plan, CFG, CURVE, grade_with_oracle=True)
    for r in rep.records:
        assert abs(r.oracle_z - r.true_focus) <= 0.5


def test_scan_deterministic():
    plan = small_plan()
    a = run_scan(plan, CFG, CURVE, seed=5).to_dict()
    b = run_scan(plan, CFG, CURVE, seed=5).to_dict()
    assert json.dumps(a, sort_keys=True) == json.dumps(b, sort_keys=True)


# ---------------------------------------------------------------- persistence


def test_report_files(report, tmp_path):
    report.save_json(tmp_path / "r.json")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["n_tiles"] == 20 and data["records"][0]["predicted_shift"] is None
    report.save_records_csv(tmp_path / "r.csv")
    with open(tmp_path / "r.csv", newline="") as fh:
        rows = list(csv.reader(fh))
    assert tuple(rows[0]) == RECORD_CSV_HEADER
    assert len(rows) == 21
    assert float(rows[5][7]) == report.records[4].residual_error


def test_export_focus_map_roundtrip(report, tmp_path):
    csv_path, png_path = export_focus_map(report, tmp_path)
    grid = read_focus_map(csv_path)
    np.testing.assert_array_equal(grid, np.round(report.differential_focus_map, 6))
    text = csv_path.read_text().splitlines()[0].split(",")
    assert all(len(v.split(".")[1]) == 6 for v in text)
    with Image.open(png_path) as im:
        px = np.asarray(im)
    assert px.dtype == np.uint8 and px.shape == report.shape
    assert px.min() == 0 and px.max() == 255


def test_uniform_slide_map_is_flat():
    rep = run_scan(small_plan(focus_profile=FLAT, start_z_error=0.0), CFG, CURVE, seed=1)
    assert np.abs(rep.differential_focus_map).max() <= 0.2


def test_planar_tilt_map():
    # tilt along y only: moving within a row costs nothing, each row change climbs 0.5 um
    plan = small_plan(rows=4, cols=4, focus_profile=FocusProfile(amplitude=0.0, tilt_y=0.5),
                      start_z_error=0.0)
    rep = run_scan(plan, CFG, CURVE, seed=2)
    dmap = rep.differential_focus_map
    for i, rec in enumerate(rep.records[1:], start=1):
        expected = 0.5 if rec.row != rep.records[i - 1].row else 0.0
        assert dmap[rec.row, rec.col] == pytest.approx(expected, abs=0.2)


def test_export_empty_report(tmp_path):
    empty = ScanReport([], 0.0, 0.0, 0.0, 0.0, np.zeros((1, 1)), 0.0, "xcorr", 1)
    with pytest.raises(EmptyReportError):
        export_focus_map(empty, tmp_path)


# ---------------------------------------------------------------- summaries


def test_summarize_single_tile():
    rep = run_scan(small_plan(rows=1, cols=1, start_z_error=0.4), CFG, CURVE)
    ((key, n, elapsed, mean, std),) = summarize(rep)
    assert key == "xcorr" and n == 1
    assert mean == pytest.approx(0.4) and std == 0.0


def test_summarize_merges_reports(report):
    other = run_scan(replace(ScanPlan(rows=4, cols=5, tile_size=128), sample="second"), CFG, CURVE, seed=8)
    ((key, n, elapsed, mean, std),) = summarize([report, other], "method")
    pooled = np.concatenate([[r.residual_error for r in rep.records] for rep in (report, other)])
    assert n == 40
    assert mean == pytest.approx(0.5 * (report.mean_error + other.mean_error), abs=1e-12)
    assert std == pytest.approx(pooled.std(), abs=1e-12)
    by_sample = summarize([report, other], "sample")
    assert [row[0] for row in by_sample] == ["sample", "second"]
    assert summarize([report, other]) == summarize([report, other])


def test_summarize_elapsed_skips_first_tile(report):
    ((_, _, elapsed, _, _),) = summarize(report)
    assert elapsed == pytest.approx(TimingModel().t_process_mi, rel=1e-12)


def test_summarize_empty():
    with pytest.raises(EmptyReportError):
        summarize([])
