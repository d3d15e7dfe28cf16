"""Continuous-motion tile scan with differential focus tracking.

Per tile, in serpentine order:

1. capture the brightfield image at the current objective position;
2. move to the next tile, capturing the red/green multiplexed frame on the way;
3. correct crosstalk and estimate the channel shift;
4. move the objective by the predicted defocus.

The controller never sees absolute heights. The simulation mirrors that: the
focus profile's constant ``base_z`` only enters the reported absolute values,
while rendering and grading use offset-free heights.
"""
from __future__ import annotations

import csv
import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .crosstalk import CrosstalkCoefficients, correct
from .focus import CalibrationCurve, best_focus, brenner, predict_defocus
from .frames import MuxFocusError
from .imio import write_heatmap
from .optics import (
    OpticsConfig,
    generate_phantom,
    render_brightfield,
    render_multiplexed,
    render_zstack,
)
from .shift import METHODS, estimate_shift

DEPTH_OF_FIELD = 0.7  # um, half-width
RECORD_CSV_HEADER = (
    "tile_id", "row", "col", "true_z_um", "shift_px", "pred_z_um",
    "applied_z_um", "err_um", "t_total_s", "flag",
)


class EmptyReportError(MuxFocusError):
    pass


@dataclass(frozen=True)
class FocusProfile:
    """True specimen height over the slide: plane tilt plus smooth undulation.

    Heights in um, positions in um, tilts in um per mm. The undulation is a
    seeded sum of ``n_waves`` plane waves with wavelengths in
    ``[wavelength, 2 * wavelength]``, normalised so it never exceeds
    ``amplitude``.
    """

    base_z: float = 0.0
    tilt_x: float = 0.0
    tilt_y: float = 0.0
    amplitude: float = 3.0
    wavelength: float = 15000.0
    n_waves: int = 2
    seed: int = 0

    def _waves(self):
        rng = np.random.default_rng(self.seed)
        angles = rng.uniform(0, 2 * np.pi, self.n_waves)
        lengths = rng.uniform(self.wavelength, 2 * self.wavelength, self.n_waves)
        phases = rng.uniform(0, 2 * np.pi, self.n_waves)
        weights = rng.uniform(0.5, 1.0, self.n_waves)
        return angles, lengths, phases, weights / weights.sum()

    def relative(self, x, y):
        """Height above ``base_z``."""
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        z = self.tilt_x * x / 1000.0 + self.tilt_y * y / 1000.0
        if self.amplitude and self.n_waves:
            angles, lengths, phases, weights = self._waves()
            for a, lam, ph, w in zip(angles, lengths, phases, weights):
                k = 2 * np.pi / lam
                z = z + self.amplitude * w * np.sin(k * (np.cos(a) * x + np.sin(a) * y) + ph)
        return z

    def __call__(self, x, y):
        return self.base_z + self.relative(x, y)


@dataclass(frozen=True)
class ScanPlan:
    rows: int = 10
    cols: int = 10
    tile_pitch: float = 1000.0  # um
    focus_profile: FocusProfile = field(default_factory=FocusProfile)
    method: str = "mutual_info"
    subsample_ratio: int = 3
    blur_px: float = 0.0
    start_z_error: float = 1.0
    tile_size: int = 256
    style: str = "tissue"
    sample: str = "sample"

    def __post_init__(self):
        if self.rows < 1 or self.cols < 1:
            raise MuxFocusError("scan grid needs at least one tile")
        if self.tile_pitch <= 0:
            raise MuxFocusError("tile_pitch must be positive")
        if self.method == "mi":
            object.__setattr__(self, "method", "mutual_info")
        if self.method not in METHODS:
            raise MuxFocusError(f"unknown method {self.method!r}; expected one of {METHODS}")
        if int(self.subsample_ratio) != self.subsample_ratio or self.subsample_ratio < 1:
            raise MuxFocusError("subsample_ratio must be a positive integer")

    def order(self):
        """Serpentine tile order as ``(row, col)`` pairs."""
        out = []
        for r in range(self.rows):
            cols = range(self.cols) if r % 2 == 0 else range(self.cols - 1, -1, -1)
            out.extend((r, c) for c in cols)
        return out


@dataclass(frozen=True)
class TimingModel:
    t_image: float = 0.04
    t_stage: float = 0.2
    t_process_xcorr: float = 0.044
    t_process_mi: float = 0.065
    t_z_move: float = 0.045
    overlap_stage_with_capture: bool = True

    def __post_init__(self):
        for name in ("t_image", "t_stage", "t_process_xcorr", "t_process_mi", "t_z_move"):
            if getattr(self, name) < 0:
                raise MuxFocusError(f"{name} must be non-negative")

    def process_time(self, method: str) -> float:
        return self.t_process_xcorr if method == "xcorr" else self.t_process_mi

    def move_and_capture(self) -> float:
        if self.overlap_stage_with_capture:
            return max(self.t_stage, self.t_image)
        return self.t_stage + self.t_image

    def cycle_time(self, method: str, t_process=None) -> float:
        """One full tile cycle: brightfield, move with capture, estimate, refocus."""
        if t_process is None:
            t_process = self.process_time(method)
        return self.t_image + self.move_and_capture() + t_process + self.t_z_move


@dataclass
class TileRecord:
    tile_id: int
    row: int
    col: int
    true_focus: float
    predicted_shift: float
    predicted_defocus: float
    applied_z: float
    residual_error: float
    t_brightfield: float
    t_move_capture: float
    t_process: float
    t_z_move: float
    flag: str = ""
    brightfield_brenner: float = math.nan
    oracle_z: float = math.nan

    @property
    def t_total(self) -> float:
        return self.t_brightfield + self.t_move_capture + self.t_process + self.t_z_move


@dataclass
class ScanReport:
    records: list
    mean_error: float
    std_error: float
    within_dof_fraction: float
    total_time: float
    differential_focus_map: np.ndarray
    initial_z: float
    method: str
    subsample_ratio: int
    sample: str = "sample"

    @property
    def shape(self):
        return self.differential_focus_map.shape

    def to_dict(self) -> dict:
        return {
            "sample": self.sample,
            "method": self.method,
            "subsample_ratio": self.subsample_ratio,
            "n_tiles": len(self.records),
            "mean_error_um": self.mean_error,
            "std_error_um": self.std_error,
            "within_dof_fraction": self.within_dof_fraction,
            "total_time_s": self.total_time,
            "initial_z_um": self.initial_z,
            "differential_focus_map_um": self.differential_focus_map.tolist(),
            "records": [_json_safe(asdict(r)) for r in self.records],
        }

    def save_json(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=1, sort_keys=True) + "\n")

    def save_records_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(RECORD_CSV_HEADER)
            for r in self.records:
                w.writerow([
                    r.tile_id, r.row, r.col, _fmt(r.true_focus), _fmt(r.predicted_shift),
                    _fmt(r.predicted_defocus), _fmt(r.applied_z), _fmt(r.residual_error),
                    _fmt(r.t_total), r.flag,
                ])


def _fmt(v: float) -> str:
    return "" if v is None or not math.isfinite(v) else repr(float(v))


def _json_safe(d: dict) -> dict:
    return {k: (None if isinstance(v, float) and not math.isfinite(v) else v) for k, v in d.items()}


def error_statistics(errors) -> tuple[float, float, float]:
    e = np.asarray(errors, dtype=np.float64)
    return float(np.mean(e)), float(np.std(e)), float(np.mean(e <= DEPTH_OF_FIELD))


def run_scan(
    plan: ScanPlan,
    cfg: OpticsConfig,
    curve: CalibrationCurve,
    timing: TimingModel = TimingModel(),
    seed: int = 0,
    *,
    coeffs: CrosstalkCoefficients | None = None,
    measured_processing: bool = False,
    grade_with_oracle: bool = False,
) -> ScanReport:
    """Simulate a whole-slide scan and grade each tile against the programmed focus.

    Parameters
    ----------
    coeffs
        Session crosstalk coefficients used for correction; defaults to the
        simulator's own ``cfg.crosstalk`` (i.e. a perfect calibration).
    measured_processing
        Book the estimator's measured wall time instead of the model constant.
        Makes ``total_time`` non-deterministic.
    grade_with_oracle
        Also locate each tile's focus with an 11-plane Brenner z-stack and
        store it as ``oracle_z``.

    A tile whose frame cannot be rendered or whose estimator fails keeps the
    previous objective position and is flagged; the scan always completes.
    """
    coeffs = cfg.crosstalk if coeffs is None else coeffs
    profile = plan.focus_profile
    order = plan.order()
    rel_true = [float(profile.relative(c * plan.tile_pitch, r * plan.tile_pitch)) for r, c in order]
    move = timing.move_and_capture()

    def phantom(i):
        return generate_phantom([seed, i], plan.tile_size, plan.tile_size, plan.style)

    records = []
    deltas = []
    applied = rel_true[0] + plan.start_z_error
    obj = phantom(0)
    for i, (r, c) in enumerate(order):
        shift = pred = math.nan
        flag = ""
        t_move = t_proc = t_z = 0.0
        if i > 0:
            # capture at the new tile with the objective still at the previous height
            obj = phantom(i)
            t_move, t_z = move, timing.t_z_move
            t_proc = timing.process_time(plan.method)
            try:
                frame = render_multiplexed(
                    obj, rel_true[i] - applied, plan.blur_px, cfg, seed=[seed, i, 1]
                )
                est = estimate_shift(correct(frame, coeffs), plan.method, plan.subsample_ratio)
                shift = est.shift_y
                pred = predict_defocus(curve, shift)
                if measured_processing:
                    t_proc = est.elapsed
            except MuxFocusError as exc:
                flag = f"estimator_failure:{type(exc).__name__}"
            delta = 0.0 if flag else pred
            applied = applied + delta
            deltas.append(delta)
        else:
            deltas.append(0.0)

        bright = render_brightfield(obj, applied - rel_true[i], cfg, seed=[seed, i, 0])
        oracle = math.nan
        if grade_with_oracle:
            stack = render_zstack(obj, applied, 5.0, 11, cfg, focus_z=rel_true[i], seed=[seed, i, 2])
            oracle = profile.base_z + best_focus(stack).best_z
        records.append(
            TileRecord(
                tile_id=i,
                row=r,
                col=c,
                true_focus=profile.base_z + rel_true[i],
                predicted_shift=shift,
                predicted_defocus=pred,
                applied_z=profile.base_z + applied,
                residual_error=abs(applied - rel_true[i]),
                t_brightfield=timing.t_image,
                t_move_capture=t_move,
                t_process=t_proc,
                t_z_move=t_z,
                flag=flag,
                brightfield_brenner=brenner(bright),
                oracle_z=oracle,
            )
        )

    dmap = np.zeros((plan.rows, plan.cols))
    for rec, d in zip(records, deltas):
        dmap[rec.row, rec.col] = d
    mean, std, within = error_statistics([rec.residual_error for rec in records])
    return ScanReport(
        records=records,
        mean_error=mean,
        std_error=std,
        within_dof_fraction=within,
        total_time=sum(rec.t_total for rec in records),
        differential_focus_map=dmap,
        initial_z=records[0].applied_z,
        method=plan.method,
        subsample_ratio=plan.subsample_ratio,
        sample=plan.sample,
    )


def reconstruct_applied_z(report: ScanReport) -> np.ndarray:
    """Rebuild per-tile objective heights (scan order) from the differential map."""
    steps = np.array([report.differential_focus_map[r.row, r.col] for r in report.records])
    steps[0] = 0.0
    return report.initial_z + np.cumsum(steps)


# ---------------------------------------------------------------------------
# summaries and exports

SUMMARY_HEADER = ("group", "tiles", "mean_elapsed_s", "mean_error_um", "std_error_um")


def summary_rows(items, group_by: str = "method"):
    """Group ``(keys, elapsed, error)`` triples into method x ratio summary rows.

    ``keys`` maps ``method``/``subsample_ratio``/``sample`` to values and an
    ``elapsed`` of None is left out of the timing mean; rows come
    back sorted by group key as
    ``(key, count, mean elapsed, mean error, std error)``.
    """
    groups: dict = {}
    for keys, elapsed, error in items:
        if group_by == "method_ratio":
            key = (keys["method"], keys["subsample_ratio"])
        else:
            key = keys[group_by]
        groups.setdefault(key, ([], []))
        if elapsed is not None:
            groups[key][0].append(elapsed)
        groups[key][1].append(error)
    if not groups:
        raise EmptyReportError("nothing to summarize")
    rows = []
    for key in sorted(groups):
        elapsed, errors = (np.asarray(v, dtype=np.float64) for v in groups[key])
        mean_elapsed = float(np.mean(elapsed)) if elapsed.size else 0.0
        rows.append((key, int(errors.size), mean_elapsed,
                     float(np.mean(errors)), float(np.std(errors))))
    return rows


def summarize(reports, group_by: str = "method"):
    """Summary table over one or more scan reports.

    ``group_by`` is ``"method"``, ``"subsample_ratio"``, ``"sample"`` or
    ``"method_ratio"``. Only tiles that carried an estimate (all but the first
    of each scan) contribute elapsed times; every tile contributes its error.
    """
    if isinstance(reports, ScanReport):
        reports = [reports]
    items = []
    for rep in reports:
        if not rep.records:
            raise EmptyReportError("report has no tiles")
        keys = {"method": rep.method, "subsample_ratio": rep.subsample_ratio, "sample": rep.sample}
        for rec in rep.records:
            elapsed = rec.t_process if rec.tile_id > 0 else None
            items.append((keys, elapsed, rec.residual_error))
    return summary_rows(items, group_by)


def format_table(rows, header=SUMMARY_HEADER) -> str:
    """Aligned plain-text rendering of summary rows."""
    cells = [list(header)]
    for key, n, el, mean, std in rows:
        label = " ".join(str(k) for k in key) if isinstance(key, tuple) else str(key)
        cells.append([label, str(n), f"{el:.4f}", f"{mean:.3f}", f"{std:.3f}"])
    widths = [max(len(row[i]) for row in cells) for i in range(len(header))]
    return "\n".join(
        "  ".join(v.ljust(w) if i == 0 else v.rjust(w) for i, (v, w) in enumerate(zip(row, widths)))
        for row in cells
    ) + "\n"


def export_focus_map(report: ScanReport, out_dir, stem: str = "focus_map"):
    """Write the differential focus map as CSV (6 decimals) and an 8-bit PNG heatmap."""
    if not report.records:
        raise EmptyReportError("report has no tiles")
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / f"{stem}.csv"
    png_path = out_dir / f"{stem}.png"
    grid = report.differential_focus_map
    with open(csv_path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        for row in grid:
            w.writerow([f"{v:.6f}" for v in row])
    write_heatmap(png_path, grid)
    return csv_path, png_path


def read_focus_map(path) -> np.ndarray:
    with open(path, newline="") as fh:
        return np.array([[float(v) for v in row] for row in csv.reader(fh)])
