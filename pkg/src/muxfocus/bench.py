"""Methods x subsample-ratios benchmark over simulated tiles."""
from __future__ import annotations

import csv
import math
from dataclasses import dataclass

import numpy as np

from .crosstalk import correct
from .focus import CalibrationCurve, predict_defocus
from .frames import MuxFocusError
from .optics import OpticsConfig, channel_separation, generate_phantom, render_multiplexed, shift_per_micron
from .scan import summary_rows
from .shift import METHODS, estimate_shift

RATIOS = (1, 3, 5, 7)
CSV_HEADER = ("method", "subsample_ratio", "tile_id", "shift_px", "defocus_um", "error_um", "elapsed_s", "failed")
SUMMARY_CSV_HEADER = ("method", "subsample_ratio", "tiles", "mean_elapsed_s", "mean_error_um", "std_error_um")


@dataclass(frozen=True)
class BenchRecord:
    method: str
    subsample_ratio: int
    tile_id: int
    shift_px: float
    defocus_um: float  # programmed defocus
    error_um: float
    elapsed_s: float
    failed: bool = False

    def shift_error_px(self, cfg: OpticsConfig) -> float:
        return abs(self.shift_px - channel_separation(self.defocus_um, cfg))


def run_benchmark(
    cfg: OpticsConfig,
    tiles: int = 594,
    *,
    methods=METHODS,
    ratios=RATIOS,
    seed: int = 0,
    size: int = 256,
    defocus_range: float = 5.0,
    style: str = "tissue",
    blur_px: float = 0.0,
    curve: CalibrationCurve | None = None,
    clock: bool = True,
) -> list[BenchRecord]:
    """Evaluate every (method, ratio) cell on the same ``tiles`` simulated frames.

    Tile ``t`` draws its phantom and a defocus uniform in ``+-defocus_range`` um
    from ``(seed, t)`` alone, so cells see identical frames and any subset of
    cells reproduces the same numbers. ``curve`` defaults to the geometric line
    through the origin. A failed estimate is booked as zero shift (no
    correction), matching the scan's carry-forward policy. With ``clock=False``
    elapsed times are recorded as 0 so outputs are byte-reproducible.
    """
    if curve is None:
        curve = CalibrationCurve(slope=shift_per_micron(cfg), intercept=0.0)
    out = []
    for t in range(tiles):
        obj = generate_phantom([seed, t], size, size, style)
        z = float(np.random.default_rng([seed, t, 7]).uniform(-defocus_range, defocus_range))
        frame = correct(render_multiplexed(obj, z, blur_px, cfg, seed=[seed, t, 1]), cfg.crosstalk)
        for method in methods:
            for n in ratios:
                try:
                    est = estimate_shift(frame, method, n)
                    shift, elapsed, failed = est.shift_y, est.elapsed, False
                except MuxFocusError:
                    shift, elapsed, failed = 0.0, 0.0, True
                pred = predict_defocus(curve, shift) if not failed else 0.0
                out.append(BenchRecord(
                    method=method,
                    subsample_ratio=int(n),
                    tile_id=t,
                    shift_px=float(shift),
                    defocus_um=z,
                    error_um=abs(pred - z),
                    elapsed_s=float(elapsed) if clock else 0.0,
                    failed=failed,
                ))
    return out


def summarize_bench(records):
    """Rows ``((method, ratio), tiles, mean elapsed, mean error, std error)``."""
    items = [
        ({"method": r.method, "subsample_ratio": r.subsample_ratio, "sample": "bench"},
         r.elapsed_s, r.error_um)
        for r in records
    ]
    rows = summary_rows(items, "method_ratio")
    order = {m: i for i, m in enumerate(METHODS)}
    return sorted(rows, key=lambda row: (order.get(row[0][0], len(order)), row[0][1]))


def _num(v: float) -> str:
    return repr(float(v)) if math.isfinite(v) else ""


def write_records_csv(path, records) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(CSV_HEADER)
        for r in records:
            w.writerow([r.method, r.subsample_ratio, r.tile_id, _num(r.shift_px),
                        _num(r.defocus_um), _num(r.error_um), _num(r.elapsed_s), int(r.failed)])


def write_summary_csv(path, rows) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(SUMMARY_CSV_HEADER)
        for (method, n), count, elapsed, mean, std in rows:
            w.writerow([method, n, count, _num(elapsed), _num(mean), _num(std)])


def read_records_csv(path) -> list[BenchRecord]:
    with open(path, newline="") as fh:
        return [
            BenchRecord(
                method=row["method"],
                subsample_ratio=int(row["subsample_ratio"]),
                tile_id=int(row["tile_id"]),
                shift_px=float(row["shift_px"]),
                defocus_um=float(row["defocus_um"]),
                error_um=float(row["error_um"]),
                elapsed_s=float(row["elapsed_s"]),
                failed=row.get("failed", "0") == "1",
            )
            for row in csv.DictReader(fh)
        ]
