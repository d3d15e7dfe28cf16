"""Brenner-gradient focus oracle and the shift/defocus calibration line."""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .crosstalk import correct
from .frames import MuxFocusError
from .optics import OpticsConfig, ZStack, generate_phantom, render_multiplexed
from .shift import parabolic_peak_offset, estimate_shift

BRENNER_OFFSET = 2


class ImageTooNarrowError(MuxFocusError):
    pass


class AllZeroScoresError(MuxFocusError):
    pass


class DegenerateSpanError(MuxFocusError):
    pass


class RankDeficientError(MuxFocusError):
    pass


@dataclass(frozen=True)
class CalibrationCurve:
    slope: float  # px per um
    intercept: float  # px
    residual_rms: float = 0.0

    def __post_init__(self):
        if self.slope == 0 or not np.isfinite(self.slope):
            raise MuxFocusError("calibration slope must be finite and non-zero")
        if self.residual_rms < 0:
            raise MuxFocusError("residual_rms must be non-negative")

    def to_dict(self) -> dict:
        return {
            "slope_px_per_um": self.slope,
            "intercept_px": self.intercept,
            "residual_rms_px": self.residual_rms,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationCurve":
        return cls(
            slope=float(d["slope_px_per_um"]),
            intercept=float(d["intercept_px"]),
            residual_rms=float(d.get("residual_rms_px", 0.0)),
        )

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CalibrationCurve":
        return cls.from_dict(json.loads(Path(path).read_text()))


@dataclass(frozen=True)
class FocusScoreTrace:
    z_positions: np.ndarray
    scores: np.ndarray
    best_z: float


def brenner(image) -> float:
    """Sum of squared differences between pixels two columns apart."""
    img = np.asarray(image, dtype=np.float64)
    if img.ndim != 2 or img.shape[1] < BRENNER_OFFSET + 1:
        raise ImageTooNarrowError("Brenner gradient needs a 2-D image at least 3 pixels wide")
    diff = img[:, BRENNER_OFFSET:] - img[:, :-BRENNER_OFFSET]
    return float(np.sum(np.einsum("ij,ij->i", diff, diff)))


def best_focus(stack: ZStack) -> FocusScoreTrace:
    """Brenner-maximizing z of a stack, refined by a parabola through the log-scores.

    Equal maxima resolve to the plane nearest the stack centre.
    """
    z = stack.z_positions
    if len(z) < 3:
        raise MuxFocusError("best_focus needs at least 3 planes")
    scores = np.array([brenner(p) for p in stack.planes])
    if not np.any(scores > 0):
        raise AllZeroScoresError("every plane has a zero Brenner score")
    center = (len(z) - 1) / 2.0
    best = np.flatnonzero(scores == scores.max())
    i = int(best[np.argmin(np.abs(best - center))])
    best_z = float(z[i])
    if 0 < i < len(z) - 1 and scores[i - 1] > 0 and scores[i + 1] > 0:
        left, mid, right = np.log(scores[i - 1:i + 2])
        best_z += parabolic_peak_offset(left, mid, right) * float(z[i + 1] - z[i])
    return FocusScoreTrace(z_positions=z, scores=scores, best_z=best_z)


def fit_calibration(samples) -> CalibrationCurve:
    """Least-squares line ``shift = slope * defocus + intercept``.

    ``samples`` is an iterable of ``(defocus_um, shift_px)``; at least three
    are required and the defocus values must span 2 um or more.
    """
    data = np.asarray(list(samples), dtype=np.float64)
    if data.ndim != 2 or data.shape[0] < 3 or data.shape[1] != 2:
        raise DegenerateSpanError("need at least 3 (defocus, shift) samples")
    z, s = data[:, 0], data[:, 1]
    if np.ptp(z) < 2.0:
        raise DegenerateSpanError(f"defocus samples span {np.ptp(z):.3g} um; need >= 2 um")
    design = np.column_stack((z, np.ones_like(z)))
    coef, _, rank, _ = np.linalg.lstsq(design, s, rcond=None)
    if rank < 2:
        raise RankDeficientError("calibration design matrix is rank deficient")
    # a flat response leaves round-off as the slope; nothing to invert
    if abs(coef[0]) * np.ptp(z) <= 1e-9 * max(1.0, float(np.abs(s).max())):
        raise DegenerateSpanError("measured shift does not change with defocus")
    resid = s - design @ coef
    return CalibrationCurve(
        slope=float(coef[0]),
        intercept=float(coef[1]),
        residual_rms=float(np.sqrt(np.mean(resid**2))),
    )


def predict_defocus(curve: CalibrationCurve, shift: float) -> float:
    return (shift - curve.intercept) / curve.slope


def sweep_calibration(
    cfg: OpticsConfig,
    z_values,
    *,
    method: str = "mutual_info",
    subsample_ratio: int = 1,
    seed: int = 0,
    size: int = 256,
    style: str = "tissue",
    blur_px: float = 0.0,
):
    """Measure ``(defocus, shift)`` pairs on one simulated target.

    Frames are crosstalk-corrected with ``cfg.crosstalk`` before estimation.
    """
    obj = generate_phantom(seed, size, size, style)
    samples = []
    for k, z in enumerate(z_values):
        frame = render_multiplexed(obj, float(z), blur_px, cfg, seed=[seed, k])
        est = estimate_shift(correct(frame, cfg.crosstalk), method, subsample_ratio)
        samples.append((float(z), est.shift_y))
    return samples
