"""Red/green spectral crosstalk: coefficient estimation and unmixing.

Mixing model (per pixel)::

    I_R = O_R + w_gr * O_G
    I_G = w_rg * O_R + O_G

``O_*`` are single-LED captures, ``I_*`` the dual-LED capture.
"""
from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .frames import ColorFrame, DimensionError, GroundTruthPair, MuxFocusError

SINGULAR_TOL = 1e-6
DEFAULT_DENOM_FLOOR = 0.05


class NoValidPixelsError(MuxFocusError):
    pass


class SingularMixingError(MuxFocusError):
    pass


@dataclass(frozen=True)
class CrosstalkCoefficients:
    """Leakage fractions: ``w_gr`` is green light seen by the red channel,
    ``w_rg`` red light seen by the green channel."""

    w_gr: float = 0.0
    w_rg: float = 0.0

    def __post_init__(self):
        for name in ("w_gr", "w_rg"):
            v = float(getattr(self, name))
            if not (0.0 <= v < 1.0):
                raise MuxFocusError(f"{name} must lie in [0, 1), got {v}")
            object.__setattr__(self, name, v)

    @property
    def determinant(self) -> float:
        return 1.0 - self.w_gr * self.w_rg

    def to_dict(self) -> dict:
        return {"w_gr": self.w_gr, "w_rg": self.w_rg}

    @classmethod
    def from_dict(cls, d: dict) -> "CrosstalkCoefficients":
        return cls(w_gr=float(d["w_gr"]), w_rg=float(d["w_rg"]))

    def save(self, path) -> None:
        Path(path).write_text(json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n")

    @classmethod
    def load(cls, path) -> "CrosstalkCoefficients":
        return cls.from_dict(json.loads(Path(path).read_text()))


def mix(obj: GroundTruthPair, coeffs: CrosstalkCoefficients) -> ColorFrame:
    """Forward crosstalk model. No clamping."""
    return ColorFrame(
        red=obj.red + coeffs.w_gr * obj.green,
        green=coeffs.w_rg * obj.red + obj.green,
    )


def _ratio_mean(num: np.ndarray, den: np.ndarray, floor: float, label: str) -> float:
    mask = den >= floor
    n = int(np.count_nonzero(mask))
    if n == 0:
        raise NoValidPixelsError(
            f"no pixel has {label} >= {floor}; lower denom_floor or use a brighter target"
        )
    # np.sum uses pairwise summation: deterministic and accurate
    return float(np.sum(num[mask] / den[mask]) / n)


def estimate_coefficients(
    multiplexed: ColorFrame,
    truth: GroundTruthPair,
    denom_floor: float = DEFAULT_DENOM_FLOOR,
) -> CrosstalkCoefficients:
    """Estimate ``(w_gr, w_rg)`` from an aligned dual-LED frame and its single-LED truth.

    Each coefficient is the mean of the per-pixel leakage ratio, taken only over
    pixels whose denominator (``O_G`` for ``w_gr``, ``O_R`` for ``w_rg``) is at
    least ``denom_floor``. Dark pixels are excluded rather than regularised.

    Raises
    ------
    DimensionError
        If the frame and the truth pair differ in shape.
    NoValidPixelsError
        If every denominator pixel is below ``denom_floor``.
    """
    if denom_floor <= 0:
        raise MuxFocusError("denom_floor must be positive")
    if multiplexed.shape != truth.shape:
        raise DimensionError(
            f"frame {multiplexed.shape} and truth {truth.shape} differ in shape"
        )
    w_gr = _ratio_mean(multiplexed.red - truth.red, truth.green, denom_floor, "O_G")
    w_rg = _ratio_mean(multiplexed.green - truth.green, truth.red, denom_floor, "O_R")
    # noise can push a near-zero estimate slightly negative
    return CrosstalkCoefficients(w_gr=max(w_gr, 0.0), w_rg=max(w_rg, 0.0))


def correct(multiplexed: ColorFrame, coeffs: CrosstalkCoefficients) -> ColorFrame:
    """Invert the crosstalk mixing pointwise. Output is not clamped."""
    det = coeffs.determinant
    if abs(det) < SINGULAR_TOL:
        raise SingularMixingError(f"|1 - w_gr*w_rg| = {abs(det):.3g} is below {SINGULAR_TOL}")
    i_r, i_g = multiplexed.red, multiplexed.green
    red = (i_r - coeffs.w_gr * i_g) / det
    green = (coeffs.w_rg * i_r - i_g) / (coeffs.w_gr * coeffs.w_rg - 1.0)
    return ColorFrame(red=red, green=green)
