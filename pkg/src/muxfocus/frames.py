"""Shared image containers and the package exception hierarchy.

Image planes are plain 2-D ``float64`` numpy arrays indexed ``[y, x]``;
the containers below only pair them up and check shapes.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

MIN_PLANE_SIZE = 16


class MuxFocusError(ValueError):
    """Base class for domain errors raised by this package."""


class DimensionError(MuxFocusError):
    pass


def check_plane(values, name: str = "plane", *, unit_range: bool = True) -> np.ndarray:
    """Return ``values`` as a float64 2-D array, validating size and range."""
    arr = np.asarray(values, dtype=np.float64)
    if arr.ndim != 2:
        raise DimensionError(f"{name} must be 2-D, got shape {arr.shape}")
    if min(arr.shape) < MIN_PLANE_SIZE:
        raise DimensionError(
            f"{name} must be at least {MIN_PLANE_SIZE}x{MIN_PLANE_SIZE}, got {arr.shape}"
        )
    if not np.all(np.isfinite(arr)):
        raise MuxFocusError(f"{name} contains non-finite values")
    if unit_range and (arr.min() < 0.0 or arr.max() > 1.0):
        raise MuxFocusError(f"{name} values must lie in [0, 1]")
    return arr


@dataclass(frozen=True)
class _ChannelPair:
    red: np.ndarray
    green: np.ndarray

    def __post_init__(self):
        red = np.asarray(self.red, dtype=np.float64)
        green = np.asarray(self.green, dtype=np.float64)
        if red.shape != green.shape:
            raise DimensionError(
                f"red/green planes differ in shape: {red.shape} vs {green.shape}"
            )
        object.__setattr__(self, "red", red)
        object.__setattr__(self, "green", green)

    @property
    def shape(self) -> tuple[int, int]:
        return self.red.shape

    def __eq__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return np.array_equal(self.red, other.red) and np.array_equal(self.green, other.green)

    __hash__ = None


class GroundTruthPair(_ChannelPair):
    """Clean per-channel object images: red under red-only, green under green-only light."""


class ColorFrame(_ChannelPair):
    """Red and green channels of one captured colour frame."""
