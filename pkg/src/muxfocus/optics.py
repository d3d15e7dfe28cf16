"""Deterministic synthetic microscope.

Stands in for the hardware: stained-specimen phantoms, brightfield images,
z-stacks and red/green multiplexed frames with defocus shift, defocus blur,
x-axis motion blur, channel crosstalk and additive noise.

Coordinates are ``[y, x]``. The two LEDs sit on opposite sides along y, so a
defocus ``z`` displaces the red channel by ``+s/2`` and the green channel by
``-s/2`` rows with ``s = z * shift_per_micron(cfg)``.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy import ndimage
from scipy.signal import fftconvolve

from .crosstalk import CrosstalkCoefficients, mix
from .frames import ColorFrame, DimensionError, GroundTruthPair, MuxFocusError

# Phantom transmission is scaled so that dual-LED mixing with w < 0.5 stays below 1.
BACKGROUND_LEVEL = 0.62
MIN_PHANTOM_SIZE = 64
PHANTOM_STYLES = ("blood_smear", "tissue", "two_layer")

# Absorbance of (hematoxylin-like, eosin-like) stain per channel, rows = (red, green).
DEFAULT_STAINS = {
    "tissue": ((1.1, 0.25), (0.9, 0.8)),
    "blood_smear": ((1.2, 0.35), (1.0, 0.9)),
    "two_layer": ((1.0, 0.3), (0.9, 0.8)),
}
DEFAULT_GAMMA = (1.0, 1.25)


class ShiftExceedsFrameError(MuxFocusError):
    pass


@dataclass(frozen=True)
class OpticsConfig:
    illumination_na: float = 0.4
    objective_na: float = 0.75
    # 20X objective relayed by a 105 mm lens instead of a 200 mm tube lens
    magnification: float = 10.5
    camera_pixel: float = 2.4  # um
    defocus_blur_coeff: float = 0.8  # blur sigma in px per um of defocus
    noise_sigma: float = 0.0
    crosstalk: CrosstalkCoefficients = field(
        default_factory=lambda: CrosstalkCoefficients(0.12, 0.08)
    )
    rng_seed: int = 0

    def __post_init__(self):
        if not (0.0 <= self.illumination_na < self.objective_na < 1.0):
            raise MuxFocusError("need 0 <= illumination_na < objective_na < 1")
        if self.magnification <= 0 or self.camera_pixel <= 0:
            raise MuxFocusError("magnification and camera_pixel must be positive")
        if self.noise_sigma < 0 or self.defocus_blur_coeff < 0:
            raise MuxFocusError("noise_sigma and defocus_blur_coeff must be non-negative")
        if isinstance(self.crosstalk, dict):
            object.__setattr__(self, "crosstalk", CrosstalkCoefficients.from_dict(self.crosstalk))

    def with_(self, **changes) -> "OpticsConfig":
        return replace(self, **changes)

    def to_dict(self) -> dict:
        return {
            "illumination_na": self.illumination_na,
            "objective_na": self.objective_na,
            "magnification": self.magnification,
            "camera_pixel": self.camera_pixel,
            "defocus_blur_coeff": self.defocus_blur_coeff,
            "noise_sigma": self.noise_sigma,
            "crosstalk": self.crosstalk.to_dict(),
            "rng_seed": self.rng_seed,
        }


@dataclass(frozen=True)
class ZStack:
    planes: tuple
    z_positions: np.ndarray

    def __post_init__(self):
        z = np.asarray(self.z_positions, dtype=np.float64)
        if len(self.planes) != z.size or z.size < 3:
            raise MuxFocusError("a z-stack needs >= 3 planes, one per z position")
        steps = np.diff(z)
        if np.any(steps < 0) or not np.allclose(steps, steps[0], rtol=0, atol=1e-9):
            raise MuxFocusError("z positions must be uniformly spaced and increasing")
        object.__setattr__(self, "planes", tuple(self.planes))
        object.__setattr__(self, "z_positions", z)

    def __len__(self):
        return len(self.planes)


def shift_per_micron(cfg: OpticsConfig) -> float:
    """Red-to-green separation in pixels per micron of defocus."""
    half_angle = math.asin(cfg.illumination_na)
    return 2.0 * math.tan(half_angle) * cfg.magnification / cfg.camera_pixel


# ---------------------------------------------------------------------------
# Phantoms


def _smooth_disc(radius: float, edge: float = 0.8, half: int | None = None) -> np.ndarray:
    if half is None:
        half = int(math.ceil(radius + 4 * edge))
    yy, xx = np.mgrid[-half:half + 1, -half:half + 1]
    r = np.hypot(yy, xx)
    return 0.5 * (1.0 - np.tanh((r - radius) / edge))


def _scatter(rng, shape, density: float, kernel: np.ndarray, weight=(0.6, 1.0)) -> np.ndarray:
    """Stamp ``kernel`` at Poisson-distributed sites with random weights."""
    h, w = shape
    n = rng.poisson(density * h * w)
    impulses = np.zeros(shape)
    ys = rng.integers(0, h, n)
    xs = rng.integers(0, w, n)
    np.add.at(impulses, (ys, xs), rng.uniform(*weight, n))
    return np.clip(fftconvolve(impulses, kernel, mode="same"), 0.0, None)


def _texture(rng, shape, sigma: float) -> np.ndarray:
    t = ndimage.gaussian_filter(rng.standard_normal(shape), sigma, mode="wrap")
    t -= t.mean()
    return t / (t.std() + 1e-12)


def _saturate(d: np.ndarray) -> np.ndarray:
    return 1.0 - np.exp(-d)


def _tissue_densities(rng, shape, scale: float = 1.0):
    """Hematoxylin (nuclei) and eosin (cytoplasm/stroma) density maps in [0, 1]."""
    nuclei = np.zeros(shape)
    for radius, density in ((3.0 * scale, 2.0e-3 / scale**2), (5.5 * scale, 1.0e-3 / scale**2)):
        nuclei += _scatter(rng, shape, density, _smooth_disc(radius))
    chromatin = 0.75 + 0.25 * _texture(rng, shape, 1.0)
    hema = np.clip(_saturate(1.6 * nuclei) * chromatin, 0.0, 1.0)
    stroma = _saturate(np.clip(0.6 + 0.5 * _texture(rng, shape, 2.5 * scale), 0.0, None))
    fibres = 0.5 + 0.5 * np.tanh(2.0 * _texture(rng, shape, 1.2 * scale))
    eosin = np.clip(stroma * (0.5 + 0.5 * fibres) * (1.0 - _saturate(3.0 * nuclei)), 0.0, 1.0)
    return hema, eosin


def _blood_densities(rng, shape):
    # red cell: disc with a pale centre
    ring = _smooth_disc(6.5) - 0.55 * _smooth_disc(2.5, 1.2, half=10)
    cells = _saturate(1.5 * _scatter(rng, shape, 3.0e-3, ring, weight=(0.7, 1.0)))
    wbc = _saturate(2.0 * _scatter(rng, shape, 8.0e-5, _smooth_disc(9.0), weight=(0.8, 1.0)))
    granules = 0.8 + 0.2 * _texture(rng, shape, 1.0)
    hema = np.clip(wbc * granules, 0.0, 1.0)
    eosin = np.clip(cells * (1.0 - wbc), 0.0, 1.0)
    return hema, eosin


def _to_channels(hema, eosin, stains, gamma):
    out = []
    for (a_h, a_e), g in zip(stains, gamma):
        transmission = np.exp(-(a_h * hema + a_e * eosin))
        out.append(BACKGROUND_LEVEL * transmission ** g)
    return out


def _translate_rows(plane: np.ndarray, dy: float) -> np.ndarray:
    """Move content by ``dy`` rows (positive = down) with linear interpolation."""
    if dy == 0:
        return plane.copy()
    return ndimage.shift(plane, (dy, 0.0), order=1, mode="reflect")


def generate_phantom(
    seed: int,
    width: int,
    height: int,
    style: str = "tissue",
    *,
    stains=None,
    gamma=DEFAULT_GAMMA,
    layer_lags=(0.0, 8.0),
) -> GroundTruthPair:
    """Render a stained-specimen phantom as a red/green ground-truth pair.

    Parameters
    ----------
    seed : int
        Sole source of randomness; equal seeds give byte-identical output.
    width, height : int
        Plane size in pixels, both at least 64.
    style : {"blood_smear", "tissue", "two_layer"}
        ``two_layer`` stacks two independent tissue sections whose red/green
        separations are already ``layer_lags`` (pixels) apart, as seen by a
        specimen with two planes at different depths.
    stains : ((float, float), (float, float)), optional
        Per-channel absorbance of the (hematoxylin, eosin) densities, rows
        ordered (red, green). Overrides the style default; use it to make the
        channels more or less alike.
    gamma : (float, float)
        Per-channel tone curve exponent applied to the transmission.
    layer_lags : (float, float)
        Only for ``two_layer``.
    """
    if width < MIN_PHANTOM_SIZE or height < MIN_PHANTOM_SIZE:
        raise DimensionError(f"phantom must be at least {MIN_PHANTOM_SIZE}x{MIN_PHANTOM_SIZE}")
    if style not in PHANTOM_STYLES:
        raise MuxFocusError(f"unknown phantom style {style!r}; expected one of {PHANTOM_STYLES}")
    stains = DEFAULT_STAINS[style] if stains is None else stains
    rng = np.random.default_rng(seed)
    shape = (int(height), int(width))

    if style == "blood_smear":
        hema, eosin = _blood_densities(rng, shape)
        red, green = _to_channels(hema, eosin, stains, gamma)
    elif style == "tissue":
        hema, eosin = _tissue_densities(rng, shape)
        red, green = _to_channels(hema, eosin, stains, gamma)
    else:
        # sum optical densities of the two layers, each pre-split by its own lag
        od_red = np.zeros(shape)
        od_green = np.zeros(shape)
        for lag in layer_lags:
            hema, eosin = _tissue_densities(rng, shape, scale=0.6)
            for channel, od, sign in ((0, od_red, 1.0), (1, od_green, -1.0)):
                a_h, a_e = stains[channel]
                layer = 0.5 * (a_h * hema + a_e * eosin) * gamma[channel]
                od += _translate_rows(layer, sign * lag / 2.0)
        red = BACKGROUND_LEVEL * np.exp(-od_red)
        green = BACKGROUND_LEVEL * np.exp(-od_green)
    return GroundTruthPair(red=np.clip(red, 0.0, 1.0), green=np.clip(green, 0.0, 1.0))


# ---------------------------------------------------------------------------
# Rendering


def _rng(cfg: OpticsConfig, seed):
    return np.random.default_rng(cfg.rng_seed if seed is None else seed)


def _defocus_blur(plane: np.ndarray, sigma: float) -> np.ndarray:
    if sigma <= 0:
        return plane
    return ndimage.gaussian_filter(plane, sigma, mode="reflect")


def _motion_blur(plane: np.ndarray, blur_px) -> np.ndarray:
    n = int(round(blur_px))
    if n <= 1:
        return plane
    return ndimage.uniform_filter1d(plane, n, axis=1, mode="reflect")


def _add_noise(plane: np.ndarray, sigma: float, rng) -> np.ndarray:
    if sigma > 0:
        plane = plane + rng.normal(0.0, sigma, plane.shape)
    return np.clip(plane, 0.0, 1.0)


def channel_separation(defocus: float, cfg: OpticsConfig) -> float:
    """Programmed red-minus-green displacement in pixels for a given defocus."""
    return defocus * shift_per_micron(cfg)


def render_multiplexed(
    obj: GroundTruthPair,
    defocus: float,
    blur_px: float,
    cfg: OpticsConfig,
    *,
    seed=None,
) -> ColorFrame:
    """Simulate one dual-LED exposure.

    Fixed pipeline order: split-translate the channels along y, defocus blur,
    x motion blur, crosstalk mixing, then additive noise and clamping.
    ``seed`` overrides ``cfg.rng_seed`` for the noise draw.
    """
    s = channel_separation(defocus, cfg)
    limit = min(obj.shape) / 4.0
    if abs(s) >= limit:
        raise ShiftExceedsFrameError(
            f"separation {s:.2f} px for defocus {defocus} um exceeds a quarter frame ({limit} px)"
        )
    if blur_px < 0:
        raise MuxFocusError("blur_px must be non-negative")
    sigma = cfg.defocus_blur_coeff * abs(defocus)
    planes = []
    for plane, sign in ((obj.red, 1.0), (obj.green, -1.0)):
        p = _translate_rows(plane, sign * s / 2.0)
        p = _defocus_blur(p, sigma)
        planes.append(_motion_blur(p, blur_px))
    mixed = mix(GroundTruthPair(red=planes[0], green=planes[1]), cfg.crosstalk)
    rng = _rng(cfg, seed)
    return ColorFrame(
        red=_add_noise(mixed.red, cfg.noise_sigma, rng),
        green=_add_noise(mixed.green, cfg.noise_sigma, rng),
    )


def render_brightfield(obj: GroundTruthPair, defocus: float, cfg: OpticsConfig, *, seed=None):
    """All-LED brightfield: shift-free average of both channels, defocus-blurred."""
    plane = _defocus_blur(0.5 * (obj.red + obj.green), cfg.defocus_blur_coeff * abs(defocus))
    return _add_noise(plane, cfg.noise_sigma, _rng(cfg, seed))


def render_zstack(
    obj: GroundTruthPair,
    center: float,
    half_range: float,
    steps: int,
    cfg: OpticsConfig,
    *,
    focus_z: float = 0.0,
    seed=None,
) -> ZStack:
    """Brightfield planes at ``steps`` uniformly spaced stage positions.

    ``focus_z`` is the stage position at which the specimen is sharp, so plane
    ``k`` is rendered at defocus ``z_k - focus_z``.
    """
    if steps < 3 or steps % 2 == 0:
        raise MuxFocusError(f"steps must be odd and >= 3, got {steps}")
    if half_range < 0:
        raise MuxFocusError("half_range must be non-negative")
    z = center + np.linspace(-half_range, half_range, steps)
    base = cfg.rng_seed if seed is None else seed
    planes = [
        render_brightfield(obj, zk - focus_z, cfg, seed=[base, k]) for k, zk in enumerate(z)
    ]
    return ZStack(planes=planes, z_positions=z)
