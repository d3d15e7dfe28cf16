"""Sub-pixel red/green shift estimation along y.

Two estimators share one convention: a positive ``shift_y`` means the red
channel is displaced by ``+shift_y`` rows relative to the green channel, i.e.
``red[y] ~ green[y - shift_y]``.

Both work on a fixed central window of red rows so that every candidate lag
is scored on the same number of pixels.
"""
from __future__ import annotations

import math
import time
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import find_peaks

from .frames import ColorFrame, DimensionError, MuxFocusError

DEFAULT_BINS = 64
FD_STEP = 0.1
MIN_LINE_STEP = 1.0 / 64
COARSE_STRIDE = 2
DEFAULT_PROMINENCE = 0.15

METHODS = ("xcorr", "mutual_info")


class FlatImageError(MuxFocusError):
    pass


class PeakAtBoundaryError(MuxFocusError):
    pass


class NonFiniteMIError(MuxFocusError):
    pass


class DivergenceError(MuxFocusError):
    pass


@dataclass(frozen=True)
class ShiftEstimate:
    shift_y: float
    score: float
    method: str
    subsample_ratio: int
    elapsed: float
    # accepted MI values (mutual_info only), first entry is the starting point
    trace: tuple = field(default=(), compare=False)

    def to_dict(self) -> dict:
        return {
            "shift_y": self.shift_y,
            "score": self.score,
            "method": self.method,
            "subsample_ratio": self.subsample_ratio,
            "elapsed": self.elapsed,
        }


@dataclass(frozen=True)
class CorrelationProfile:
    lags: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        lags = np.asarray(self.lags)
        values = np.asarray(self.values, dtype=np.float64)
        if lags.shape != values.shape:
            raise MuxFocusError("lags and values differ in length")
        if np.any(np.diff(lags) <= 0):
            raise MuxFocusError("lags must be strictly increasing")
        object.__setattr__(self, "lags", lags)
        object.__setattr__(self, "values", values)


# ---------------------------------------------------------------------------
# helpers


def default_max_lag(height: int) -> float:
    return height / 4.0


def _subsample(frame: ColorFrame, ratio: int):
    if int(ratio) != ratio or ratio < 1:
        raise MuxFocusError(f"subsample_ratio must be a positive integer, got {ratio}")
    ratio = int(ratio)
    red = np.ascontiguousarray(frame.red[::ratio, ::ratio], dtype=np.float64)
    green = np.ascontiguousarray(frame.green[::ratio, ::ratio], dtype=np.float64)
    return red, green


def _check_lag(max_lag, height: int) -> float:
    if max_lag is None:
        return default_max_lag(height)
    if not (0 < max_lag < height / 2.0):
        raise MuxFocusError(f"max_lag must lie in (0, height/2) = (0, {height / 2}), got {max_lag}")
    return float(max_lag)


def parabolic_peak_offset(left: float, mid: float, right: float) -> float:
    denom = left - 2.0 * mid + right
    if denom >= 0:
        return 0.0
    return float(np.clip(0.5 * (left - right) / denom, -0.5, 0.5))


def _argmax_smallest_lag(values: np.ndarray, lags: np.ndarray) -> int:
    best = np.flatnonzero(values == values.max())
    return int(best[np.argmin(np.abs(lags[best]))])


def _ncc_profile(red: np.ndarray, green: np.ndarray, max_lag: int) -> np.ndarray:
    """Pearson correlation of ``red[y]`` and ``green[y - lag]`` for lag in
    ``[-max_lag, max_lag]``, over red rows ``[max_lag, H - max_lag)``."""
    h = red.shape[0]
    win = h - 2 * max_lag
    r = red - red.mean()
    g = green - green.mean()
    rw = r[max_lag:h - max_lag]
    n = rw.size
    r_mean = rw.mean()
    r_var = rw.var()
    # row-pair products; lag L reads the diagonal at offset max_lag - L
    prod = rw @ g.T
    g_row = g.sum(axis=1)
    g2_row = np.einsum("ij,ij->i", g, g)
    c1 = np.concatenate(([0.0], np.cumsum(g_row)))
    c2 = np.concatenate(([0.0], np.cumsum(g2_row)))
    offsets = np.arange(2 * max_lag, -1, -1)  # lag -max_lag ... +max_lag
    rows = np.arange(win)[:, None]
    cross = prod[rows, rows + offsets[None, :]].sum(axis=0)
    g_sum = c1[offsets + win] - c1[offsets]
    g_sq = c2[offsets + win] - c2[offsets]
    g_mean = g_sum / n
    g_var = g_sq / n - g_mean**2
    if r_var <= 1e-18 or np.any(g_var <= 1e-18):
        raise FlatImageError("channel has no intensity variation inside the lag window")
    cov = cross / n - r_mean * g_mean
    return np.clip(cov / np.sqrt(r_var * g_var), -1.0, 1.0)


# ---------------------------------------------------------------------------
# cross-correlation


def xcorr_shift(frame: ColorFrame, subsample_ratio: int = 1, max_lag=None) -> ShiftEstimate:
    """Shift from the peak of the normalized cross-correlation along y.

    Both planes are sampled every ``subsample_ratio`` pixels in x and y; the
    integer peak is refined with a 3-point parabola and scaled back to full
    resolution pixels. Equal peaks resolve to the smallest ``|lag|``.

    Raises
    ------
    FlatImageError
        A channel is constant after subsampling.
    PeakAtBoundaryError
        The peak sits on the edge of the lag window; widen ``max_lag``.
    """
    t0 = time.perf_counter()
    max_lag = _check_lag(max_lag, frame.shape[0])
    red, green = _subsample(frame, subsample_ratio)
    n = int(subsample_ratio)
    lag = max(1, int(round(max_lag / n)))
    if red.shape[0] - 2 * lag < 2:
        raise DimensionError("image too small for this lag window and subsample ratio")
    values = _ncc_profile(red, green, lag)
    lags = np.arange(-lag, lag + 1)
    i = _argmax_smallest_lag(values, lags)
    if i == 0 or i == values.size - 1:
        raise PeakAtBoundaryError(
            f"correlation peak at lag {lags[i] * n} px is on the window edge (max_lag {max_lag})"
        )
    delta = parabolic_peak_offset(values[i - 1], values[i], values[i + 1])
    return ShiftEstimate(
        shift_y=float((lags[i] + delta) * n),
        score=float(values[i]),
        method="xcorr",
        subsample_ratio=n,
        elapsed=time.perf_counter() - t0,
    )


def correlation_profile(frame: ColorFrame, max_lag=None) -> CorrelationProfile:
    """Full-resolution normalized cross-correlation for every integer y-lag."""
    max_lag = _check_lag(max_lag, frame.shape[0])
    lag = max(1, int(max_lag))
    values = _ncc_profile(frame.red.astype(np.float64), frame.green.astype(np.float64), lag)
    return CorrelationProfile(lags=np.arange(-lag, lag + 1), values=values)


def detect_layers(profile: CorrelationProfile, prominence: float = DEFAULT_PROMINENCE):
    """Peaks of a correlation profile, one per specimen layer.

    Negative correlation carries no layer signal, so prominence is measured on
    the profile clipped at zero; a threshold above the global maximum therefore
    returns nothing. Returns ``[(lag, value), ...]`` sorted by lag, with lags
    refined by a 3-point parabola.
    """
    if not (0.0 < prominence < 1.0):
        raise MuxFocusError("prominence must lie in (0, 1)")
    v = profile.values
    idx, _ = find_peaks(np.clip(v, 0.0, None), prominence=prominence)
    step = float(profile.lags[1] - profile.lags[0]) if v.size > 1 else 1.0
    peaks = []
    for i in idx:
        left, mid, right = v[i - 1], v[i], v[i + 1]
        d = parabolic_peak_offset(left, mid, right)
        value = mid - 0.25 * (left - right) * d
        peaks.append((float(profile.lags[i] + d * step), float(value)))
    return sorted(peaks)


# ---------------------------------------------------------------------------
# mutual information


def _bin_coords(x: np.ndarray, bins: int, lo: float, hi: float):
    span = hi - lo
    if span <= 0:
        u = np.zeros(x.shape)
    else:
        u = np.clip((x - lo) * ((bins - 1) / span), 0.0, bins - 1)
    i0 = np.minimum(u.astype(np.intp), bins - 2)
    return i0, u - i0


def joint_histogram(a, b, bins: int = DEFAULT_BINS, a_range=None, b_range=None) -> np.ndarray:
    """Joint intensity distribution with bilinear (partial-volume) bin weighting.

    Each pixel pair spreads unit mass over the four bins surrounding its
    fractional bin coordinates. Intensities are mapped linearly from their
    range (or ``a_range``/``b_range``) onto bin centres ``0 .. bins-1``.
    """
    a = np.asarray(a, dtype=np.float64).ravel()
    b = np.asarray(b, dtype=np.float64).ravel()
    ia, fa = _bin_coords(a, bins, *(a_range or (a.min(), a.max())))
    ib, fb = _bin_coords(b, bins, *(b_range or (b.min(), b.max())))
    base = ia * bins + ib
    idx = np.concatenate((base, base + 1, base + bins, base + bins + 1))
    w = np.concatenate(((1 - fa) * (1 - fb), (1 - fa) * fb, fa * (1 - fb), fa * fb))
    hist = np.bincount(idx, weights=w, minlength=bins * bins).reshape(bins, bins)
    return hist / hist.sum()


def _mi_from_joint(p: np.ndarray) -> float:
    pa = p.sum(axis=1)
    pb = p.sum(axis=0)
    nz = p > 0
    outer = np.outer(pa, pb)[nz]
    mi = float(np.sum(p[nz] * np.log(p[nz] / outer)))
    if not math.isfinite(mi):
        raise NonFiniteMIError("mutual information is not finite")
    return max(mi, 0.0)


def entropy(a, bins: int = DEFAULT_BINS) -> float:
    """Shannon entropy (nats) of the soft-binned intensity marginal."""
    a = np.asarray(a, dtype=np.float64).ravel()
    i0, f = _bin_coords(a, bins, a.min(), a.max())
    counts = np.bincount(np.concatenate((i0, i0 + 1)),
                         weights=np.concatenate((1 - f, f)), minlength=bins)
    p = counts[counts > 0] / counts.sum()
    return float(-np.sum(p * np.log(p)))


def mutual_information(a, b, bins: int = DEFAULT_BINS, *, a_range=None, b_range=None) -> float:
    """Mutual information (nats) of two equally sized planes; always >= 0."""
    a = np.asarray(a)
    b = np.asarray(b)
    if a.shape != b.shape:
        raise DimensionError(f"planes differ in shape: {a.shape} vs {b.shape}")
    if bins < 8:
        raise MuxFocusError("bins must be >= 8")
    return _mi_from_joint(joint_histogram(a, b, bins, a_range, b_range))


class _ShiftedMI:
    """MI between a fixed red window and the green plane displaced by ``t`` rows.

    Fractional displacements use a Fourier phase ramp on the mirror-extended
    green plane. Unlike linear interpolation this does not average away part
    of the noise at half-pixel offsets, which would otherwise bias the MI
    maximum towards half-integer shifts on low-contrast (e.g. motion-blurred)
    frames. Integer displacements are plain row slices.
    """

    def __init__(self, red, green, max_lag: float, bins: int):
        self.h = red.shape[0]
        self.margin = int(math.ceil(max_lag)) + 1
        if self.h - 2 * self.margin < 2:
            raise DimensionError("image too small for this lag window and subsample ratio")
        self.max_lag = max_lag
        self.red = red[self.margin:self.h - self.margin]
        self.green = green
        self.bins = bins
        self.r_range = (red.min(), red.max())
        self.g_range = (green.min(), green.max())
        if self.r_range[0] == self.r_range[1] or self.g_range[0] == self.g_range[1]:
            raise FlatImageError("a channel has no intensity variation")
        self._spectrum = None
        self.evaluations = 0

    def resample(self, t: float) -> np.ndarray:
        """Green rows aligned with the red window after moving green down by ``t``."""
        rows = self.h - 2 * self.margin
        if float(t).is_integer():
            i0 = self.margin - int(t)
            return self.green[i0:i0 + rows]
        n = 2 * self.h
        if self._spectrum is None:
            # even extension keeps the periodic signal continuous at the seam
            self._spectrum = np.fft.rfft(np.concatenate((self.green, self.green[::-1])), axis=0)
            self._freq = np.fft.rfftfreq(n)[:, None]
        moved = np.fft.irfft(self._spectrum * np.exp(-2j * np.pi * self._freq * t), n=n, axis=0)
        return moved[self.margin:self.margin + rows]

    def __call__(self, t: float) -> float:
        if abs(t) > self.max_lag + 1e-9:
            raise DivergenceError(f"shift {t:.3f} left the lag window +-{self.max_lag:.3f}")
        self.evaluations += 1
        return _mi_from_joint(
            joint_histogram(self.red, self.resample(t), self.bins, self.r_range, self.g_range)
        )


def mi_shift(
    frame: ColorFrame,
    subsample_ratio: int = 1,
    iterations: int = 5,
    init=None,
    *,
    max_lag=None,
    bins: int = DEFAULT_BINS,
) -> ShiftEstimate:
    """Shift that maximizes red/green mutual information, by gradient ascent.

    Works at the subsampled resolution. Without ``init`` (full-resolution
    pixels) the start is the best lag of a stride-2 integer sweep over the
    window. Each iteration takes a central finite-difference gradient
    (0.1 px) and steps along its sign, halving the step from 1 px until MI
    does not decrease; if no step down to 1/64 px qualifies the search stops.
    """
    t0 = time.perf_counter()
    if iterations < 1:
        raise MuxFocusError("iterations must be >= 1")
    max_lag = _check_lag(max_lag, frame.shape[0])
    red, green = _subsample(frame, subsample_ratio)
    n = int(subsample_ratio)
    objective = _ShiftedMI(red, green, max_lag / n, bins)
    lag_window = objective.max_lag

    if init is None:
        reach = int(math.floor(lag_window))
        candidates = np.arange(-(reach - reach % COARSE_STRIDE), reach + 1, COARSE_STRIDE)
        scores = np.array([objective(float(c)) for c in candidates])
        t = float(candidates[_argmax_smallest_lag(scores, candidates)])
    else:
        t = float(init) / n
    current = objective(t)
    trace = [current]

    for _ in range(iterations):
        grad = (objective(t + FD_STEP) - objective(t - FD_STEP)) / (2 * FD_STEP)
        if grad == 0:
            break
        direction = 1.0 if grad > 0 else -1.0
        step = 1.0
        while step >= MIN_LINE_STEP:
            cand = t + direction * step
            value = objective(cand)
            if value >= current:
                t, current = cand, value
                trace.append(current)
                break
            step /= 2.0
        else:
            break

    return ShiftEstimate(
        shift_y=t * n,
        score=current,
        method="mutual_info",
        subsample_ratio=n,
        elapsed=time.perf_counter() - t0,
        trace=tuple(trace),
    )


def estimate_shift(frame: ColorFrame, method: str, subsample_ratio: int = 1, **kwargs) -> ShiftEstimate:
    if method == "xcorr":
        return xcorr_shift(frame, subsample_ratio, kwargs.get("max_lag"))
    if method in ("mutual_info", "mi"):
        return mi_shift(frame, subsample_ratio, **kwargs)
    raise MuxFocusError(f"unknown method {method!r}; expected one of {METHODS}")
