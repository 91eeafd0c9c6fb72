"""Optical pulse sampling: periodic, pulse-weighted averages of a waveform.

The modulator / photodetector / slow-ADC chain is collapsed into one
operation: each pulse returns the pulse-shape-weighted mean of the signal
over its support. The pulse width is therefore the sampling aperture.
"""

from dataclasses import dataclass

import numpy as np

from .errors import InvalidSpecError, OversamplingError, ShapeError

PULSE_SHAPES = ("rect", "gaussian_fwhm")

# Gaussian pulses are truncated at +/- this many FWHM.
GAUSS_SUPPORT_FWHM = 2.0
_FOUR_LN2 = 4.0 * np.log(2.0)
_GATHER_CHUNK = 4_000_000


@dataclass(frozen=True)
class PulseTrain:
    period_s: float
    width_s: float
    shape: str = "rect"
    offset_s: float = 0.0

    def __post_init__(self):
        if self.shape not in PULSE_SHAPES:
            raise InvalidSpecError(f"unknown pulse shape {self.shape!r}; expected one of {PULSE_SHAPES}")
        if not (0 < self.width_s <= self.period_s):
            raise InvalidSpecError(
                f"need 0 < width_s <= period_s, got width={self.width_s}, period={self.period_s}"
            )
        if not (0 <= self.offset_s < self.period_s):
            raise InvalidSpecError(f"offset_s must lie in [0, period_s), got {self.offset_s}")


@dataclass(frozen=True, eq=False)
class SampleStream:
    """Undersampled values at the pulse centers."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=float)
        values = np.asarray(self.values, dtype=float)
        if times.shape != values.shape or times.ndim != 1:
            raise ShapeError("times and values must be 1-D arrays of equal length")
        if times.size > 1 and not np.all(np.diff(times) > 0):
            raise ShapeError("sample times must be strictly increasing")
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "values", values)

    def __len__(self):
        return self.values.size

    def with_values(self, values):
        return SampleStream(self.times, values)


def duty_cycle(p):
    return p.width_s / p.period_s


def pulse_centers(duration, p):
    n = int(np.floor((duration - p.offset_s) / p.period_s)) + 1
    t = p.offset_s + p.period_s * np.arange(max(n, 0))
    return t[t < duration]


def _rect_windows(centers_idx, width_samples, n):
    # sample i holds the value over [i, i+1); the window [c - L/2, c + L/2)
    # covers the L samples starting at ceil(c - L/2). The small slack keeps
    # grid-aligned centers from flipping on round-off.
    length = max(1, int(round(width_samples)))
    lo = np.ceil(centers_idx - 0.5 * length - 1e-9).astype(np.int64)
    keep = (lo >= 0) & (lo + length <= n)
    return lo, length, keep


def sample(x, p):
    """Sample waveform ``x`` with pulse train ``p``.

    A pulse narrower than one grid step degenerates to nearest-sample
    picking. Pulses whose support runs past either end of the waveform
    are dropped.

    Returns
    -------
    SampleStream
        Pulse-center times and normalized pulse-weighted averages.
    """
    if p.period_s < x.dt:
        raise OversamplingError(
            f"pulse period {p.period_s:g} s is shorter than the waveform step {x.dt:g} s"
        )
    n = len(x)
    centers = pulse_centers(x.duration, p)
    cidx = centers / x.dt
    w_samples = p.width_s / x.dt

    if p.shape == "rect" or w_samples <= 1.0:
        lo, length, keep = _rect_windows(cidx, w_samples, n)
        lo = lo[keep]
        values = _window_means(x.samples, lo, length)
    else:
        half = GAUSS_SUPPORT_FWHM * w_samples
        start = np.ceil(cidx - half).astype(np.int64)
        stop = np.floor(cidx + half).astype(np.int64) + 1
        keep = (start >= 0) & (stop <= n)
        start, cidx = start[keep], cidx[keep]
        span = int(np.ceil(2 * half)) + 2
        values = _gauss_means(x.samples, start, cidx, span, w_samples, half)

    if values.size == 0:
        raise InvalidSpecError("waveform does not cover a single full pulse")
    return SampleStream(centers[keep], values)


def _window_means(samples, lo, length):
    out = np.empty(lo.size)
    offs = np.arange(length)
    step = max(1, _GATHER_CHUNK // length)
    for i in range(0, lo.size, step):
        idx = lo[i:i + step, None] + offs
        out[i:i + step] = samples[idx].mean(axis=1)
    return out


def _gauss_means(samples, start, cidx, span, fwhm, half):
    out = np.empty(start.size)
    offs = np.arange(span)
    n = samples.size
    step = max(1, _GATHER_CHUNK // span)
    for i in range(0, start.size, step):
        idx = start[i:i + step, None] + offs
        d = idx - cidx[i:i + step, None]
        w = np.exp(-_FOUR_LN2 * (d / fwhm) ** 2)
        w[(np.abs(d) > half) | (idx >= n)] = 0.0
        vals = samples[np.minimum(idx, n - 1)]
        out[i:i + step] = (w * vals).sum(axis=1) / w.sum(axis=1)
    return out
