"""Separation-quality metrics and their CSV exports."""

import csv
import logging
from dataclasses import asdict, dataclass

import numpy as np

from .errors import ArtifactIOError, DegenerateFitError, InvalidSpecError
from .mixer import check_same_grid

log = logging.getLogger(__name__)

PHI0_PERIOD_DEG = 90.0

TRIAL_FIELDS = ("seed", "phi0_deg", "theta0_deg", "ber", "eye_opening", "whiteness")


@dataclass(frozen=True)
class TrialReport:
    seed: int
    phi0_deg: float
    theta0_deg: float
    ber: float
    snr_db: float
    eye_opening: float
    whiteness_residual: float
    soi_channel: int
    soi_kurtosis: float
    other_kurtosis: float

    def __post_init__(self):
        # nan: no bit decisions for multilevel signals
        if not (np.isnan(self.ber) or 0.0 <= self.ber <= 1.0):
            raise InvalidSpecError(f"ber out of [0, 1]: {self.ber}")

    def to_dict(self):
        return asdict(self)


def fmt(x):
    """Shortest round-tripping text for a number (stable across runs)."""
    if isinstance(x, (bool, np.bool_)):
        return str(int(x))
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    x = float(x)
    if np.isnan(x):
        return "nan"
    if np.isinf(x):
        return "inf" if x > 0 else "-inf"
    return repr(x)


def write_csv(path, header, rows):
    try:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for row in rows:
                w.writerow([v if isinstance(v, str) else fmt(v) for v in row])
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from exc
    return path


# --------------------------------------------------------------------------
# recovered-signal quality


def alignment_gain(recovered, reference):
    """Least-squares scalar ``g`` minimizing ``|g * recovered - reference|^2``."""
    check_same_grid(recovered, reference)
    r = recovered.samples
    energy = float(r @ r)
    if energy == 0:
        raise DegenerateFitError("cannot align a zero-energy recovered signal")
    return float(r @ reference.samples) / energy


def align(recovered, reference):
    """Rescale ``recovered`` (sign included) onto ``reference``."""
    g = alignment_gain(recovered, reference)
    return recovered.with_samples(g * recovered.samples, recovered.label)


def _as_pm1(bits):
    bits = np.asarray(bits, dtype=float)
    if bits.size and bits.min() >= 0:
        return np.where(bits > 0.5, 1.0, -1.0)
    return np.sign(bits)


def _bit_windows(n_samples, n_bits, spb, lo_frac, hi_frac):
    k = np.arange(n_bits)
    lo = np.round((k + lo_frac) * spb).astype(np.int64)
    hi = np.maximum(np.round((k + hi_frac) * spb).astype(np.int64), lo + 1)
    if hi[-1] > n_samples:
        raise InvalidSpecError(f"waveform of {n_samples} samples does not cover {n_bits} bits")
    return lo, hi


def samples_per_bit(w, bit_period):
    spb = bit_period / w.dt
    if abs(spb - round(spb)) > 1e-9 * spb:
        log.warning("bit period %.6g s is not a whole number of %.6g s samples; "
                    "using nearest samples", bit_period, w.dt)
        return spb
    return float(round(spb))


def mid_bit_means(w, n_bits, bit_period):
    """Average over the central half of every bit window."""
    spb = samples_per_bit(w, bit_period)
    lo, hi = _bit_windows(len(w), n_bits, spb, 0.25, 0.75)
    cs = np.concatenate([[0.0], np.cumsum(w.samples)])
    return (cs[hi] - cs[lo]) / (hi - lo)


def ber(aligned, reference_bits, bit_period):
    """Bit error rate of sign decisions on mid-bit averages.

    ``reference_bits`` may be given as symbols (sign is used) or as 0/1.
    """
    ref = _as_pm1(reference_bits)
    if ref.size == 0:
        raise InvalidSpecError("no reference bits")
    decisions = np.sign(mid_bit_means(aligned, ref.size, bit_period))
    return float(np.count_nonzero(decisions != ref)) / ref.size


def snr_db(aligned, reference):
    err = aligned.samples - reference.samples
    p_err = float(np.mean(err * err))
    p_ref = float(np.mean(reference.samples**2))
    return np.inf if p_err == 0 else 10.0 * np.log10(p_ref / p_err)


@dataclass(frozen=True)
class EyeData:
    t_frac: np.ndarray
    traces: np.ndarray
    opening: float


def eye_opening(w, bit_period, reference_bits=None):
    """``(min high rail - max low rail) / rail separation`` at mid-bit.

    Bits are assigned to rails by ``reference_bits`` when given, otherwise
    by the sign of the mid-bit sample (which can never report a closed eye).
    """
    spb = samples_per_bit(w, bit_period)
    n_bits = int(len(w) // spb) if reference_bits is None else len(reference_bits)
    idx = np.round((np.arange(n_bits) + 0.5) * spb).astype(np.int64)
    if idx.size == 0 or idx[-1] >= len(w):
        raise InvalidSpecError("waveform too short for the requested bits")
    mid = w.samples[idx]
    high = (_as_pm1(reference_bits) > 0) if reference_bits is not None else mid > 0
    if high.all() or not high.any():
        return float("nan")
    hi_rail, lo_rail = mid[high], mid[~high]
    sep = abs(hi_rail.mean() - lo_rail.mean())
    gap = hi_rail.min() - lo_rail.max()
    if sep == 0:
        return float("-inf") if gap <= 0 else float("inf")
    return float(gap / sep)


def eye_data(w, bit_period, reference_bits=None, max_traces=None):
    """Fold ``w`` into consecutive two-bit traces and measure the eye opening."""
    spb = samples_per_bit(w, bit_period)
    n_bits = int(len(w) // spb)
    if n_bits < 10:
        raise InvalidSpecError(f"eye diagram needs >= 10 bits, got {n_bits}")
    seg = int(round(2 * spb))
    n_traces = n_bits // 2 if max_traces is None else min(n_bits // 2, max_traces)
    starts = np.round(np.arange(n_traces) * 2 * spb).astype(np.int64)
    traces = w.samples[starts[:, None] + np.arange(seg)]
    t_frac = np.arange(seg) / spb
    return EyeData(t_frac, traces, eye_opening(w, bit_period, reference_bits))


# --------------------------------------------------------------------------
# trial spread


def circular_range(values, period):
    """Length of the shortest arc (mod ``period``) containing all values."""
    a = np.sort(np.mod(np.asarray(values, dtype=float), period))
    if a.size < 2:
        return 0.0
    gaps = np.diff(np.concatenate([a, [a[0] + period]]))
    return float(period - gaps.max())


def phi0_spread(trials, period_deg=PHI0_PERIOD_DEG):
    """Circular range of the trials' ICA angles in degrees (mod 90 by default)."""
    phis = [t.phi0_deg if isinstance(t, TrialReport) else float(t) for t in trials]
    if len(phis) < 2:
        raise InvalidSpecError("phi0 spread needs at least 2 trials")
    return circular_range(phis, period_deg)


# --------------------------------------------------------------------------
# CSV exports


def export_scatter(x1, x2, path):
    """Pulse-sampled mixtures as ``t_s,x1,x2``."""
    if len(x1) != len(x2):
        raise InvalidSpecError("scatter export needs streams of equal length")
    return write_csv(path, ("t_s", "x1", "x2"), zip(x1.times, x1.values, x2.values))


def export_moment_curve(fit, angles, measured, path, span_deg=180):
    """Measured moments plus the fitted curve on a 1 degree grid.

    Rows are the union of the integer-degree grid over ``[0, span_deg)`` and
    the measured angles; ``measured`` is left blank on grid-only rows.
    """
    angles_deg = np.rad2deg(np.asarray(angles, dtype=float))
    measured = np.asarray(measured, dtype=float)
    meas = {round(float(a), 9): float(m) for a, m in zip(angles_deg, measured)}
    grid = {float(a) for a in range(int(span_deg))}
    rows = []
    for a in sorted(grid | set(meas)):
        m = meas.get(round(a, 9))
        rows.append((a, "" if m is None else fmt(m), float(fit(np.deg2rad(a)))))
    return write_csv(path, ("angle_deg", "measured", "fitted"), rows)


def export_eye(eye, path):
    rows = ((t, i, v) for i, trace in enumerate(eye.traces) for t, v in zip(eye.t_frac, trace))
    return write_csv(path, ("t_frac", "trace_id", "value"), rows)


def export_trials(trials, path):
    rows = ((t.seed, t.phi0_deg, t.theta0_deg, t.ber, t.eye_opening, t.whiteness_residual) for t in trials)
    return write_csv(path, TRIAL_FIELDS, rows)
