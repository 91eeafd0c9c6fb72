"""Photodetector response to pulsed light: saturation, noise and linear range.

Peak voltage versus average optical power follows a soft-knee curve

    V(P) = slope * P / (1 + (P / P_sp) ** knee) ** (1 / knee)

which is linear well below the pulsed saturation power ``P_sp``, keeps
rising (monotonically) above it and tends to ``slope * P_sp``. Noise on the
peak voltage has an additive floor and a part proportional to the signal:

    sigma(V) = sqrt(noise_sigma_v**2 + (noise_rel * V)**2)
"""

import logging
from dataclasses import dataclass, replace

import numpy as np

from .errors import InvalidSpecError
from .pulse_sampler import SampleStream
from .rng import OP_DETECTOR, OP_DETECTOR_SWEEP, substream

log = logging.getLogger(__name__)

# SNR anchors used by :func:`calibrate_two_point`: (average power dBm, SNR dB).
REFERENCE_SNR_ANCHORS = ((-10.0, 39.0), (-41.0, 7.8))

DEFAULT_GRID_DBM = np.round(np.arange(-60.0, 10.0 + 1e-9, 0.01), 2)


def dbm_to_mw(p_dbm):
    return 10.0 ** (np.asarray(p_dbm, dtype=float) / 10.0)


def mw_to_dbm(p_mw):
    return 10.0 * np.log10(p_mw)


@dataclass(frozen=True)
class DetectorParams:
    """Photodetector + amplifier model.

    Parameters
    ----------
    p_scw_dbm : float
        CW saturation power [dBm].
    t_fwhm_s : float
        FWHM of the detection-system impulse response [s].
    pulse_period_s : float
        Laser pulse period [s].
    slope_v_per_mw : float
        Small-signal peak voltage per mW of average power [V/mW].
    noise_sigma_v : float
        Additive rms noise on the peak voltage [V].
    noise_rel : float
        Signal-proportional rms noise, as a fraction of the peak voltage.
    knee : float
        Sharpness of the saturation knee (larger is sharper).
    """

    p_scw_dbm: float = 16.0
    t_fwhm_s: float = 90e-12
    pulse_period_s: float = 1.0 / 37e6
    slope_v_per_mw: float = 10.0
    noise_sigma_v: float = 3.234710e-4
    noise_rel: float = 1.121287e-2
    knee: float = 2.0

    def __post_init__(self):
        if not self.t_fwhm_s > 0:
            raise InvalidSpecError(f"t_fwhm_s must be positive, got {self.t_fwhm_s}")
        if not self.pulse_period_s > self.t_fwhm_s:
            raise InvalidSpecError("pulse_period_s must exceed t_fwhm_s")
        if not self.slope_v_per_mw > 0:
            raise InvalidSpecError("slope_v_per_mw must be positive")
        if self.noise_sigma_v < 0 or self.noise_rel < 0:
            raise InvalidSpecError("noise terms must be non-negative")
        if not self.knee > 0:
            raise InvalidSpecError("knee must be positive")


def saturation_avg_power_dbm(d):
    """Average power of a pulse train that saturates the detector.

    ``P_sp = P_scw * t_fwhm / t_p``: the detector sees each pulse as an
    impulse-response-long burst, so the peak power it integrates is the
    average power scaled by ``t_p / t_fwhm``.
    """
    return d.p_scw_dbm + 10.0 * np.log10(d.t_fwhm_s / d.pulse_period_s)


def response_v(p_mw, d):
    """Noiseless peak voltage for average power ``p_mw`` (mW)."""
    p = np.asarray(p_mw, dtype=float)
    psp = dbm_to_mw(saturation_avg_power_dbm(d))
    return d.slope_v_per_mw * p / (1.0 + (p / psp) ** d.knee) ** (1.0 / d.knee)


def inverse_response_mw(v, d):
    """Average power that produces noiseless peak voltage ``v``.

    Voltages at or above the response ceiling map to ``inf``; negative
    voltages map to 0.
    """
    psp = dbm_to_mw(saturation_avg_power_dbm(d))
    u = np.clip(np.asarray(v, dtype=float) / d.slope_v_per_mw, 0.0, None)
    frac = 1.0 - (u / psp) ** d.knee
    with np.errstate(divide="ignore", invalid="ignore"):
        p = np.where(frac > 0, u / np.abs(frac) ** (1.0 / d.knee), np.inf)
    return p


def noise_std_v(v, d):
    v = np.asarray(v, dtype=float)
    return np.sqrt(d.noise_sigma_v**2 + (d.noise_rel * v) ** 2)


def respond(avg_power_dbm, d, seed, size=None, trial=0):
    """Noisy peak voltage(s) at the given average power.

    ``size`` draws that many independent repeats; the default returns a
    single value. ``-inf`` dBm yields pure noise.
    """
    v = response_v(dbm_to_mw(avg_power_dbm), d)
    rng = substream(seed, OP_DETECTOR_SWEEP, trial)
    return v + noise_std_v(v, d) * rng.standard_normal(size)


def snr_db(avg_power_dbm, d):
    """Analytic peak-voltage SNR, ``20 log10(V / sigma(V))``."""
    v = response_v(dbm_to_mw(avg_power_dbm), d)
    sigma = noise_std_v(v, d)
    with np.errstate(divide="ignore"):
        return 20.0 * np.log10(v / sigma)


def snr_curve(d, powers_dbm, n_repeats, seed):
    """Monte-Carlo SNR at each power.

    Returns
    -------
    np.ndarray, shape (n, 4)
        Columns: power dBm, mean peak voltage, std of peak voltage, SNR dB.
        Noise-free models report ``inf`` SNR.
    """
    if n_repeats < 100:
        raise InvalidSpecError(f"n_repeats must be >= 100, got {n_repeats}")
    powers = np.asarray(powers_dbm, dtype=float)
    rows = np.empty((powers.size, 4))
    for i, p in enumerate(powers):
        v = respond(p, d, seed, size=n_repeats, trial=i)
        mean, std = v.mean(), v.std(ddof=1)
        if std <= 8 * np.finfo(float).eps * abs(mean):
            std = 0.0  # round-off spread of identical draws
        with np.errstate(divide="ignore"):
            snr = np.inf if std == 0 else 20.0 * np.log10(abs(mean) / std)
        rows[i] = p, mean, std, snr
    return rows


@dataclass(frozen=True)
class LinearRange:
    range_db: float
    lower_dbm: float
    upper_dbm: float
    note: str = ""


def linear_range(d, linearity_tol=0.1, snr_floor_db=1.0, grid_dbm=None):
    """Bounds of the usable power range on ``grid_dbm``.

    Upper bound: largest power whose noiseless response deviates from the
    small-signal line by at most ``linearity_tol`` (relative). Lower bound:
    smallest power whose analytic SNR reaches ``snr_floor_db``.
    """
    if not 0 < linearity_tol < 1:
        raise InvalidSpecError("linearity_tol must be in (0, 1)")
    grid = DEFAULT_GRID_DBM if grid_dbm is None else np.asarray(grid_dbm, dtype=float)
    p = dbm_to_mw(grid)
    deviation = 1.0 - response_v(p, d) / (d.slope_v_per_mw * p)
    linear = grid[deviation <= linearity_tol]
    audible = grid[snr_db(grid, d) >= snr_floor_db]
    if linear.size == 0 or audible.size == 0 or audible.min() > linear.max():
        note = "empty linear range: noise floor is above the saturation knee"
        log.warning(note)
        return LinearRange(0.0, np.nan, np.nan, note)
    lo, hi = float(audible.min()), float(linear.max())
    return LinearRange(hi - lo, lo, hi)


def linear_range_db(d, linearity_tol=0.1, snr_floor_db=1.0, grid_dbm=None):
    return linear_range(d, linearity_tol, snr_floor_db, grid_dbm).range_db


def calibrate_two_point(d, anchors=REFERENCE_SNR_ANCHORS):
    """Choose the two noise terms so the analytic SNR passes through ``anchors``.

    With ``r_i = 10**(-snr_i/10) = (noise_sigma_v / V_i)**2 + noise_rel**2``
    the anchors give two linear equations in ``noise_sigma_v**2`` and
    ``noise_rel**2``. The slope is kept as given; SNR does not depend on it.
    """
    (p_a, s_a), (p_b, s_b) = anchors
    v = response_v(dbm_to_mw([p_a, p_b]), d)
    r = 10.0 ** (-np.array([s_a, s_b]) / 10.0)
    m = np.column_stack([1.0 / v**2, np.ones(2)])
    sigma2, rel2 = np.linalg.solve(m, r)
    if sigma2 < 0 or rel2 < 0:
        raise InvalidSpecError(
            f"anchors {anchors} need negative noise power (sigma^2={sigma2:.3g}, rel^2={rel2:.3g})"
        )
    return replace(d, noise_sigma_v=float(np.sqrt(sigma2)), noise_rel=float(np.sqrt(rel2)))


def apply_detector(s, input_avg_power_dbm, d, seed, channel=0, inverse_correction=False):
    """Route normalized sample values through the detector.

    Each value ``v`` in [-1, 1] intensity-modulates the light around the
    operating point, ``P = P_op * (1 + v)``; the output is the AC-coupled
    peak voltage ``V(P) - V(P_op)`` plus noise. Noise is drawn from the
    ``(seed, channel)`` substream, one normal deviate per sample index.

    With ``inverse_correction`` the noisy voltage is mapped back through
    the inverse response and re-expressed on the small-signal scale
    ``slope * (P - P_op)``.

    Returns
    -------
    (SampleStream, int)
        Detected stream and the number of inputs clipped into [-1, 1].
    """
    values = np.asarray(s.values, dtype=float)
    n_clipped = int(np.count_nonzero(np.abs(values) > 1.0))
    if n_clipped:
        log.warning("apply_detector: %d sample(s) outside [-1, 1] clipped", n_clipped)
        values = np.clip(values, -1.0, 1.0)
    p_op = float(dbm_to_mw(input_avg_power_dbm))
    v_op = response_v(p_op, d)
    v = response_v(p_op * (1.0 + values), d)
    rng = substream(seed, OP_DETECTOR, channel)
    v_noisy = v + noise_std_v(v, d) * rng.standard_normal(values.size)
    if inverse_correction:
        p_hat = inverse_response_mw(v_noisy, d)
        psp = dbm_to_mw(saturation_avg_power_dbm(d))
        p_hat = np.minimum(p_hat, 1e3 * psp)
        out = d.slope_v_per_mw * (p_hat - p_op)
    else:
        out = v_noisy - v_op
    return SampleStream(s.times, out), n_clipped


def detector_stage(d, input_avg_power_dbm, seed, inverse_correction=False):
    """Build the ``separate(detector=...)`` hook for a pair of sample streams.

    Both streams are scaled by one common factor into [-1, 1] so their
    relative amplitudes survive, then detected with independent noise.
    """

    def stage(s1, s2):
        scale = max(np.max(np.abs(s1.values)), np.max(np.abs(s2.values))) or 1.0
        out, warnings = [], []
        for ch, s in enumerate((s1, s2), start=1):
            det, clipped = apply_detector(
                s.with_values(s.values / scale), input_avg_power_dbm, d, seed, ch, inverse_correction
            )
            if clipped:
                warnings.append(f"detector channel {ch}: {clipped} samples clipped")
            out.append(det)
        return out[0], out[1], warnings

    return stage
