"""Signal-of-interest and interference synthesis on a uniform grid."""

from dataclasses import dataclass, field

import numpy as np
from scipy import signal as sps

from .errors import InvalidSpecError
from .rng import OP_INTERFERENCE, OP_SOI, substream

SOI_KINDS = ("binary_nrz", "qam16_real")

# Real projection of 16-QAM: uniform 4-PAM with unit mean square.
PAM4_LEVELS = np.array([-3.0, -1.0, 1.0, 3.0]) / np.sqrt(5.0)


@dataclass(frozen=True, eq=False)
class Waveform:
    """Uniformly sampled real signal.

    Parameters
    ----------
    dt : float
        Sample period in seconds.
    samples : np.ndarray
        Real amplitudes, arbitrary units.
    label : str
        Free text tag carried through the pipeline.
    """

    dt: float
    samples: np.ndarray
    label: str = ""

    def __post_init__(self):
        samples = np.asarray(self.samples, dtype=float)
        if samples.ndim != 1 or samples.size == 0:
            raise InvalidSpecError("waveform samples must be a non-empty 1-D array")
        if not (np.isfinite(self.dt) and self.dt > 0):
            raise InvalidSpecError(f"dt must be positive, got {self.dt}")
        if not np.all(np.isfinite(samples)):
            raise InvalidSpecError("waveform samples must be finite")
        object.__setattr__(self, "samples", samples)

    def __len__(self):
        return self.samples.size

    @property
    def duration(self):
        return self.dt * self.samples.size

    @property
    def t(self):
        return np.arange(self.samples.size) * self.dt

    def with_samples(self, samples, label=None):
        return Waveform(self.dt, samples, self.label if label is None else label)


@dataclass(frozen=True)
class SoiSpec:
    kind: str = "binary_nrz"
    bit_rate: float = 200e6
    n_bits: int = 200_000
    samples_per_bit: int = 32
    amplitude: float = 1.0

    def __post_init__(self):
        if self.kind not in SOI_KINDS:
            raise InvalidSpecError(f"unknown SOI kind {self.kind!r}; expected one of {SOI_KINDS}")
        if not self.bit_rate > 0:
            raise InvalidSpecError(f"bit_rate must be positive, got {self.bit_rate}")
        if self.n_bits < 1 or self.samples_per_bit < 1:
            raise InvalidSpecError("n_bits and samples_per_bit must be >= 1")
        if not np.isfinite(self.amplitude):
            raise InvalidSpecError("amplitude must be finite")

    @property
    def dt(self):
        return 1.0 / (self.bit_rate * self.samples_per_bit)

    @property
    def bit_period(self):
        return 1.0 / self.bit_rate

    @property
    def levels(self):
        if self.kind == "binary_nrz":
            return np.array([-1.0, 1.0]) * self.amplitude
        return PAM4_LEVELS * self.amplitude


@dataclass(frozen=True)
class InterferenceSpec:
    """Band-limited Gaussian interference.

    ``transition`` is the FIR transition band as a fraction of ``bandwidth``
    and ``stopband_db`` the Kaiser-design stopband attenuation; together
    they fix the filter order.
    """

    bandwidth: float = 200e6
    rms: float = 1.0
    transition: float = 0.2
    stopband_db: float = 40.0

    def __post_init__(self):
        if not self.bandwidth > 0:
            raise InvalidSpecError(f"bandwidth must be positive, got {self.bandwidth}")
        if not self.rms >= 0:
            raise InvalidSpecError(f"rms must be non-negative, got {self.rms}")
        if not (0 < self.transition < 1) or not self.stopband_db > 0:
            raise InvalidSpecError("transition must be in (0, 1) and stopband_db positive")


def draw_symbols(spec, seed):
    """Symbol sequence of the SOI; uniform over the constellation."""
    rng = substream(seed, OP_SOI)
    idx = rng.integers(0, spec.levels.size, size=spec.n_bits)
    return spec.levels[idx]


def gen_soi(spec, seed):
    """NRZ waveform holding each symbol for ``samples_per_bit`` samples."""
    symbols = draw_symbols(spec, seed)
    return Waveform(spec.dt, np.repeat(symbols, spec.samples_per_bit), label=f"soi:{spec.kind}")


def lowpass_taps(spec, dt):
    """FIR taps used for the interference, or ``None`` when no filtering is needed.

    Windowed-sinc (Kaiser) design: flat to ``bandwidth``, stopband from
    ``bandwidth * (1 + transition)``.
    """
    nyquist = 0.5 / dt
    if spec.bandwidth > nyquist * (1 + 1e-12):
        raise InvalidSpecError(
            f"interference bandwidth {spec.bandwidth:g} Hz exceeds grid Nyquist {nyquist:g} Hz"
        )
    cutoff = spec.bandwidth * (1 + 0.5 * spec.transition)
    if cutoff >= nyquist:
        return None
    width = spec.transition * spec.bandwidth / nyquist
    numtaps, beta = sps.kaiserord(spec.stopband_db, width)
    numtaps |= 1  # odd length: integer group delay
    return sps.firwin(numtaps, cutoff, window=("kaiser", beta), fs=1.0 / dt)


def gen_interference(spec, duration, dt, seed):
    """Zero-mean Gaussian noise low-passed to ``spec.bandwidth``.

    The output is rescaled after filtering so its empirical rms equals
    ``spec.rms`` exactly. Only the fully-settled part of the convolution
    is kept, so there is no filter warm-up transient.
    """
    if not dt > 0:
        raise InvalidSpecError(f"dt must be positive, got {dt}")
    n = int(round(duration / dt))
    if n < 1:
        raise InvalidSpecError("duration shorter than one sample")
    taps = lowpass_taps(spec, dt)
    if spec.rms == 0:
        return Waveform(dt, np.zeros(n), label="interference")
    rng = substream(seed, OP_INTERFERENCE)
    if taps is None:
        x = rng.standard_normal(n)
    else:
        white = rng.standard_normal(n + taps.size - 1)
        x = sps.oaconvolve(white, taps, mode="valid")
    x *= spec.rms / np.sqrt(np.mean(x * x))
    return Waveform(dt, x, label="interference")
