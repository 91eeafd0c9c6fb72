"""Blind separation of a signal from interference using pulse-sampled moments."""

__version__ = "0.1.0"

from .bss_core import BssSettings, Separation, apply_demix, separate
from .detector import DetectorParams
from .errors import (
    ArtifactIOError,
    ConfigError,
    InvalidSpecError,
    NumericalError,
    PhotoBSSError,
    StageError,
)
from .mixer import MixingMatrix, mix
from .pulse_sampler import PulseTrain, SampleStream
from .pulse_sampler import sample as pulse_sample
from .signalgen import InterferenceSpec, SoiSpec, Waveform, gen_interference, gen_soi

__all__ = [
    "ArtifactIOError", "BssSettings", "ConfigError", "DetectorParams", "InterferenceSpec",
    "InvalidSpecError", "MixingMatrix", "NumericalError", "PhotoBSSError", "PulseTrain",
    "SampleStream", "Separation", "SoiSpec", "StageError", "Waveform", "apply_demix",
    "gen_interference", "gen_soi", "mix", "pulse_sample", "separate",
]
