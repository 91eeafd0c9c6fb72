"""Scenario configuration: an INI file, one section per pipeline component.

Example::

    [scenario]
    name = fig6_short
    seed = 7

    [sampler]
    period_s = 1e-6
    width_s = 5e-9

Unknown sections or keys are errors. Lists are comma separated; an empty
value means "not set" for optional fields.
"""

import configparser
import dataclasses
import io
from dataclasses import dataclass, field, fields

import numpy as np

from ..bss_core import BssSettings
from ..detector import DetectorParams
from ..errors import ConfigError, InvalidSpecError
from ..mixer import MixingMatrix
from ..pulse_sampler import PulseTrain
from ..signalgen import InterferenceSpec, SoiSpec


@dataclass(frozen=True)
class ScenarioInfo:
    name: str = "scenario"
    seed: int = 0
    description: str = ""


@dataclass(frozen=True)
class DetectorStage:
    enabled: bool = False
    operating_power_dbm: float = -25.0
    inverse_correction: bool = False


@dataclass(frozen=True)
class OutputSettings:
    directory: str = "out"
    report: bool = True
    trial_csv: bool = True
    scatter: bool = True
    moment_curves: bool = True
    eye: bool = True
    eye_traces: int = 200
    waveforms: bool = False


@dataclass(frozen=True)
class TrialSettings:
    n: int = 15


@dataclass(frozen=True)
class SweepSettings:
    start_dbm: float = -45.0
    stop_dbm: float = 0.0
    step_db: float = 1.0
    repeats: int = 1000
    linearity_tol: float = 0.1
    snr_floor_db: float = 1.0
    calibrate: bool = False

    def grid(self):
        n = int(round((self.stop_dbm - self.start_dbm) / self.step_db)) + 1
        if n < 1:
            raise InvalidSpecError("empty detector sweep grid")
        return np.round(self.start_dbm + self.step_db * np.arange(n), 9)


# section name -> (ScenarioConfig attribute, dataclass)
SECTIONS = {
    "scenario": ("scenario", ScenarioInfo),
    "soi": ("soi", SoiSpec),
    "interference": ("interference", InterferenceSpec),
    "mixing": ("mixing", MixingMatrix),
    "sampler": ("sampler", PulseTrain),
    "detector": ("detector", DetectorParams),
    "detector_stage": ("detector_stage", DetectorStage),
    "bss": ("bss", BssSettings),
    "outputs": ("outputs", OutputSettings),
    "trials": ("trials", TrialSettings),
    "sweep": ("sweep", SweepSettings),
}

# Defaults for the pulse train: 1 us period, one-bit (5 ns) aperture centred on the first bit.
_DEFAULT_SAMPLER = PulseTrain(period_s=1e-6, width_s=5e-9, shape="rect", offset_s=2.5e-9)


@dataclass(frozen=True)
class ScenarioConfig:
    scenario: ScenarioInfo = field(default_factory=ScenarioInfo)
    soi: SoiSpec = field(default_factory=SoiSpec)
    interference: InterferenceSpec = field(default_factory=InterferenceSpec)
    mixing: MixingMatrix = field(default_factory=MixingMatrix)
    sampler: PulseTrain = _DEFAULT_SAMPLER
    detector: DetectorParams = field(default_factory=DetectorParams)
    detector_stage: DetectorStage = field(default_factory=DetectorStage)
    bss: BssSettings = field(default_factory=BssSettings)
    outputs: OutputSettings = field(default_factory=OutputSettings)
    trials: TrialSettings = field(default_factory=TrialSettings)
    sweep: SweepSettings = field(default_factory=SweepSettings)

    @property
    def name(self):
        return self.scenario.name

    @property
    def seed(self):
        return self.scenario.seed

    def with_seed(self, seed):
        return dataclasses.replace(self, scenario=dataclasses.replace(self.scenario, seed=int(seed)))

    def replace(self, section, **changes):
        attr = SECTIONS[section][0]
        return dataclasses.replace(self, **{attr: dataclasses.replace(getattr(self, attr), **changes)})

    def to_dict(self):
        out = {}
        for section, (attr, _) in SECTIONS.items():
            obj = getattr(self, attr)
            out[section] = {f.name: _plain(getattr(obj, f.name)) for f in fields(obj)}
        return out

    @classmethod
    def from_dict(cls, data):
        unknown = set(data) - set(SECTIONS)
        if unknown:
            raise ConfigError(f"unknown config section(s): {sorted(unknown)}")
        data = _route_stage_keys(data)
        parts = {}
        for section, values in data.items():
            attr, klass = SECTIONS[section]
            parts[attr] = _build(section, klass, values)
        return cls(**parts)

    def to_ini(self):
        cp = configparser.ConfigParser(interpolation=None)
        for section, values in self.to_dict().items():
            cp[section] = {k: _ini_text(v) for k, v in values.items()}
        buf = io.StringIO()
        cp.write(buf)
        return buf.getvalue()


_STAGE_KEYS = {f.name for f in fields(DetectorStage)}


def _route_stage_keys(data):
    """Accept ``enabled`` / ``inverse_correction`` / ``operating_power_dbm`` under [detector]."""
    det = data.get("detector")
    if not det or not (_STAGE_KEYS & set(det)):
        return data
    data = dict(data)
    stage = dict(data.get("detector_stage", {}))
    for k in _STAGE_KEYS & set(det):
        if k in stage:
            raise ConfigError(f"{k} given in both [detector] and [detector_stage]")
        stage[k] = det[k]
    data["detector"] = {k: v for k, v in det.items() if k not in _STAGE_KEYS}
    data["detector_stage"] = stage
    return data


def _plain(v):
    if isinstance(v, tuple):
        return [float(x) for x in v]
    if isinstance(v, (np.floating,)):
        return float(v)
    return v


def _ini_text(v):
    if v is None:
        return ""
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (list, tuple)):
        return ", ".join(repr(float(x)) for x in v)
    return str(v)


_TRUE = {"1", "true", "yes", "on"}
_FALSE = {"0", "false", "no", "off"}


def _coerce(section, key, raw, default):
    where = f"[{section}] {key}"
    try:
        if isinstance(raw, str):
            text = raw.strip()
            if text == "" and isinstance(default, str):
                return ""
            if text == "" or text.lower() == "none":
                if default is None:
                    return None
                raise ConfigError(f"{where}: value required")
            if isinstance(default, bool):
                low = text.lower()
                if low not in _TRUE | _FALSE:
                    raise ConfigError(f"{where}: expected a boolean, got {text!r}")
                return low in _TRUE
            if isinstance(default, int):
                return _parse_int(where, text)
            if isinstance(default, float):
                return float(text)
            if default is None or isinstance(default, tuple):
                return tuple(float(x) for x in text.replace(";", ",").split(",") if x.strip())
            return text
        # already-typed values (from a JSON echo)
        if raw is None:
            return None
        if isinstance(default, bool):
            if not isinstance(raw, bool):
                raise ConfigError(f"{where}: expected a boolean, got {raw!r}")
            return raw
        if isinstance(default, int):
            if float(raw) != int(raw):
                _bad(where, raw)
            return int(raw)
        if isinstance(default, float):
            return float(raw)
        if isinstance(raw, (list, tuple)):
            return tuple(float(x) for x in raw)
        return raw
    except (TypeError, ValueError) as exc:
        if isinstance(exc, ConfigError):
            raise
        raise ConfigError(f"{where}: cannot parse {raw!r}") from exc


def _parse_int(where, text):
    try:
        return int(text)
    except ValueError:
        value = float(text)  # accepts 2e5
        if not value.is_integer():
            _bad(where, text)
        return int(value)


def _bad(where, text):
    raise ConfigError(f"{where}: expected an integer, got {text!r}")


def _build(section, klass, values):
    defaults = {f.name: _field_default(f) for f in fields(klass)}
    unknown = set(values) - set(defaults)
    if unknown:
        raise ConfigError(f"[{section}]: unknown key(s) {sorted(unknown)}")
    kwargs = {k: _coerce(section, k, v, defaults[k]) for k, v in values.items()}
    try:
        return klass(**kwargs)
    except (InvalidSpecError, ValueError, TypeError) as exc:
        raise ConfigError(f"[{section}]: {exc}") from exc


def _field_default(f):
    if f.default is not dataclasses.MISSING:
        return f.default
    if f.default_factory is not dataclasses.MISSING:
        return f.default_factory()
    # required field without default (PulseTrain period/width)
    return 0.0


def parse_config(text, source="<string>"):
    cp = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
    try:
        cp.read_string(text, source=source)
    except configparser.Error as exc:
        raise ConfigError(f"{source}: {exc}") from exc
    data = {s: dict(cp[s]) for s in cp.sections()}
    if "sampler" in data:
        merged = {f.name: _ini_text(getattr(_DEFAULT_SAMPLER, f.name)) for f in fields(PulseTrain)}
        merged.update(data["sampler"])
        data["sampler"] = merged
    return ScenarioConfig.from_dict(data)


def load_config(path):
    try:
        with open(path) as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc.strerror or exc}") from exc
    return parse_config(text, source=str(path))
