import numpy as np
import pytest
from hypothesis import HealthCheck, settings

settings.register_profile(
    "pkg", deadline=None, max_examples=60, suppress_health_check=[HealthCheck.too_slow]
)
settings.load_profile("pkg")


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def scenario(seed, n_bits=40_000, width_bits=1.0, period_s=1e-6, interference_rms=2.0, kind="binary_nrz",
             mixing=None):
    """Binary 200 Mb/s SOI + band-matched interference, mixed; returns a dict of the parts."""
    from photobss.mixer import MixingMatrix, mix
    from photobss.pulse_sampler import PulseTrain
    from photobss.signalgen import InterferenceSpec, SoiSpec, draw_symbols, gen_interference, gen_soi

    spec = SoiSpec(kind=kind, n_bits=n_bits, samples_per_bit=32)
    a = mixing or MixingMatrix()
    s = gen_soi(spec, seed)
    n = gen_interference(InterferenceSpec(200e6, interference_rms), s.duration, s.dt, seed)
    x1, x2 = mix(s, n, a)
    p = PulseTrain(period_s, width_bits * spec.bit_period, "rect", 0.5 * spec.bit_period)
    return dict(spec=spec, s=s, n=n, x1=x1, x2=x2, a=a, pulse=p, symbols=draw_symbols(spec, seed))


# acceptance verdicts, printed once at the end of the session
VERDICTS = []


def pytest_terminal_summary(terminalreporter):
    if VERDICTS:
        terminalreporter.section("acceptance criteria")
        for line in sorted(VERDICTS):
            terminalreporter.write_line(line)
