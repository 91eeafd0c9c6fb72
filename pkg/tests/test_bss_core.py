import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from conftest import scenario
from photobss.bss_core import (
    COMPOSITION_NOTE,
    BssSettings,
    Demixer,
    SecondMomentFit,
    Whitener,
    apply_demix,
    compose_demixer,
    fit_fourth,
    fit_second,
    fourth_moment,
    ica_rotation,
    kurtosis,
    moment_curve,
    pca_whitener,
    second_moment,
    separate,
    weighted_mix,
    whiteness_residual,
)
from photobss.errors import (
    DegenerateFitError,
    EmptyInputError,
    IllPosedError,
    IsotropicMixtureError,
    NoFourthHarmonicError,
    ShapeError,
    StageError,
)
from photobss.mixer import MixingMatrix, mix
from photobss.pulse_sampler import PulseTrain, SampleStream
from photobss.signalgen import Waveform

EPS = np.finfo(float).eps


def stream(values, times=None):
    values = np.asarray(values, dtype=float)
    return SampleStream(np.arange(values.size) if times is None else times, values)


# --------------------------------------------------------------------------
# independent oracles


def covariance_oracle(c):
    """Closed form of the principal axis of a 2x2 covariance, cross-checked against eigh."""
    q1 = (c[0, 0] + c[1, 1]) / 2
    q2 = np.hypot((c[0, 0] - c[1, 1]) / 2, c[0, 1])
    theta0 = np.mod(0.5 * np.arctan2(2 * c[0, 1], c[0, 0] - c[1, 1]), np.pi)
    lam, vec = np.linalg.eigh(c)
    assert np.allclose([q1 - q2, q1 + q2], lam, rtol=1e-12, atol=1e-14 * lam.max())
    v = vec[:, 1]
    if q2 > 1e-9 * q1:
        assert abs(abs(v @ [np.cos(theta0), np.sin(theta0)]) - 1) < 1e-9
    return q1, q2, theta0


def exact_second_moments(c, angles):
    w = np.stack([np.cos(angles), np.sin(angles)])
    return np.einsum("ik,ij,jk->k", w, c, w)


def fourth_model(p1, p2, p3, phi0, angles):
    d = np.asarray(angles) - phi0
    return p1 + p2 * np.cos(2 * d) + p3 * np.cos(4 * d)


def physical_fourth(k_s, k_n, c2):
    """Curve parameters of whitened independent sources with kurtoses k_s, k_n and variance c2."""
    return c2**2 * (3 * (k_s + k_n) + 6) / 8, c2**2 * (k_s - k_n) / 2, c2**2 * (k_s + k_n - 6) / 8


def canonical(p2, phi0):
    """(p2, phi0) folded so phi0 lies in [0, pi/2); a pi/2 shift flips the sign of p2."""
    k = np.floor(phi0 / (np.pi / 2))
    return p2 * (-1) ** int(k), phi0 - k * np.pi / 2


def leakage_db(g):
    g = np.abs(g)
    if g[0, 0] * g[1, 1] < g[0, 1] * g[1, 0]:
        g = g[::-1]
    return 20 * np.log10(max(g[0, 1] / g[0, 0], g[1, 0] / g[1, 1]))


psd = st.tuples(st.floats(0.01, 10), st.floats(0.01, 10), st.floats(-0.99, 0.99)).map(
    lambda t: np.array([[t[0], t[2] * np.sqrt(t[0] * t[1])], [t[2] * np.sqrt(t[0] * t[1]), t[1]]])
)


# --------------------------------------------------------------------------
# weighted mixes and moments


def test_weighted_mix_examples():
    x1, x2 = stream([1.0, -2.0, 3.0]), stream([4.0, 5.0, -6.0])
    np.testing.assert_array_equal(weighted_mix(x1, x2, 0.0).values, x1.values)
    np.testing.assert_allclose(weighted_mix(x1, x2, np.pi / 2).values, x2.values, atol=1e-15)
    np.testing.assert_allclose(weighted_mix(x1, x1, np.pi / 4).values, np.sqrt(2) * x1.values, rtol=1e-15)


def test_weighted_mix_grid_mismatch():
    with pytest.raises(ShapeError):
        weighted_mix(stream([1.0, 2.0]), stream([1.0, 2.0], times=np.array([0.0, 2.0])), 0.3)


def test_moment_examples():
    assert second_moment(stream([1, -1, -1, 1])) == 1.0
    assert second_moment(stream([0, 2])) == 2.0
    assert fourth_moment(stream([1, -1, 1])) == 1.0
    with pytest.raises(EmptyInputError):
        second_moment(stream([1.0]))
    with pytest.raises(EmptyInputError):
        fourth_moment(stream([]))


def test_gaussian_moments_within_standard_error():
    n = 400_000
    x = np.random.default_rng(5).standard_normal(n)
    assert abs(second_moment(x) - 1) < 3 * np.sqrt(2 / n)
    assert abs(fourth_moment(x) - 3) < 3 * np.sqrt(96 / n)


def test_pam4_fourth_moment():
    levels = np.array([-3, -1, 1, 3]) / np.sqrt(5)
    x = np.random.default_rng(1).choice(levels, 400_000)
    se = np.std(x**4) / np.sqrt(x.size)
    assert abs(fourth_moment(x) - 41 / 25) < 4 * se
    assert kurtosis(x) == pytest.approx(1.64, abs=5e-3)


# --------------------------------------------------------------------------
# second-moment fit


@given(c=psd)
def test_fit_second_covariance_oracle(c):
    q1, q2, theta0 = covariance_oracle(c)
    assume(q2 > 1e-6 * q1)
    angles = np.deg2rad([0.0, 60.0, 120.0])
    f = fit_second(angles, exact_second_moments(c, angles))
    assert f.q1 == pytest.approx(q1, rel=1e-9)
    assert f.q2 == pytest.approx(q2, rel=1e-9)
    d = abs(f.theta0 - theta0)
    assert min(d, np.pi - d) < 1e-9 / min(1.0, q2 / q1)
    assert 0 <= f.theta0 < np.pi


@given(c=psd, n=st.integers(3, 12))
def test_three_angles_agree_with_overdetermined(c, n):
    q1, q2, _ = covariance_oracle(c)
    assume(q2 > 1e-6 * q1)
    few = np.deg2rad([0.0, 60.0, 120.0])
    many = np.arange(n) * np.pi / n + 0.1
    a = fit_second(few, exact_second_moments(c, few))
    b = fit_second(many, exact_second_moments(c, many))
    assert a.q1 == pytest.approx(b.q1, rel=1e-9) and a.q2 == pytest.approx(b.q2, rel=1e-9)
    assert np.cos(2 * (a.theta0 - b.theta0)) == pytest.approx(1.0, abs=1e-9)


def test_fit_second_isotropic():
    angles = np.deg2rad([0, 60, 120])
    with pytest.raises(IsotropicMixtureError):
        fit_second(angles, exact_second_moments(np.eye(2), angles))


def test_fit_second_aliased_angles():
    with pytest.raises(IllPosedError):
        fit_second(np.deg2rad([0, 180, 360]), [1.0, 1.0, 1.0])
    with pytest.raises(IllPosedError):
        fit_second([0.0, 1.0], [1.0, 2.0])


def test_fit_second_degenerate():
    angles = np.deg2rad([0, 60, 120])
    m = 0.5 + 1.0 * np.cos(2 * angles)  # q1 < q2: negative principal power
    with pytest.raises(DegenerateFitError):
        fit_second(angles, m)


def test_fig5_anchor_x1_moment_below_x2():
    sc = scenario(3, n_bits=20_000)
    sep = separate(sc["x1"], sc["x2"], sc["pulse"], BssSettings(theta_angles_deg=(0, 90, 30, 60, 120, 150)))
    m0, m90 = sep.theta_moments[0], sep.theta_moments[1]
    assert m0 < 0.9 * m90


# --------------------------------------------------------------------------
# whitening


def test_whitener_examples():
    w = pca_whitener(SecondMomentFit(2.5, 1.5, 0.0))
    np.testing.assert_allclose(w.matrix, np.diag([1.0, 2.0]), atol=1e-15)
    assert w.sigma_ratio == 2.0
    w = pca_whitener(SecondMomentFit(1.0, 1e-12, 0.7))
    np.testing.assert_allclose(w.matrix, np.eye(2), atol=1e-11)
    with pytest.raises(DegenerateFitError):
        pca_whitener(SecondMomentFit(1.0, 1.0, 0.3))


@given(c=psd)
def test_whitener_whitens_exact_covariance(c):
    q1, q2, _ = covariance_oracle(c)
    assume(q2 > 1e-6 * q1 and q1 - q2 > 1e-6 * q1)
    angles = np.deg2rad([0.0, 60.0, 120.0])
    w = pca_whitener(fit_second(angles, exact_second_moments(c, angles)))
    white = w.matrix @ c @ w.matrix.T
    assert abs(white[0, 1]) < 1e-7 * white[0, 0]
    assert white[0, 0] == pytest.approx(white[1, 1], rel=1e-7)
    assert w.sigma_ratio >= 1


def test_whiteness_on_scenario():
    sc = scenario(0, n_bits=200_000, period_s=100e-9)
    sep = separate(sc["x1"], sc["x2"], sc["pulse"])
    assert len(sep.samples[0]) >= 10_000
    assert sep.whiteness_residual < 0.02
    assert whiteness_residual(*sep.whitened) == sep.whiteness_residual


# --------------------------------------------------------------------------
# fourth-moment fit


ANGLES8 = np.arange(8) * np.pi / 8


@pytest.mark.parametrize("method", ["basis5", "shared_phase4"])
def test_fit_fourth_forward_inversion(method):
    truth = (3.0, 0.5, 0.3, np.deg2rad(20.0))
    f = fit_fourth(ANGLES8, fourth_model(*truth, ANGLES8), method=method)
    np.testing.assert_allclose([f.p1, f.p2, f.p3, f.phi0], truth, rtol=0, atol=1e-9)
    assert f.phase_consistency == pytest.approx(1.0, abs=1e-9)


def test_shared_phase_four_angles_minimum_input():
    truth = (3.0, 0.5, 0.3, np.deg2rad(20.0))
    angles = np.deg2rad([10.0, 40.0, 75.0, 130.0])
    c2 = (truth[0] - 3 * truth[2]) / 3  # common variance implied by the curve
    f = fit_fourth(angles, fourth_model(*truth, angles), method="shared_phase4", second_moment=np.sqrt(c2) ** 2)
    np.testing.assert_allclose([f.p1, f.p2, f.p3, f.phi0], truth, rtol=0, atol=1e-9)
    # without the variance hint the four-angle model is not identifiable; the fit says so
    g = fit_fourth(angles, fourth_model(*truth, angles), method="shared_phase4")
    assert g.n_candidates > 1


@given(
    k_s=st.floats(1.0, 2.5), k_n=st.floats(2.6, 6.0), c2=st.floats(0.2, 5.0),
    phi0=st.floats(1e-6, np.pi / 2 - 1e-6), offset=st.floats(0, np.pi / 4), spread=st.floats(0.3, 0.7),
)
def test_fourth_fit_angle_count_sufficiency(k_s, k_n, c2, phi0, offset, spread):
    p1, p2, p3 = physical_fourth(k_s, k_n, c2)
    assume(abs(p3) > 1e-3 * p1 and abs(p2) > 1e-3 * p1)
    many = fit_fourth(ANGLES8, fourth_model(p1, p2, p3, phi0, ANGLES8))
    four = offset + spread * np.arange(4) * np.pi / 4 * 1.6
    f4 = fit_fourth(four, fourth_model(p1, p2, p3, phi0, four), "shared_phase4", second_moment=c2)
    want_p2, want_phi0 = canonical(p2, phi0)
    dense = np.linspace(0, np.pi, 181)
    for f in (many, f4):
        np.testing.assert_allclose(f(dense), fourth_model(p1, p2, p3, phi0, dense), rtol=0, atol=1e-9 * p1)
        np.testing.assert_allclose([f.p1, f.p2, f.p3], [p1, want_p2, p3], rtol=1e-7, atol=1e-9 * p1)
        assert np.cos(4 * (f.phi0 - want_phi0)) == pytest.approx(1.0, abs=1e-9)
        assert np.cos(2 * (f.phi0 - want_phi0)) > 0


def test_fourth_fit_p2_zero_picks_curve_minimum():
    # equal kurtoses: no 2nd harmonic; the candidate where the curve is smallest wins
    p1, p2, p3 = physical_fourth(1.0, 1.0, 1.0)
    f = fit_fourth(ANGLES8, fourth_model(p1, p2, p3, 0.3, ANGLES8))
    assert f.p3 < 0
    assert f(f.phi0) <= min(f(np.linspace(0, np.pi, 1001))) + 1e-12


def test_fourth_fit_gaussian_sources_have_no_fourth_harmonic():
    p1, p2, p3 = physical_fourth(3.0, 3.0, 1.0)
    for method in ("basis5", "shared_phase4"):
        with pytest.raises(NoFourthHarmonicError):
            fit_fourth(ANGLES8, fourth_model(p1, p2, p3, 0.2, ANGLES8), method)
    # sampled Gaussians: 4th harmonic only at the estimation-noise level
    r = np.random.default_rng(2)
    g1, g2 = stream(r.standard_normal(200_000)), stream(r.standard_normal(200_000))
    f = fit_fourth(ANGLES8, moment_curve(g1, g2, ANGLES8, 4))
    assert abs(f.p3) < 0.02 * f.p1


def test_fourth_fit_ill_posed():
    with pytest.raises(IllPosedError):
        fit_fourth(np.deg2rad([0, 45, 90, 135]), [1.0, 2.0, 1.0, 2.0], "shared_phase4")
    with pytest.raises(IllPosedError):
        fit_fourth(ANGLES8[:4], [1.0] * 4, "basis5")
    with pytest.raises(IllPosedError):
        fit_fourth(np.deg2rad([0, 90, 180, 270, 360]), [1.0] * 5, "basis5")


# --------------------------------------------------------------------------
# ICA rotation and composition


def test_ica_rotation_examples():
    from photobss.bss_core import FourthMomentFit

    np.testing.assert_array_equal(ica_rotation(FourthMomentFit(1, 0, 1, 0.0)), np.eye(2))
    np.testing.assert_allclose(ica_rotation(FourthMomentFit(1, 0, 1, np.pi / 2)), [[0, -1], [1, 0]], atol=1e-16)


@given(st.floats(-10, 10))
def test_rotation_orthogonal(phi):
    from photobss.bss_core import FourthMomentFit

    v = ica_rotation(FourthMomentFit(1, 0, 1, phi))
    np.testing.assert_allclose(v @ v.T, np.eye(2), atol=4 * EPS)


def test_compose_identity_and_channel_selection():
    w = Whitener(np.eye(2), 0.0, 1.0)
    d = compose_demixer(w, np.eye(2), 1.0, 3.0)
    np.testing.assert_array_equal(d.matrix, np.eye(2))
    assert d.soi_channel == 1 and not d.ambiguous
    d = compose_demixer(w, np.eye(2), 3.02, 1.01)
    assert d.soi_channel == 2 and d.soi_kurtosis == 1.01
    assert compose_demixer(w, np.eye(2), 2.9, 3.05).ambiguous


def test_apply_demix_examples():
    r = np.random.default_rng(0)
    s, n = Waveform(1e-9, r.standard_normal(100)), Waveform(1e-9, r.standard_normal(100))
    y1, y2 = apply_demix(Demixer(np.eye(2), 1, 1.0, 3.0), s, n)
    np.testing.assert_array_equal(y1.samples, s.samples)
    a = MixingMatrix()
    x1, x2 = mix(s, n, a)
    y1, y2 = apply_demix(np.linalg.inv(a.as_array()), x1, x2)
    np.testing.assert_allclose(y1.samples, s.samples, atol=8 * EPS)
    np.testing.assert_allclose(y2.samples, n.samples, atol=8 * EPS)
    with pytest.raises(ShapeError):
        apply_demix(np.eye(2), s, Waveform(1e-9, np.zeros(5)))


# --------------------------------------------------------------------------
# end-to-end separation


def test_separate_scenario_leakage_and_channel():
    sc = scenario(4, n_bits=100_000, period_s=200e-9)
    sep = separate(sc["x1"], sc["x2"], sc["pulse"])
    d = sep.demixer
    assert leakage_db(d.matrix @ sc["a"].as_array()) < -20
    g = d.matrix @ sc["a"].as_array()
    assert abs(g[d.soi_channel - 1, 0]) > abs(g[d.soi_channel - 1, 1])  # SOI channel carries the SOI
    assert d.soi_kurtosis == pytest.approx(1.0, abs=0.15)
    assert d.other_kurtosis == pytest.approx(3.0, abs=0.3)
    assert COMPOSITION_NOTE in sep.notes


def test_separate_isotropic_identity_mixture():
    # orthogonal, equal-energy sources under identity mixing: flat 2nd-moment curve
    x1 = Waveform(1e-9, np.tile([1.0, 1.0, -1.0, -1.0], 64))
    x2 = Waveform(1e-9, np.tile([1.0, -1.0, 1.0, -1.0], 64))
    with pytest.raises(StageError) as err:
        separate(x1, x2, PulseTrain(1e-9, 1e-9))
    assert err.value.stage == "fit_second"
    assert isinstance(err.value.cause, IsotropicMixtureError)


@pytest.mark.parametrize("method", ["basis5", "shared_phase4"])
def test_separate_scale_equivariance(method):
    sc = scenario(6, n_bits=40_000, period_s=200e-9)
    settings = BssSettings(fourth_fit=method, n_phi=8)
    a = separate(sc["x1"], sc["x2"], sc["pulse"], settings)
    g = 2.0
    b = separate(sc["x1"].with_samples(g * sc["x1"].samples), sc["x2"].with_samples(g * sc["x2"].samples),
                 sc["pulse"], settings)
    assert abs(b.second_fit.theta0 - a.second_fit.theta0) < 1e-9
    assert abs(b.fourth_fit.phi0 - a.fourth_fit.phi0) < 1e-9
    assert b.demixer.soi_channel == a.demixer.soi_channel
    assert b.second_fit.q1 == pytest.approx(g**2 * a.second_fit.q1, rel=1e-9)
    assert b.second_fit.q2 == pytest.approx(g**2 * a.second_fit.q2, rel=1e-9)
    for attr in ("p1", "p2", "p3"):
        # the fourth fit runs on whitened samples, which carry the gain once (not squared)
        assert getattr(b.fourth_fit, attr) == pytest.approx(g**4 * getattr(a.fourth_fit, attr), rel=1e-9)


def _random_pair(seed, n=20_000):
    r = np.random.default_rng(seed)
    sub = r.choice([-1.0, 1.0], n) if seed % 2 else r.uniform(-np.sqrt(3), np.sqrt(3), n)
    return Waveform(1e-9, sub), Waveform(1e-9, r.standard_normal(n))


@given(st.integers(0, 2**31), st.lists(st.floats(-2, 2), min_size=4, max_size=4))
def test_demix_property_random_matrices(seed, entries):
    a = MixingMatrix(*entries)
    assume(abs(a.det) > 0.2)
    s, n = _random_pair(seed)
    x1, x2 = mix(s, n, a)
    try:
        sep = separate(x1, x2, PulseTrain(1e-9, 1e-9))
    except StageError:
        return  # nearly isotropic mixtures are rejected loudly; counted in the acceptance suite
    # the learned de-mixer is judged statistically in the acceptance suite; here check structure
    g = sep.demixer.matrix @ a.as_array()
    assert np.all(np.isfinite(g)) and abs(np.linalg.det(g)) > 0


@pytest.mark.parametrize("order", [2, 4])
def test_estimator_consistency_point_aperture(order):
    sc = scenario(8, n_bits=200_000)
    p = PulseTrain(25e-9, sc["s"].dt, "rect", 2.5e-9)  # tau <= one grid step, pulses well decorrelated
    sep = separate(sc["x1"], sc["x2"], p)
    angles = np.deg2rad([0.0, 30.0, 75.0, 120.0])
    full = moment_curve(sc["x1"].samples, sc["x2"].samples, angles, order)
    for k, a in enumerate(angles):
        v = np.cos(a) * sep.samples[0].values + np.sin(a) * sep.samples[1].values
        se = np.std(v**order) / np.sqrt(v.size)
        assert abs(np.mean(v**order) - full[k]) < 3 * se


def test_one_bit_aperture_preserves_soi_statistics():
    sc = scenario(8, n_bits=100_000)
    from photobss.pulse_sampler import sample

    s = sample(sc["s"], sc["pulse"]).values  # centred, one-bit rect aperture
    assert kurtosis(s) == 1.0 and second_moment(s) == 1.0
