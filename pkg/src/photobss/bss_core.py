"""Moment-curve blind source separation for two mixtures.

Separation is closed form. Second moments of ``cos(t) x1 + sin(t) x2``
trace ``q1 + q2 cos 2(t - theta0)``, which gives a whitening transform.
Fourth moments of the whitened pair trace
``p1 + p2 cos 2(p - phi0) + p3 cos 4(p - phi0)``, which gives the rotation
that lines the outputs up with the independent sources.
"""

from dataclasses import dataclass, field

import numpy as np
from scipy import optimize

from .errors import (
    DegenerateFitError,
    EmptyInputError,
    IllPosedError,
    IsotropicMixtureError,
    NoFourthHarmonicError,
    ShapeError,
    StageError,
)
from .mixer import check_same_grid
from .pulse_sampler import SampleStream
from .pulse_sampler import sample as pulse_sample
from .rng import OP_ANGLES, substream

FOURTH_FIT_METHODS = ("basis5", "shared_phase4")

COMPOSITION_NOTE = (
    "de-mixer composed as V^T U S U^-1 (whitening U S U^-1 with S = diag(1, sqrt((q1+q2)/(q1-q2))), "
    "then projection onto the ICA direction); the alternative composition V U S^-1 does not whiten"
)


def _wrap(angle, period):
    """``angle`` reduced to ``[0, period)`` (np.mod can return ``period`` itself)."""
    a = float(np.mod(angle, period))
    return 0.0 if a >= period else a


def rotation(angle):
    c, s = np.cos(angle), np.sin(angle)
    return np.array([[c, -s], [s, c]])


# --------------------------------------------------------------------------
# moment measurements


def _values(s):
    return s.values if isinstance(s, SampleStream) else np.asarray(s, dtype=float)


def weighted_mix(x1, x2, angle):
    """``cos(angle) * x1 + sin(angle) * x2`` on a shared time grid."""
    if len(x1) != len(x2) or not np.array_equal(x1.times, x2.times):
        raise ShapeError("weighted_mix needs streams on identical time grids")
    return x1.with_values(np.cos(angle) * x1.values + np.sin(angle) * x2.values)


def second_moment(s):
    v = _values(s)
    if v.size < 2:
        raise EmptyInputError("second moment needs at least 2 samples")
    return float(np.mean(v * v))


def fourth_moment(s):
    v = _values(s)
    if v.size < 2:
        raise EmptyInputError("fourth moment needs at least 2 samples")
    v2 = v * v
    return float(np.mean(v2 * v2))


def kurtosis(s):
    """Normalized fourth moment ``E x^4 / (E x^2)^2`` (3 for a Gaussian)."""
    m2 = second_moment(s)
    if m2 == 0:
        raise DegenerateFitError("kurtosis of an all-zero stream")
    return fourth_moment(s) / m2**2


def moment_curve(x1, x2, angles, order):
    """Measure the ``order``-th moment of the weighted mix at each angle."""
    v1, v2 = _values(x1), _values(x2)
    if v1.shape != v2.shape:
        raise ShapeError("moment_curve needs streams of equal length")
    f = second_moment if order == 2 else fourth_moment
    return np.array([f(np.cos(a) * v1 + np.sin(a) * v2) for a in angles])


# --------------------------------------------------------------------------
# second-moment fit and whitening


@dataclass(frozen=True)
class SecondMomentFit:
    q1: float
    q2: float
    theta0: float

    def __call__(self, theta):
        return self.q1 + self.q2 * np.cos(2 * (np.asarray(theta) - self.theta0))


def _lstsq(design, y, cond_max, what):
    cond = np.linalg.cond(design)
    if not np.isfinite(cond) or cond > cond_max:
        raise IllPosedError(f"{what}: design matrix condition number {cond:.3g} exceeds {cond_max:.3g}")
    coef, *_ = np.linalg.lstsq(design, y, rcond=None)
    return coef


def fit_second(angles, moments, cond_max=1e8, isotropy_tol=1e-9):
    """Fit ``m(t) = c0 + c2 cos 2t + s2 sin 2t`` and return ``(q1, q2, theta0)``.

    With exactly three angles distinct modulo pi the fit interpolates.
    """
    angles = np.asarray(angles, dtype=float)
    moments = np.asarray(moments, dtype=float)
    if angles.size < 3 or angles.shape != moments.shape:
        raise IllPosedError("second-moment fit needs >= 3 (angle, moment) pairs")
    design = np.column_stack([np.ones_like(angles), np.cos(2 * angles), np.sin(2 * angles)])
    c0, c2, s2 = _lstsq(design, moments, cond_max, "second-moment fit")
    q2 = float(np.hypot(c2, s2))
    if q2 <= isotropy_tol * abs(c0):
        raise IsotropicMixtureError(f"second-moment curve is flat (q2={q2:.3g}, q1={c0:.3g})")
    if c0 < q2:
        raise DegenerateFitError(f"fit gives q1={c0:.6g} < q2={q2:.6g}: negative principal power")
    theta0 = _wrap(0.5 * np.arctan2(s2, c2), np.pi)
    return SecondMomentFit(float(c0), q2, theta0)


@dataclass(frozen=True)
class Whitener:
    matrix: np.ndarray
    u_theta0: float
    sigma_ratio: float


def pca_whitener(f, rank_tol=1e-9):
    """``U S U^-1`` with ``U`` the rotation by theta0 and ``S = diag(1, sqrt((q1+q2)/(q1-q2)))``.

    ``q1 - q2 <= rank_tol * q1`` means the mixtures are (numerically) one
    signal: a rank-1 mixing matrix, which no whitener can undo.
    """
    if not f.q1 - abs(f.q2) > rank_tol * abs(f.q1):
        raise DegenerateFitError(
            f"second principal power q1 - q2 = {f.q1 - f.q2:.3g} is not positive (rank-deficient mixture)"
        )
    ratio = float(np.sqrt((f.q1 + f.q2) / (f.q1 - f.q2)))
    u = rotation(f.theta0)
    matrix = u @ np.diag([1.0, ratio]) @ u.T
    return Whitener(matrix, f.theta0, ratio)


def whiteness_residual(y1, y2):
    """``|C12| / mean(C11, C22)`` of the (mean-removed) covariance."""
    c = np.cov(np.vstack([_values(y1), _values(y2)]), bias=True)
    return float(abs(c[0, 1]) / (0.5 * (c[0, 0] + c[1, 1])))


# --------------------------------------------------------------------------
# fourth-moment fit and ICA rotation


@dataclass(frozen=True)
class FourthMomentFit:
    """Parameters of ``p1 + p2 cos 2(p - phi0) + p3 cos 4(p - phi0)``.

    ``p2`` and ``p3`` are signed; ``phi0`` lies in ``[0, pi/2)``.
    ``phase_consistency`` is ``|cos|`` of the mismatch between the fitted
    2nd-harmonic phase and ``phi0`` (1 means one shared phase fits both).
    """

    p1: float
    p2: float
    p3: float
    phi0: float
    phase_consistency: float = 1.0
    method: str = "basis5"
    n_candidates: int = 1

    def __call__(self, phi):
        d = np.asarray(phi) - self.phi0
        return self.p1 + self.p2 * np.cos(2 * d) + self.p3 * np.cos(4 * d)


def _shared_design(angles, phi0):
    d = angles - phi0
    return np.column_stack([np.ones_like(angles), np.cos(2 * d), np.cos(4 * d)])


def fit_fourth(angles, moments, method="basis5", cond_max=1e8, harmonic_tol=1e-9, second_moment=None):
    """Fit the fourth-moment curve of a whitened pair.

    ``basis5`` solves the linear 5-term harmonic model (>= 5 angles) and
    picks, among the pi/4-spaced candidates from the 4th harmonic, the
    one whose phase agrees with the 2nd harmonic. When the 2nd harmonic
    vanishes the candidate with the smaller curve value is used.
    ``shared_phase4`` solves the shared-phase model directly and works
    from 4 angles, where the model generally has several exact solutions.
    Those are told apart with ``second_moment`` (``E x^2`` of the whitened
    pair, equal at every angle): independent sources of common variance
    ``c`` always satisfy ``p1 - 3 p3 = 3 c^2``. Without it the solution
    with the flattest curve is returned and ``n_candidates`` reports the
    ambiguity.
    """
    angles = np.asarray(angles, dtype=float)
    moments = np.asarray(moments, dtype=float)
    if angles.shape != moments.shape:
        raise ShapeError("angles and moments differ in length")
    if method == "basis5":
        return _fit_fourth_basis5(angles, moments, cond_max, harmonic_tol)
    if method == "shared_phase4":
        return _fit_fourth_shared(angles, moments, cond_max, harmonic_tol, second_moment)
    raise ValueError(f"unknown fourth-moment fit method {method!r}")


def _fit_fourth_basis5(angles, moments, cond_max, harmonic_tol):
    if angles.size < 5:
        raise IllPosedError("basis5 fourth-moment fit needs >= 5 angles (use shared_phase4 for 4)")
    design = np.column_stack([
        np.ones_like(angles),
        np.cos(2 * angles), np.sin(2 * angles),
        np.cos(4 * angles), np.sin(4 * angles),
    ])
    c0, c2, s2, c4, s4 = _lstsq(design, moments, cond_max, "fourth-moment fit")
    r2, beta2 = np.hypot(c2, s2), np.arctan2(s2, c2)
    r4, beta4 = np.hypot(c4, s4), np.arctan2(s4, c4)
    if r4 <= harmonic_tol * abs(c0):
        raise NoFourthHarmonicError(f"fourth-moment curve has no 4th harmonic (|p3|={r4:.3g})")

    # Candidates phi = beta4/4 + k pi/4; odd k flips the sign of p3.
    cand = beta4 / 4 + np.arange(4) * np.pi / 4
    consistency = np.abs(np.cos(2 * cand - beta2))
    if r2 > harmonic_tol * abs(c0):
        parity = 0 if consistency[0] >= consistency[1] else 1
    else:
        parity = 1  # p3 < 0: the curve is smallest at phi0
    phi0 = _wrap(cand[parity], np.pi / 2)
    p3 = float(r4 if parity == 0 else -r4)
    p2 = float(r2 * np.cos(2 * phi0 - beta2))
    pc = float(consistency[parity]) if r2 > 0 else 1.0
    return FourthMomentFit(float(c0), p2, p3, phi0, pc, "basis5")


def _shared_solve(angles, moments, phi0):
    design = _shared_design(angles, phi0)
    coef, *_ = np.linalg.lstsq(design, moments, rcond=None)
    return coef, moments - design @ coef


def _shared_candidates(angles, moments):
    """phi0 values in [0, pi/2) where the shared-phase model fits best."""
    grid = np.linspace(0, np.pi / 2, 721)
    if angles.size == 4:
        # Exactly determined: roots of det([M(phi0) | m]).
        det = np.array([np.linalg.det(np.column_stack([_shared_design(angles, g), moments])) for g in grid])
        scale = np.max(np.abs(det)) or 1.0
        roots = []
        for i in range(grid.size - 1):
            a, b = det[i], det[i + 1]
            if a == 0:
                roots.append(grid[i])
            elif a * b < 0:
                roots.append(optimize.brentq(
                    lambda g: np.linalg.det(np.column_stack([_shared_design(angles, g), moments])),
                    grid[i], grid[i + 1], xtol=1e-15, rtol=4 * np.finfo(float).eps,
                ))
        if roots or scale == 0:
            return roots
    sse = np.array([np.sum(_shared_solve(angles, moments, g)[1] ** 2) for g in grid])
    idx = [i for i in range(grid.size) if sse[i] <= sse[i - 1] and sse[i] <= sse[(i + 1) % grid.size]]
    out = []
    for i in idx:
        res = optimize.least_squares(
            lambda v: _shared_solve(angles, moments, v[0])[1],
            [grid[i]], xtol=1e-15, ftol=1e-15, gtol=1e-15,
        )
        out.append(float(res.x[0]))
    return out


def _fit_fourth_shared(angles, moments, cond_max, harmonic_tol, second_moment=None):
    if angles.size < 4:
        raise IllPosedError("shared-phase fourth-moment fit needs >= 4 angles")
    # rank check on the 4th-harmonic content the angles can see
    probe = np.column_stack([np.ones_like(angles), np.cos(4 * angles), np.sin(4 * angles)])
    cond = np.linalg.cond(probe)
    if not np.isfinite(cond) or cond > cond_max:
        raise IllPosedError(f"fourth-moment angles alias modulo pi/2 (condition {cond:.3g})")
    norm = np.sum(moments**2) or 1.0
    fits = []
    for phi0 in _shared_candidates(angles, moments):
        phi0 = _wrap(phi0, np.pi / 2)
        (p1, p2, p3), resid = _shared_solve(angles, moments, phi0)
        sse = round(float(np.sum(resid**2)) / norm, 12)
        if second_moment is None:
            tie = abs(p2) + abs(p3)
        else:
            tie = abs(p1 - 3 * p3 - 3 * second_moment**2)
        fits.append(((sse, tie), (float(p1), float(p2), float(p3), phi0)))
    if not fits:
        raise IllPosedError("shared-phase model has no solution for these moments")
    fits.sort(key=lambda f: f[0])
    n_best = sum(1 for f in fits if f[0][0] == fits[0][0][0])
    p1, p2, p3, phi0 = fits[0][1]
    if abs(p3) <= harmonic_tol * abs(p1):
        raise NoFourthHarmonicError(f"fourth-moment curve has no 4th harmonic (|p3|={abs(p3):.3g})")
    return FourthMomentFit(p1, p2, p3, phi0, 1.0, "shared_phase4", n_best)


def ica_rotation(f):
    """Rotation matrix by ``phi0`` (the ICA stage)."""
    return rotation(f.phi0)


# --------------------------------------------------------------------------
# de-mixer


@dataclass(frozen=True)
class Demixer:
    matrix: np.ndarray
    soi_channel: int
    soi_kurtosis: float
    other_kurtosis: float
    ambiguous: bool = False


def compose_demixer(w, v, y1_kurt, y2_kurt, kurtosis_tol=0.2):
    """Combine whitener and ICA rotation; pick the SOI as the most sub-Gaussian output.

    The weight for output ``i`` is the projection direction of column
    ``i`` of ``v``, so the ICA stage enters as ``v.T``.
    """
    matrix = np.asarray(v).T @ w.matrix
    if not np.all(np.isfinite(matrix)) or abs(np.linalg.det(matrix)) == 0:
        raise DegenerateFitError("de-mixing matrix is singular or non-finite")
    soi = 1 if y1_kurt <= y2_kurt else 2
    ambiguous = abs(abs(y1_kurt - 3) - abs(y2_kurt - 3)) < kurtosis_tol
    k_soi, k_other = (y1_kurt, y2_kurt) if soi == 1 else (y2_kurt, y1_kurt)
    return Demixer(matrix, soi, float(k_soi), float(k_other), bool(ambiguous))


def apply_demix(d, x1, x2):
    """Apply the 2x2 de-mixer sample by sample to full-rate mixtures."""
    check_same_grid(x1, x2)
    m = d.matrix if isinstance(d, Demixer) else np.asarray(d)
    y1 = m[0, 0] * x1.samples + m[0, 1] * x2.samples
    y2 = m[1, 0] * x1.samples + m[1, 1] * x2.samples
    return x1.with_samples(y1, "y1"), x1.with_samples(y2, "y2")


# --------------------------------------------------------------------------
# orchestration


@dataclass(frozen=True)
class BssSettings:
    theta_angles_deg: tuple = None
    n_theta: int = 6
    phi_angles_deg: tuple = None
    n_phi: int = 8
    fourth_fit: str = "basis5"
    random_angles: bool = False
    cond_max: float = 1e8
    whiteness_tol: float = 0.02
    kurtosis_tol: float = 0.2
    isotropy_tol: float = 1e-9
    harmonic_tol: float = 1e-9
    rank_tol: float = 1e-9

    def __post_init__(self):
        if self.fourth_fit not in FOURTH_FIT_METHODS:
            raise ValueError(f"fourth_fit must be one of {FOURTH_FIT_METHODS}")
        for name in ("theta_angles_deg", "phi_angles_deg"):
            v = getattr(self, name)
            if v is not None:
                object.__setattr__(self, name, tuple(float(a) for a in v))

    def angles(self, seed=0):
        """Return (theta, phi) angle arrays in radians."""
        return (self._angles(self.theta_angles_deg, self.n_theta, seed, 0),
                self._angles(self.phi_angles_deg, self.n_phi, seed, 1))

    def _angles(self, explicit, n, seed, which):
        if explicit is not None:
            return np.deg2rad(np.asarray(explicit, dtype=float))
        if self.random_angles:
            return np.sort(substream(seed, OP_ANGLES, which).uniform(0, np.pi, n))
        return np.arange(n) * np.pi / n


@dataclass
class Separation:
    """Demixer plus everything measured on the way to it."""

    demixer: Demixer
    second_fit: SecondMomentFit
    whitener: Whitener
    fourth_fit: FourthMomentFit
    theta_angles: np.ndarray
    theta_moments: np.ndarray
    phi_angles: np.ndarray
    phi_moments: np.ndarray
    samples: tuple
    whitened: tuple
    whiteness_residual: float
    kurtosis: tuple
    notes: list = field(default_factory=list)
    warnings: list = field(default_factory=list)

    def summary(self):
        return {
            "q1": self.second_fit.q1,
            "q2": self.second_fit.q2,
            "theta0_deg": float(np.rad2deg(self.second_fit.theta0)),
            "p1": self.fourth_fit.p1,
            "p2": self.fourth_fit.p2,
            "p3": self.fourth_fit.p3,
            "phi0_deg": float(np.rad2deg(self.fourth_fit.phi0)),
            "phase_consistency": self.fourth_fit.phase_consistency,
            "sigma_ratio": self.whitener.sigma_ratio,
            "whiteness_residual": self.whiteness_residual,
            "kurtosis": list(self.kurtosis),
            "soi_channel": self.demixer.soi_channel,
            "demixer": self.demixer.matrix.tolist(),
            "n_pulse_samples": int(len(self.samples[0])),
        }


def _stage(name, fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except StageError:
        raise
    except Exception as exc:
        raise StageError(name, exc) from exc


def separate(x1, x2, p, settings=None, detector=None, seed=0):
    """Learn a de-mixer from pulse-sampled statistics of ``x1``, ``x2``.

    Parameters
    ----------
    x1, x2 : Waveform
        Full-rate mixtures on one grid.
    p : PulseTrain
        Sampling pulses.
    settings : BssSettings, optional
        Angles, fit method and tolerances.
    detector : callable, optional
        ``detector(s1, s2) -> (s1, s2, warnings)`` applied to the sampled
        mixtures before moments are measured (see
        :func:`photobss.detector.detector_stage`).
    seed : int
        Only used to draw random angles.
    """
    settings = settings or BssSettings()
    check_same_grid(x1, x2)
    theta, phi = settings.angles(seed)
    warnings = []

    s1 = _stage("sample", pulse_sample, x1, p)
    s2 = _stage("sample", pulse_sample, x2, p)
    if detector is not None:
        s1, s2, det_warn = _stage("detector", detector, s1, s2)
        warnings.extend(det_warn)

    m2 = _stage("second_moments", moment_curve, s1, s2, theta, 2)
    f2 = _stage("fit_second", fit_second, theta, m2, settings.cond_max, settings.isotropy_tol)
    w = _stage("pca_whitener", pca_whitener, f2, settings.rank_tol)
    wm = w.matrix
    w1 = s1.with_values(wm[0, 0] * s1.values + wm[0, 1] * s2.values)
    w2 = s1.with_values(wm[1, 0] * s1.values + wm[1, 1] * s2.values)
    white = whiteness_residual(w1, w2)
    if white > settings.whiteness_tol:
        warnings.append(f"whitened samples not white: residual {white:.3g} > {settings.whiteness_tol}")

    m4 = _stage("fourth_moments", moment_curve, w1, w2, phi, 4)
    c2 = 0.5 * (second_moment(w1) + second_moment(w2))
    f4 = _stage("fit_fourth", fit_fourth, phi, m4, settings.fourth_fit, settings.cond_max,
                settings.harmonic_tol, c2)
    v = ica_rotation(f4)
    vt = v.T
    y1 = vt[0, 0] * w1.values + vt[0, 1] * w2.values
    y2 = vt[1, 0] * w1.values + vt[1, 1] * w2.values
    k1, k2 = _stage("kurtosis", lambda: (kurtosis(y1), kurtosis(y2)))
    d = _stage("compose", compose_demixer, w, v, k1, k2, settings.kurtosis_tol)
    if d.ambiguous:
        warnings.append(f"SOI channel ambiguous: output kurtoses {k1:.3f}, {k2:.3f}")

    return Separation(
        demixer=d, second_fit=f2, whitener=w, fourth_fit=f4,
        theta_angles=theta, theta_moments=m2, phi_angles=phi, phi_moments=m4,
        samples=(s1, s2), whitened=(w1, w2), whiteness_residual=white,
        kurtosis=(float(k1), float(k2)), notes=[COMPOSITION_NOTE], warnings=warnings,
    )
