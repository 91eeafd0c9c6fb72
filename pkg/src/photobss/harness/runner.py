"""Scenario execution: single runs, Monte-Carlo batches and detector sweeps."""

import json
import logging
import os
import platform
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import scipy

from .. import __version__
from .. import metrics
from ..bss_core import apply_demix, separate
from ..detector import (
    calibrate_two_point,
    dbm_to_mw,
    detector_stage,
    linear_range,
    response_v,
    saturation_avg_power_dbm,
    snr_curve,
)
from ..errors import ArtifactIOError, StageError
from ..metrics import TrialReport
from ..mixer import mix
from ..rng import OP_DETECTOR_SWEEP, OP_TRIAL_SEED, derive_seed
from ..signalgen import draw_symbols, gen_interference, gen_soi

log = logging.getLogger(__name__)


def versions():
    return {
        "photobss": __version__,
        "numpy": np.__version__,
        "scipy": scipy.__version__,
        "python": platform.python_version(),
    }


@dataclass
class RunReport:
    """Outcome of one scenario run.

    ``timing`` holds wall-clock seconds per stage. It is kept off the
    written report so identical runs produce identical files.
    """

    config: object
    trials: list
    separation: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)
    notes: list = field(default_factory=list)
    artifacts: list = field(default_factory=list)
    versions: dict = field(default_factory=versions)
    timing: dict = field(default_factory=dict)

    @property
    def trial(self):
        return self.trials[0]

    def to_dict(self, include_timing=False):
        out = {
            "config": self.config.to_dict(),
            "trials": [t.to_dict() for t in self.trials],
            "separation": self.separation,
            "warnings": list(self.warnings),
            "notes": list(self.notes),
            "artifacts": [Path(a).name for a in self.artifacts],
            "versions": self.versions,
        }
        if include_timing:
            out["timing"] = self.timing
        return out

    def to_json(self, include_timing=False):
        return json.dumps(_jsonable(self.to_dict(include_timing)), indent=2, sort_keys=True) + "\n"


def _jsonable(obj):
    if isinstance(obj, dict):
        return {k: _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


class _Clock:
    def __init__(self):
        self.timing = {}

    def run(self, stage, fn, *args, **kw):
        t0 = time.perf_counter()
        try:
            return fn(*args, **kw)
        except StageError:
            raise
        except Exception as exc:
            raise StageError(stage, exc) from exc
        finally:
            self.timing[stage] = self.timing.get(stage, 0.0) + time.perf_counter() - t0


class _Artifacts:
    """Tracks files written by a run so a failed run can remove them."""

    def __init__(self, out_dir):
        self.out_dir = None if out_dir is None else Path(out_dir)
        self.paths = []

    def prepare(self):
        if self.out_dir is None:
            return
        try:
            self.out_dir.mkdir(parents=True, exist_ok=True)
        except OSError as exc:
            raise ArtifactIOError(f"cannot create output directory {self.out_dir}: {exc.strerror or exc}") from exc

    def path(self, name):
        p = self.out_dir / name
        self.paths.append(p)
        return p

    def write_text(self, name, text):
        p = self.path(name)
        try:
            p.write_text(text)
        except OSError as exc:
            raise ArtifactIOError(f"cannot write {p}: {exc.strerror or exc}") from exc
        return p

    def cleanup(self):
        for p in self.paths:
            try:
                p.unlink()
            except OSError:
                pass


def synthesize(cfg):
    """Generate SOI, interference and mixtures for ``cfg``."""
    s = gen_soi(cfg.soi, cfg.seed)
    n = gen_interference(cfg.interference, s.duration, s.dt, cfg.seed)
    x1, x2 = mix(s, n, cfg.mixing)
    return s, n, x1, x2


def _detector_hook(cfg):
    if not cfg.detector_stage.enabled:
        return None
    st = cfg.detector_stage
    return detector_stage(cfg.detector, st.operating_power_dbm, cfg.seed, st.inverse_correction)


def run_scenario(cfg, out_dir=None):
    """Run one scenario end to end and write its enabled artifacts.

    Stages: signal synthesis, mixing, pulse sampling, optional detector,
    separation, full-rate de-mixing, metrics. Any stage failure raises
    :class:`StageError` naming the stage and carrying the config echo
    (``.config``); files already written by the run are removed first.
    """
    clock = _Clock()
    art = _Artifacts(out_dir)
    try:
        return _run_scenario(cfg, clock, art)
    except StageError as exc:
        art.cleanup()
        exc.config = cfg.to_dict()
        exc.scenario = (cfg.name, cfg.seed)
        raise
    except Exception:
        art.cleanup()
        raise


def _run_scenario(cfg, clock, art):
    s, n, x1, x2 = clock.run("signalgen", synthesize, cfg)
    symbols = clock.run("signalgen", draw_symbols, cfg.soi, cfg.seed)
    sep = clock.run("separate", separate, x1, x2, cfg.sampler, cfg.bss, _detector_hook(cfg), cfg.seed)
    d = sep.demixer
    y = clock.run("apply_demix", apply_demix, d, x1, x2)
    recovered = y[d.soi_channel - 1]

    def score():
        aligned = metrics.align(recovered, s)
        if cfg.soi.kind == "binary_nrz":
            ber = metrics.ber(aligned, symbols, cfg.soi.bit_period)
            eye = metrics.eye_data(aligned, cfg.soi.bit_period, symbols, cfg.outputs.eye_traces)
        else:
            ber = float("nan")
            eye = metrics.eye_data(aligned, cfg.soi.bit_period, None, cfg.outputs.eye_traces)
        return aligned, ber, eye

    aligned, ber, eye = clock.run("metrics", score)
    opening = eye.opening if cfg.soi.kind == "binary_nrz" else float("nan")
    trial = TrialReport(
        seed=cfg.seed,
        phi0_deg=float(np.rad2deg(sep.fourth_fit.phi0)),
        theta0_deg=float(np.rad2deg(sep.second_fit.theta0)),
        ber=ber,
        snr_db=float(metrics.snr_db(aligned, s)),
        eye_opening=float(opening),
        whiteness_residual=sep.whiteness_residual,
        soi_channel=d.soi_channel,
        soi_kurtosis=d.soi_kurtosis,
        other_kurtosis=d.other_kurtosis,
    )
    summary = sep.summary()
    summary["leakage_db"] = leakage_db(d.matrix @ cfg.mixing.as_array())
    summary["mixing_det"] = cfg.mixing.det
    warnings = list(sep.warnings)
    if cfg.mixing.near_singular:
        warnings.append(f"mixing matrix near singular: |det| = {abs(cfg.mixing.det):.3g}")
    report = RunReport(cfg, [trial], summary, warnings, list(sep.notes), timing=clock.timing)

    if art.out_dir is not None:
        clock.run("write", _write_run_artifacts, cfg, art, report, sep, eye, (s, n, x1, x2))
        report.artifacts = list(art.paths)
    return report


def leakage_db(g):
    """Worst off-diagonal to diagonal power ratio of ``D @ A`` after best permutation."""
    g = np.abs(np.asarray(g, dtype=float))
    if g[0, 0] * g[1, 1] < g[0, 1] * g[1, 0]:
        g = g[::-1]
    with np.errstate(divide="ignore"):
        return float(20 * np.log10(max(g[0, 1] / g[0, 0], g[1, 0] / g[1, 1])))


def _write_run_artifacts(cfg, art, report, sep, eye, waves):
    o = cfg.outputs
    art.prepare()
    art.write_text("config.cfg", cfg.to_ini())
    if o.trial_csv:
        metrics.export_trials(report.trials, art.path("trial.csv"))
    if o.scatter:
        metrics.export_scatter(sep.samples[0], sep.samples[1], art.path("scatter.csv"))
    if o.moment_curves:
        metrics.export_moment_curve(sep.second_fit, sep.theta_angles, sep.theta_moments,
                                    art.path("moments_second.csv"))
        metrics.export_moment_curve(sep.fourth_fit, sep.phi_angles, sep.phi_moments,
                                    art.path("moments_fourth.csv"))
    if o.eye:
        metrics.export_eye(eye, art.path("eye.csv"))
    if o.waveforms:
        _save_waveforms(art.path("waveforms.npz"), cfg, *waves)
    if o.report:
        # listed artifacts include the report itself
        art.paths.append(art.out_dir / "report.json")
        report.artifacts = list(art.paths)
        art.paths.pop()
        art.write_text("report.json", report.to_json())


def _save_waveforms(path, cfg, s, n, x1, x2):
    try:
        with open(path, "wb") as fh:
            np.savez(fh, dt=np.float64(s.dt), soi=s.samples, interference=n.samples, x1=x1.samples,
                     x2=x2.samples, symbols=draw_symbols(cfg.soi, cfg.seed))
    except OSError as exc:
        raise ArtifactIOError(f"cannot write {path}: {exc.strerror or exc}") from exc


def generate(cfg, out_dir):
    """Write the synthesized waveforms only (``waveforms.npz`` + ``waveforms.json``)."""
    art = _Artifacts(out_dir)
    try:
        art.prepare()
        s, n, x1, x2 = synthesize(cfg)
        _save_waveforms(art.path("waveforms.npz"), cfg, s, n, x1, x2)
        meta = {
            "config": cfg.to_dict(),
            "dt_s": s.dt,
            "n_samples": len(s),
            "arrays": ["dt", "soi", "interference", "x1", "x2", "symbols"],
            "versions": versions(),
        }
        art.write_text("waveforms.json", json.dumps(_jsonable(meta), indent=2, sort_keys=True) + "\n")
    except Exception:
        art.cleanup()
        raise
    return list(art.paths)


# --------------------------------------------------------------------------
# Monte-Carlo batches


def trial_seeds(base_seed, n):
    return [derive_seed(base_seed, OP_TRIAL_SEED, i) for i in range(n)]


def _one_trial(cfg, seed):
    try:
        return run_scenario(cfg.with_seed(seed)), None
    except Exception as exc:
        return None, f"{type(exc).__name__}: {exc}"


@dataclass
class TrialBatch:
    reports: list
    failures: list
    summary: dict
    artifacts: list = field(default_factory=list)

    @property
    def trials(self):
        return [r.trial for r in self.reports]


def run_trials(cfg, n=None, out_dir=None, jobs=1):
    """Run ``n`` trials with seeds derived from the config seed.

    Failed trials are counted and reported; the batch carries on. Results
    are ordered by trial index whatever the execution order.
    """
    n = cfg.trials.n if n is None else int(n)
    if n < 2:
        raise ValueError(f"need at least 2 trials, got {n}")
    seeds = trial_seeds(cfg.seed, n)
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(_one_trial, [cfg] * n, seeds))
    else:
        results = [_one_trial(cfg, s) for s in seeds]

    reports = [r for r, _ in results if r is not None]
    failures = [{"index": i, "seed": seeds[i], "error": err} for i, (_, err) in enumerate(results) if err]
    trials = [r.trial for r in reports]
    bers = np.array([t.ber for t in trials], dtype=float)
    summary = {
        "name": cfg.name,
        "base_seed": cfg.seed,
        "n_requested": n,
        "n_completed": len(reports),
        "n_failed": len(failures),
        "failures": failures,
        "phi0_spread_deg": metrics.phi0_spread(trials) if len(trials) >= 2 else float("nan"),
        "ber_median": float(np.median(bers)) if bers.size else float("nan"),
        "ber_max": float(np.max(bers)) if bers.size else float("nan"),
        "n_recovered": int(np.sum(bers <= 1e-4)),
        "config": cfg.to_dict(),
        "versions": versions(),
    }
    batch = TrialBatch(reports, failures, summary)
    if out_dir is not None:
        art = _Artifacts(out_dir)
        try:
            art.prepare()
            art.write_text("config.cfg", cfg.to_ini())
            metrics.export_trials(trials, art.path("trials.csv"))
            art.write_text("trials_summary.json", json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        except Exception:
            art.cleanup()
            raise
        batch.artifacts = list(art.paths)
    for f in failures:
        log.warning("trial %d (seed %d) failed: %s", f["index"], f["seed"], f["error"])
    return batch


# --------------------------------------------------------------------------
# detector characterization


def run_detector_sweep(d, grid_dbm, repeats, seed=0, linearity_tol=0.1, snr_floor_db=1.0, out_dir=None):
    """SNR / response sweep plus saturation power and linear range.

    Writes ``detector_curve.csv``
    (``power_dbm,v_peak_mean,v_peak_std,snr_db,v_response``, the last column
    being the noiseless response) and ``detector_summary.json`` when ``out_dir`` is given.
    """
    grid = np.asarray(grid_dbm, dtype=float)
    if grid.size == 0:
        raise ValueError("detector sweep grid is empty")
    rows = snr_curve(d, grid, repeats, derive_seed(seed, OP_DETECTOR_SWEEP, 0))
    lr = linear_range(d, linearity_tol, snr_floor_db)
    summary = {
        "saturation_power_dbm": float(saturation_avg_power_dbm(d)),
        "linear_range_db": lr.range_db,
        "linear_lower_dbm": lr.lower_dbm,
        "linear_upper_dbm": lr.upper_dbm,
        "linearity_tol": linearity_tol,
        "snr_floor_db": snr_floor_db,
        "note": lr.note,
        "detector": {k: getattr(d, k) for k in d.__dataclass_fields__},
        "versions": versions(),
    }
    paths = []
    if out_dir is not None:
        art = _Artifacts(out_dir)
        try:
            art.prepare()
            response = response_v(dbm_to_mw(grid), d)
            metrics.write_csv(art.path("detector_curve.csv"),
                              ("power_dbm", "v_peak_mean", "v_peak_std", "snr_db", "v_response"),
                              (tuple(r) + (v,) for r, v in zip(rows, response)))
            art.write_text("detector_summary.json",
                           json.dumps(_jsonable(summary), indent=2, sort_keys=True) + "\n")
        except Exception:
            art.cleanup()
            raise
        paths = list(art.paths)
    return rows, summary, paths


def run_detector_config(cfg, out_dir=None):
    d = calibrate_two_point(cfg.detector) if cfg.sweep.calibrate else cfg.detector
    sw = cfg.sweep
    return run_detector_sweep(d, sw.grid(), sw.repeats, cfg.seed, sw.linearity_tol, sw.snr_floor_db, out_dir)
