"""Command line entry point.

    photobss run --config fig6_short.cfg --out out/short
    photobss trials --config fig7_trials_long.cfg --n 15 --out out/long
    photobss detector-curve --config fig8_detector.cfg --out out/det
    photobss gen --config fig6_short.cfg --out out/waves
    photobss configs            # list bundled scenarios

Exit status: 0 success, 2 invalid config or arguments, 3 numerical or fit
failure, 4 file I/O failure, 1 anything else.
"""

import argparse
import json
import logging
import sys
from importlib import resources

from ..errors import ArtifactIOError, InvalidSpecError, NumericalError, StageError
from .config import load_config, parse_config
from .runner import generate, run_detector_config, run_scenario, run_trials

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4

log = logging.getLogger("photobss")


def bundled_configs():
    root = resources.files("photobss") / "configs"
    return sorted(p.name[:-4] for p in root.iterdir() if p.name.endswith(".cfg"))


def read_config(ref):
    """Load ``ref`` as a path, falling back to a bundled scenario name."""
    from pathlib import Path

    if Path(ref).exists():
        return load_config(ref)
    name = ref[:-4] if ref.endswith(".cfg") else ref
    if name in bundled_configs():
        res = resources.files("photobss") / "configs" / f"{name}.cfg"
        return parse_config(res.read_text(), source=f"bundled:{name}")
    return load_config(ref)  # raises ConfigError naming the path


def _out_dir(args, cfg):
    return args.out if args.out is not None else cfg.outputs.directory


def cmd_run(args):
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    report = run_scenario(cfg, _out_dir(args, cfg))
    t = report.trial
    print(f"{cfg.name}: seed={t.seed} phi0={t.phi0_deg:.3f} deg theta0={t.theta0_deg:.3f} deg "
          f"ber={t.ber:.4g} eye={t.eye_opening:.3f} whiteness={t.whiteness_residual:.3g}")
    for w in report.warnings:
        log.warning(w)
    return EXIT_OK


def cmd_trials(args):
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    batch = run_trials(cfg, args.n, _out_dir(args, cfg), jobs=args.jobs)
    s = batch.summary
    print(f"{cfg.name}: {s['n_completed']}/{s['n_requested']} trials, "
          f"phi0 spread={s['phi0_spread_deg']:.3f} deg, median ber={s['ber_median']:.4g}")
    return EXIT_OK if s["n_completed"] >= 2 else EXIT_NUMERICAL


def cmd_detector(args):
    cfg = read_config(args.config)
    _, summary, _ = run_detector_config(cfg, _out_dir(args, cfg))
    print(f"saturation power={summary['saturation_power_dbm']:.3f} dBm, "
          f"linear range={summary['linear_range_db']:.2f} dB "
          f"[{summary['linear_lower_dbm']:.2f}, {summary['linear_upper_dbm']:.2f}] dBm")
    return EXIT_OK


def cmd_gen(args):
    cfg = read_config(args.config)
    if args.seed is not None:
        cfg = cfg.with_seed(args.seed)
    for p in generate(cfg, _out_dir(args, cfg)):
        print(p)
    return EXIT_OK


def cmd_configs(args):
    for name in bundled_configs():
        print(name)
    return EXIT_OK


def cmd_show(args):
    cfg = read_config(args.config)
    if args.json:
        print(json.dumps(cfg.to_dict(), indent=2, sort_keys=True))
    else:
        sys.stdout.write(cfg.to_ini())
    return EXIT_OK


def build_parser():
    ap = argparse.ArgumentParser(prog="photobss", description=__doc__.split("\n\n")[0])
    ap.add_argument("-v", "--verbose", action="count", default=0)
    sub = ap.add_subparsers(dest="command", required=True)

    def common(p, seed=True):
        p.add_argument("--config", required=True, help="config file or bundled scenario name")
        p.add_argument("--out", default=None, help="output directory (default: [outputs] directory)")
        if seed:
            p.add_argument("--seed", type=int, default=None, help="override [scenario] seed")
        return p

    p = common(sub.add_parser("run", help="run one scenario"))
    p.set_defaults(func=cmd_run)
    p = common(sub.add_parser("trials", help="Monte-Carlo trials with derived seeds"))
    p.add_argument("--n", type=int, default=None, help="number of trials (default: [trials] n)")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_trials)
    p = common(sub.add_parser("detector-curve", help="detector SNR sweep"), seed=False)
    p.set_defaults(func=cmd_detector)
    p = common(sub.add_parser("gen", help="write synthesized waveforms only"))
    p.set_defaults(func=cmd_gen)
    p = sub.add_parser("configs", help="list bundled scenarios")
    p.set_defaults(func=cmd_configs)
    p = sub.add_parser("show", help="print a config with defaults filled in")
    p.add_argument("--config", required=True)
    p.add_argument("--json", action="store_true")
    p.set_defaults(func=cmd_show)
    return ap


def exit_code(exc):
    cause = exc.cause if isinstance(exc, StageError) else exc
    if isinstance(cause, ArtifactIOError):
        return EXIT_IO
    if isinstance(cause, InvalidSpecError):
        return EXIT_CONFIG
    if isinstance(cause, (NumericalError, ArithmeticError)):
        return EXIT_NUMERICAL
    if isinstance(cause, OSError):
        return EXIT_IO
    return 1


def main(argv=None):
    ap = build_parser()
    try:
        args = ap.parse_args(argv)
    except SystemExit as e:
        return EXIT_CONFIG if e.code else EXIT_OK
    level = logging.WARNING - 10 * min(args.verbose, 2)
    logging.basicConfig(level=level, format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except Exception as exc:  # noqa: BLE001 - mapped to an exit status
        where = ""
        if getattr(exc, "scenario", None):
            where = " (scenario {}, seed {})".format(*exc.scenario)
        print(f"photobss: error: {exc}{where}", file=sys.stderr)
        log.debug("traceback", exc_info=True)
        return exit_code(exc)


if __name__ == "__main__":
    sys.exit(main())
