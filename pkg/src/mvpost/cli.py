"""Command-line driver.

Subcommands: ``synth``, ``calibrate``, ``postprocess``, ``verify``, ``run``
and ``dm``. Experiment settings come from an optional flat ``key = value``
file (``--config``); any flag given on the command line overrides the file.

Exit codes: 0 success, 1 validation error, 2 estimation failures above the
configured threshold fraction.
"""

from __future__ import annotations

import argparse
import csv
import logging
import sys
from pathlib import Path

import numpy as np

from .archive import ingest, write_archive
from .errors import ConfigurationError, MvpostError
from .pipeline import (
    SCORES,
    ExperimentConfig,
    calibration_rows,
    ensemble_rows,
    read_ensembles,
    run_experiment,
    verify_ensembles,
    write_table,
)
from .synth import ScenarioConfig, ar1_corr, generate_archive
from .verify import dm_test

log = logging.getLogger("mvpost")

EXIT_OK, EXIT_INVALID, EXIT_FAILURES = 0, 1, 2

# experiment keys mirrored as flags: (flag, dest, type, help)
_EXPERIMENT_FLAGS = [
    ("--variable-kind", "variable_kind", str, "T2M, V10 or PPT24"),
    ("--archive", "archive", str, "forecast archive file"),
    ("--output", "output", str, "output file or directory"),
    ("--window-days", "window_days", int, "rolling training window length"),
    ("--methods", "methods", str, "comma-separated method list"),
    ("--reference", "reference", str, "reference method for skill and DM tests"),
    ("--seed", "seed", int, "master random seed"),
    ("--vs-p", "vs_p", float, "variogram score order"),
    ("--mdssh-m", "mdssh_m", int, "initial mdSSh threshold m"),
    ("--mdssh-min-count", "mdssh_min_count", int, "minimum retained mdSSh trajectories"),
    ("--optimizer", "optimizer", str, "auto or nelder-mead"),
    ("--cold-restart-days", "cold_restart_days", int, "days between restarts from the default start"),
    ("--failure-threshold", "failure_threshold", float, "tolerated fraction of failed fits"),
    ("--season-half-width", "season_half_width", int, "half width in days of the same-season window"),
    ("--workers", "workers", int, "worker processes (default MVPOST_WORKERS or 1)"),
]


def read_config_file(path):
    """Parse ``key = value`` lines; ``#`` starts a comment."""
    out = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"{path}:{lineno}: expected key = value")
        key, value = (s.strip() for s in line.split("=", 1))
        out[key.replace("-", "_")] = value
    return out


def experiment_config(args) -> ExperimentConfig:
    values = read_config_file(args.config) if getattr(args, "config", None) else {}
    for _, dest, _, _ in _EXPERIMENT_FLAGS:
        v = getattr(args, dest, None)
        if v is not None:
            values[dest] = v
    return ExperimentConfig.from_mapping(values).validate()


def _add_experiment_flags(p):
    p.add_argument("--config", help="key = value configuration file")
    for flag, dest, typ, text in _EXPERIMENT_FLAGS:
        p.add_argument(flag, dest=dest, type=typ, default=None, help=text)


def _require(cfg, name):
    v = getattr(cfg, name)
    if not v:
        raise ConfigurationError(f"missing required setting: {name}")
    return v


def _failure_exit(frac, threshold):
    if frac > threshold:
        log.error("estimation failures %.2f%% exceed threshold %.2f%%", 100 * frac, 100 * threshold)
        return EXIT_FAILURES
    return EXIT_OK


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args):
    cfg = ScenarioConfig(
        variable_kind=args.variable_kind,
        n_stations=args.stations,
        n_days=args.days,
        L=args.leads,
        truth_corr=ar1_corr(args.leads, args.rho),
        ensemble_bias=args.bias,
        spread_deflation=args.deflation,
        seasonal_amplitude=args.amplitude,
        seed=args.seed,
        start_date=args.start_date,
        missing_obs_fraction=args.missing,
    )
    archive = generate_archive(cfg)
    write_archive(args.output, archive)
    log.info("wrote %d stations x %d days to %s", cfg.n_stations, cfg.n_days, args.output)
    return EXIT_OK


def cmd_calibrate(args):
    cfg = experiment_config(args)
    archive = ingest(_require(cfg, "archive"), cfg.variable_kind)
    header, rows, frac = calibration_rows(cfg, archive)
    write_table(_require(cfg, "output"), header, rows)
    return _failure_exit(frac, cfg.failure_threshold)


def cmd_postprocess(args):
    cfg = experiment_config(args)
    archive = ingest(_require(cfg, "archive"), cfg.variable_kind)
    header, rows = ensemble_rows(cfg, archive)
    write_table(_require(cfg, "output"), header, rows)
    return EXIT_OK


def cmd_verify(args):
    cfg = experiment_config(args)
    archive = ingest(_require(cfg, "archive"), cfg.variable_kind)
    report = verify_ensembles(cfg, archive, read_ensembles(args.ensembles))
    report.write(_require(cfg, "output"))
    sys.stdout.write(report.summary())
    return EXIT_OK


def cmd_run(args):
    cfg = experiment_config(args)
    archive = ingest(_require(cfg, "archive"), cfg.variable_kind)
    report = run_experiment(cfg, archive)
    report.write(_require(cfg, "output"))
    sys.stdout.write(report.summary())
    return _failure_exit(report.failure_fraction, cfg.failure_threshold)


def _read_series(path, score):
    if score not in SCORES:
        raise ConfigurationError(f"unknown score {score!r}; choose from {', '.join(SCORES)}")
    series = {}
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            series.setdefault((row["method"], row["station"]), []).append((row["init_date"], float(row[score])))
    return series


def cmd_dm(args):
    series = _read_series(args.series, args.score)
    stations = sorted({s for (m, s) in series if m == args.f} & {s for (m, s) in series if m == args.g})
    if not stations:
        raise ConfigurationError(f"no station has series for both {args.f} and {args.g}")
    rows = []
    for st in stations:
        f = dict(series[(args.f, st)])
        g = dict(series[(args.g, st)])
        if sorted(f) != sorted(g):
            raise ConfigurationError(f"station {st}: series are not aligned on the same dates")
        dates = sorted(f)
        res = dm_test(np.array([f[d] for d in dates]), np.array([g[d] for d in dates]))
        rows.append([st, args.f, args.g, args.score, res.n, res.statistic, res.p_value, res.decision])
        print(f"{st}\t{args.f} vs {args.g}\t{args.score}\tt={res.statistic:.4f}\t{res.decision}")
    if args.output:
        write_table(args.output, ["station", "f", "g", "score", "n", "t", "p_value", "decision"], rows)
    return EXIT_OK


def build_parser():
    parser = argparse.ArgumentParser(prog="mvpost", description="Multivariate ensemble post-processing")
    parser.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="generate a synthetic forecast archive")
    p.add_argument("--variable-kind", default="T2M")
    p.add_argument("--stations", type=int, default=5)
    p.add_argument("--days", type=int, default=1100)
    p.add_argument("--leads", type=int, default=10)
    p.add_argument("--rho", type=float, default=0.7, help="lag-1 correlation of the AR(1) truth")
    p.add_argument("--bias", type=float, default=0.0)
    p.add_argument("--deflation", type=float, default=1.0)
    p.add_argument("--amplitude", type=float, default=None, help="seasonal amplitude (kind default if omitted)")
    p.add_argument("--missing", type=float, default=0.0, help="fraction of missing observations")
    p.add_argument("--start-date", default="2002-01-01")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--output", required=True)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("calibrate", help="rolling EMOS fits; writes predictive parameters")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("postprocess", help="calibrate and write reordered trajectory ensembles")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_postprocess)

    p = sub.add_parser("verify", help="score saved ensembles against the archive")
    _add_experiment_flags(p)
    p.add_argument("--ensembles", required=True)
    p.set_defaults(func=cmd_verify)

    p = sub.add_parser("run", help="full pipeline with reports")
    _add_experiment_flags(p)
    p.set_defaults(func=cmd_run)

    p = sub.add_parser("dm", help="Diebold-Mariano tests on saved score series")
    p.add_argument("--series", required=True, help="series.csv written by run or verify")
    p.add_argument("--f", required=True, help="method F")
    p.add_argument("--g", required=True, help="method G")
    p.add_argument("--score", default="ES")
    p.add_argument("--output")
    p.set_defaults(func=cmd_dm)
    return parser


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        return args.func(args)
    except (MvpostError, OSError, ValueError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID


if __name__ == "__main__":
    sys.exit(main())
