"""Experiment orchestration: calibrate, sample, reorder, verify, report."""

from __future__ import annotations

import csv
import logging
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

import numpy as np
from scipy.stats import kstest

from .archive import ForecastArchive
from .dists import SquaredDist
from .emos import DEFAULT_WINDOW, VariableKind, day_indices, ensemble_stats, rolling_calibrate, training_slice
from .errors import ConfigurationError, DegenerateTestError, UndefinedSkillError, UsageError
from .marginals import draw_samples, independent_baseline, sample_quantiles
from .reorder import (
    HistoricalArchive,
    decc,
    ecc_reorder,
    estimate_error_autocorrelation,
    mdssh_select,
    schaake_reorder,
    simssh_select,
    ssh_select,
)
from .verify import (
    average_rank,
    dm_test,
    energy_score,
    euclidean_error,
    l1_median,
    rank_histogram,
    reliability_index,
    skill_score,
    variogram_score,
)

log = logging.getLogger(__name__)

METHODS = (
    "RAW",
    "EMOS-R",
    "EMOS-Q",
    "EMOS-S",
    "ECC-R",
    "ECC-Q",
    "ECC-S",
    "dECC",
    "SSh-R",
    "SSh-Q",
    "SSh-S",
    "mdSSh",
    "simSSh",
)
SCORES = ("ES", "VS", "EE")
TEMPLATE_METHODS = ("SSh-R", "SSh-Q", "SSh-S", "mdSSh", "simSSh")
_PIT_STREAM = len(METHODS)


def _env_workers():
    try:
        return max(1, int(os.environ.get("MVPOST_WORKERS", "1")))
    except ValueError:
        return 1


def base_method(label):
    return label.split("#", 1)[0]


@dataclass
class ExperimentConfig:
    variable_kind: VariableKind = VariableKind.T2M
    archive: str | None = None
    output: str | None = None
    window_days: int | None = None
    methods: tuple = ("RAW", "EMOS-Q", "ECC-Q")
    reference: str | None = None
    seed: int = 0
    vs_p: float = 1.0
    mdssh_m: int = 6
    mdssh_min_count: int | None = None
    optimizer: str = "auto"
    cold_restart_days: int = 30
    failure_threshold: float = 0.05
    season_half_width: int = 45
    workers: int = field(default_factory=_env_workers)

    def __post_init__(self):
        self.variable_kind = VariableKind(self.variable_kind)
        if isinstance(self.methods, str):
            self.methods = tuple(m.strip() for m in self.methods.split(",") if m.strip())
        self.methods = tuple(self.methods)
        if self.window_days is None:
            self.window_days = DEFAULT_WINDOW[self.variable_kind]

    @property
    def labels(self):
        """Method labels; repeated entries get a ``#n`` suffix."""
        seen, out = {}, []
        for m in self.methods:
            seen[m] = seen.get(m, 0) + 1
            out.append(m if seen[m] == 1 else f"{m}#{seen[m]}")
        return tuple(out)

    @property
    def resolved_reference(self):
        if self.reference is not None:
            return self.reference
        return "ECC-Q" if "ECC-Q" in self.methods else None

    def validate(self):
        if not self.methods:
            raise ConfigurationError("no methods selected")
        unknown = [m for m in self.methods if m not in METHODS]
        if unknown:
            raise ConfigurationError(f"unknown method(s): {', '.join(unknown)}")
        if self.reference is not None and self.reference not in self.methods:
            raise ConfigurationError(f"reference method {self.reference} is not among the selected methods")
        if self.variable_kind is VariableKind.PPT24 and "mdSSh" in self.methods:
            raise ConfigurationError("mdSSh is not available for PPT24")
        if self.window_days < 1:
            raise ConfigurationError("window_days must be positive")
        if not 0.0 <= self.failure_threshold <= 1.0:
            raise ConfigurationError("failure_threshold must lie in [0, 1]")
        if self.optimizer not in ("auto", "nelder-mead"):
            raise ConfigurationError(f"unknown optimizer {self.optimizer!r}")
        return self

    @classmethod
    def from_mapping(cls, values):
        names = {f.name: f for f in fields(cls)}
        unknown = sorted(set(values) - set(names))
        if unknown:
            raise ConfigurationError(f"unknown configuration key(s): {', '.join(unknown)}")
        conv = {
            "window_days": int,
            "seed": int,
            "vs_p": float,
            "mdssh_m": int,
            "mdssh_min_count": int,
            "cold_restart_days": int,
            "failure_threshold": float,
            "season_half_width": int,
            "workers": int,
        }
        kw = {}
        for k, v in values.items():
            if v is None:
                continue
            if isinstance(v, str) and k in conv:
                try:
                    v = conv[k](v)
                except ValueError:
                    raise ConfigurationError(f"{k}: cannot parse {v!r}") from None
            kw[k] = v
        try:
            return cls(**kw)
        except ValueError as exc:
            raise ConfigurationError(str(exc)) from None


# ---------------------------------------------------------------------------
# per-station processing


@dataclass
class DayCase:
    day: int
    date: np.datetime64
    obs: np.ndarray
    ensembles: dict
    template_dates: dict


@dataclass
class StationResult:
    station_id: str
    dates: np.ndarray
    scores: dict
    ranks: dict
    pit: list
    same_season: dict
    n_fits: int
    n_failed_fits: int
    n_skipped_days: int


def _physical(kind, dists):
    return SquaredDist(dists) if kind is VariableKind.V10 else dists


def _pit(kind, dists, obs, rng):
    if kind is VariableKind.V10:
        u = dists.cdf(np.sqrt(obs))
    else:
        u = dists.cdf(obs)
    if kind is VariableKind.PPT24:
        # randomised PIT on the point mass at zero
        zero = obs <= 0
        u = np.where(zero, rng.random(obs.shape) * dists.cdf(np.zeros_like(obs)), u)
    return u


def same_season_fraction(template_dates, date, half_width):
    t = day_indices(template_dates)
    t0 = day_indices([date])[0]
    gap = np.abs(t - t0)
    gap = np.minimum(gap, 365 - gap)
    return float(np.mean(gap <= half_width))


def _case_rng(cfg, station_idx, day, *stream):
    return np.random.default_rng([cfg.seed, station_idx, day, *stream])


def iter_station_cases(station, cfg: ExperimentConfig, station_idx, calibration=None, pit_out=None):
    """Yield a :class:`DayCase` per verification day with calibrated, complete data."""
    kind = cfg.variable_kind
    cal = calibration or rolling_calibrate(
        station, kind, cfg.window_days, optimizer=cfg.optimizer, cold_restart_days=cfg.cold_restart_days
    )
    members = station.members
    obs = station.obs
    n_days, n_lead = obs.shape
    k = members.shape[-1]
    fc_ok = np.all(np.isfinite(members), axis=(-1, -2))
    stats = ensemble_stats(np.where(np.isfinite(members), members, 0.0))
    ens_mean = np.where(fc_ok[:, None], stats.all_mean, np.nan)
    ens_var = np.where(fc_ok[:, None], stats.all_var, np.nan)
    need_dep = any(base_method(m) in ("dECC", "mdSSh", "simSSh", "SSh-R", "SSh-Q", "SSh-S") for m in cfg.methods)
    for d in range(cal.first_day, n_days):
        if not cal.ok(d) or not fc_ok[d]:
            continue
        y = obs[d]
        if not np.all(np.isfinite(y)):
            continue
        dists = cal.dist(d)
        phys = _physical(kind, dists)
        if pit_out is not None:
            pit_out.append(_pit(kind, dists, y, _case_rng(cfg, station_idx, d, _PIT_STREAM)))
        raw = members[d].T
        hist = autocorr = None
        if need_dep:
            lo, hi = training_slice(station.dates, d, cfg.window_days)
            hist = HistoricalArchive(obs[lo:hi], ens_mean[lo:hi], ens_var[lo:hi], station.dates[lo:hi])
            if any(base_method(m) == "dECC" for m in cfg.methods):
                autocorr = estimate_error_autocorrelation(ens_mean[lo:hi], obs[lo:hi])
        ensembles, templates = {}, {}
        for label, method in zip(cfg.labels, cfg.methods):
            rng = _case_rng(cfg, station_idx, d, METHODS.index(method))
            ens, tmpl = build_ensemble(method, raw, phys, k, rng, hist, autocorr, stats, d, cfg)
            ensembles[label] = ens
            if tmpl is not None:
                templates[label] = tmpl
        yield DayCase(d, station.dates[d], y, ensembles, templates)


def build_ensemble(method, raw, dists, k, rng, hist, autocorr, stats, day, cfg):
    """Trajectory ensemble (K, L) for one method; also returns template dates, if any."""
    if method == "RAW":
        return raw.copy(), None
    head, _, scheme = method.partition("-")
    if head == "EMOS":
        return independent_baseline(draw_samples(dists, scheme, k, rng)), None
    if head == "ECC":
        samples = draw_samples(dists, scheme, k, rng)
        return ecc_reorder(raw, samples, rng), None
    if method == "dECC":
        return decc(raw, dists, autocorr, rng), None
    if head == "SSh":
        samples = draw_samples(dists, scheme, k, rng)
        idx = ssh_select(hist, k, rng)
    elif method == "mdSSh":
        samples = sample_quantiles(dists, k)
        idx, _ = mdssh_select(dists, hist, k, rng, cfg.mdssh_min_count, cfg.mdssh_m)
    elif method == "simSSh":
        samples = sample_quantiles(dists, k)
        idx = simssh_select(stats.all_mean[day], stats.all_var[day], hist, k)
    else:
        raise UsageError(f"unknown method {method!r}")
    dates = None if hist.dates is None else hist.dates[idx]
    return schaake_reorder(samples, hist.obs[idx], rng), dates


def score_case(ens, y, p, rng):
    med = l1_median(ens)
    return (
        energy_score(ens, y),
        variogram_score(ens, y, p),
        euclidean_error(med, y),
        average_rank(ens, y, rng),
    )


def _empty_scores(labels):
    return {m: {s: [] for s in SCORES} for m in labels}, {m: [] for m in labels}


def _accumulate(case, cfg, station_idx, scores, ranks):
    for label, method in zip(cfg.labels, cfg.methods):
        rng = _case_rng(cfg, station_idx, case.day, METHODS.index(method), 1)
        es, vs, ee, r = score_case(case.ensembles[label], case.obs, cfg.vs_p, rng)
        scores[label]["ES"].append(es)
        scores[label]["VS"].append(vs)
        scores[label]["EE"].append(ee)
        ranks[label].append(r)


def process_station(station, cfg: ExperimentConfig, station_idx) -> StationResult:
    kind = cfg.variable_kind
    cal = rolling_calibrate(station, kind, cfg.window_days, optimizer=cfg.optimizer, cold_restart_days=cfg.cold_restart_days)
    scores, ranks = _empty_scores(cfg.labels)
    pit, dates = [], []
    fractions = {m: [] for m in cfg.labels if base_method(m) in TEMPLATE_METHODS}
    for case in iter_station_cases(station, cfg, station_idx, cal, pit):
        dates.append(case.date)
        _accumulate(case, cfg, station_idx, scores, ranks)
        for label, tmpl in case.template_dates.items():
            fractions[label].append(same_season_fraction(tmpl, case.date, cfg.season_half_width))
    n_lead = station.obs.shape[1]
    n_verif = max(station.obs.shape[0] - cal.first_day, 0)
    return StationResult(
        station.station_id,
        np.array(dates, dtype="datetime64[D]"),
        {m: {s: np.asarray(v) for s, v in d.items()} for m, d in scores.items()},
        {m: np.asarray(v, dtype=int) for m, v in ranks.items()},
        pit,
        {m: float(np.mean(v)) if v else np.nan for m, v in fractions.items()},
        n_verif * n_lead,
        cal.n_failed,
        n_verif - len(dates),
    )


def _station_task(args):
    station, cfg, idx = args
    return process_station(station, cfg, idx)


# ---------------------------------------------------------------------------
# reports


@dataclass
class ExperimentReport:
    config: ExperimentConfig
    stations: list
    n_members: int = 52
    notes: list = field(default_factory=list)

    @property
    def labels(self):
        return self.config.labels

    @property
    def reference(self):
        return self.config.resolved_reference

    @property
    def failure_fraction(self):
        fits = sum(s.n_fits for s in self.stations)
        return sum(s.n_failed_fits for s in self.stations) / fits if fits else 0.0

    def mean_score(self, method, score, station=None):
        vals = [s.scores[method][score] for s in self.stations if station is None or s.station_id == station]
        v = np.concatenate(vals) if vals else np.array([])
        return float(v.mean()) if v.size else np.nan

    def reliability(self, method, station=None):
        counts = None
        for s in self.stations:
            if station is not None and s.station_id != station:
                continue
            c = rank_histogram(s.ranks[method], self.n_members)
            counts = c if counts is None else counts + c
        if counts is None or counts.sum() == 0:
            return np.nan, counts
        return reliability_index(counts), counts

    def skill(self, method, score, station=None):
        ref = self.reference
        if ref is None:
            return np.nan
        try:
            return skill_score(self.mean_score(method, score, station), self.mean_score(ref, score, station))
        except UndefinedSkillError:
            return np.nan

    def dm(self, method, score, station):
        ref = self.reference
        s = next(x for x in self.stations if x.station_id == station)
        try:
            return dm_test(s.scores[method][score], s.scores[ref][score])
        except DegenerateTestError:
            return None

    def pit_ks(self):
        rows = []
        for s in self.stations:
            if not s.pit:
                continue
            u = np.vstack(s.pit)
            for j in range(u.shape[1]):
                res = kstest(u[:, j], "uniform")
                rows.append((s.station_id, j + 1, u.shape[0], float(res.statistic), float(res.pvalue)))
        return rows

    # tables

    def score_rows(self):
        rows = []
        for s in self.stations:
            for m in self.labels:
                ri, _ = self.reliability(m, s.station_id)
                rows.append([s.station_id, m, s.dates.size] + [self.mean_score(m, x, s.station_id) for x in SCORES] + [ri])
        for m in self.labels:
            ri, _ = self.reliability(m)
            n = sum(s.dates.size for s in self.stations)
            rows.append(["ALL", m, n] + [self.mean_score(m, x) for x in SCORES] + [ri])
        return ["station", "method", "n", "ES", "VS", "EE", "RI"], rows

    def skill_rows(self):
        if self.reference is None:
            return ["station", "method", "reference", "ESS", "VSS", "EES"], []
        rows = []
        for st in [s.station_id for s in self.stations] + [None]:
            for m in self.labels:
                rows.append([st or "ALL", m, self.reference] + [self.skill(m, x, st) for x in SCORES])
        return ["station", "method", "reference", "ESS", "VSS", "EES"], rows

    def dm_rows(self):
        header = ["station", "method", "reference", "score", "n", "t", "p_value", "decision", "small_sample"]
        if self.reference is None:
            return header, []
        rows = []
        for s in self.stations:
            for m in self.labels:
                if m == self.reference:
                    continue
                for x in SCORES:
                    r = self.dm(m, x, s.station_id)
                    if r is None:
                        rows.append([s.station_id, m, self.reference, x, s.dates.size, np.nan, np.nan, "degenerate", s.dates.size < 30])
                    else:
                        rows.append([s.station_id, m, self.reference, x, r.n, r.statistic, r.p_value, r.decision, r.small_sample])
        return header, rows

    def rank_rows(self):
        rows = []
        for s in self.stations:
            for m in self.labels:
                _, c = self.reliability(m, s.station_id)
                if c is None:
                    continue
                rows.extend([s.station_id, m, r + 1, int(n)] for r, n in enumerate(c))
        return ["station", "method", "rank", "count"], rows

    def series_rows(self):
        rows = []
        for s in self.stations:
            for m in self.labels:
                for i, date in enumerate(s.dates):
                    rows.append([s.station_id, m, str(date)] + [s.scores[m][x][i] for x in SCORES])
        return ["station", "method", "init_date", "ES", "VS", "EE"], rows

    def template_rows(self):
        rows = []
        for s in self.stations:
            for m, v in s.same_season.items():
                rows.append([s.station_id, m, v])
        return ["station", "method", "same_season_fraction"], rows

    def pit_rows(self):
        return ["station", "lead", "n", "ks_statistic", "ks_pvalue"], self.pit_ks()

    def summary(self):
        lines = [
            f"variable: {self.config.variable_kind.value}",
            f"stations: {len(self.stations)}",
            f"verification cases: {sum(s.dates.size for s in self.stations)}",
            f"failed fits: {sum(s.n_failed_fits for s in self.stations)} ({self.failure_fraction:.2%})",
            f"reference: {self.reference or '(none)'}",
            "",
        ]
        for x in SCORES:
            order = sorted(self.labels, key=lambda m: self.mean_score(m, x))
            lines.append(f"ranking by mean {x}:")
            for i, m in enumerate(order, 1):
                sk = self.skill(m, x)
                extra = "" if np.isnan(sk) else f"  skill {sk:+.4f}"
                lines.append(f"  {i:2d}. {m:<8s} {self.mean_score(m, x):.6g}{extra}")
            lines.append("")
        lines.extend(self.notes)
        return "\n".join(lines).rstrip() + "\n"

    def write(self, outdir):
        outdir = Path(outdir)
        outdir.mkdir(parents=True, exist_ok=True)
        tables = {
            "scores.csv": self.score_rows(),
            "skill.csv": self.skill_rows(),
            "dm.csv": self.dm_rows(),
            "rank_hist.csv": self.rank_rows(),
            "series.csv": self.series_rows(),
            "pit.csv": self.pit_rows(),
            "templates.csv": self.template_rows(),
        }
        for name, (header, rows) in tables.items():
            write_table(outdir / name, header, rows)
        (outdir / "summary.txt").write_text(self.summary())
        return outdir


def _cell(v):
    if isinstance(v, (float, np.floating)):
        return "" if np.isnan(v) else repr(float(v))
    return str(v)


def write_table(path, header, rows):
    with Path(path).open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for r in rows:
            w.writerow([_cell(v) for v in r])


# ---------------------------------------------------------------------------
# entry points


def _check_archive(archive: ForecastArchive, cfg):
    if archive.kind is not cfg.variable_kind:
        raise ConfigurationError(f"archive holds {archive.kind.value}, configuration expects {cfg.variable_kind.value}")
    if len(archive) == 0:
        raise ConfigurationError("archive is empty")
    for sid in archive.station_ids():
        st = archive.stations[sid]
        span = int((st.dates[-1] - st.dates[0]).astype(int)) + 1 if st.dates.size else 0
        if span <= cfg.window_days + st.n_lead:
            raise ConfigurationError(
                f"station {sid}: archive spans {span} days, need more than window_days + L = {cfg.window_days + st.n_lead}"
            )


def run_experiment(cfg: ExperimentConfig, archive: ForecastArchive) -> ExperimentReport:
    """Full pipeline over all stations; deterministic given ``cfg.seed``."""
    cfg.validate()
    _check_archive(archive, cfg)
    ids = archive.station_ids()
    tasks = [(archive.stations[sid], cfg, i) for i, sid in enumerate(ids)]
    if cfg.workers > 1 and len(tasks) > 1:
        with ProcessPoolExecutor(max_workers=cfg.workers) as ex:
            results = list(ex.map(_station_task, tasks))
    else:
        results = [_station_task(t) for t in tasks]
    report = ExperimentReport(cfg, results, next(iter(archive.stations.values())).members.shape[-1])
    for r in results:
        if r.n_failed_fits:
            log.warning("station %s: %d of %d fits failed", r.station_id, r.n_failed_fits, r.n_fits)
    return report


def calibration_rows(cfg: ExperimentConfig, archive: ForecastArchive):
    """(station, init_date, lead, family, loc, scale, error) per verification case."""
    cfg.validate()
    _check_archive(archive, cfg)
    family = {VariableKind.T2M: "gaussian", VariableKind.V10: "truncnorm_sqrt", VariableKind.PPT24: "censored_gev"}
    rows, n_fits, n_failed = [], 0, 0
    for sid in archive.station_ids():
        st = archive.stations[sid]
        cal = rolling_calibrate(st, cfg.variable_kind, cfg.window_days, optimizer=cfg.optimizer, cold_restart_days=cfg.cold_restart_days)
        n_fits += max(st.obs.shape[0] - cal.first_day, 0) * st.n_lead
        n_failed += cal.n_failed
        for d in range(cal.first_day, st.dates.size):
            for j in range(st.n_lead):
                err = cal.errors.get((d, j + 1))
                rows.append(
                    [sid, str(st.dates[d]), j + 1, family[cfg.variable_kind], cal.loc[d, j], cal.scale[d, j],
                     "" if err is None else f"{type(err).__name__}: {err}"]
                )
    header = ["station", "init_date", "lead_days", "family", "location", "scale", "error"]
    return header, rows, (n_failed / n_fits if n_fits else 0.0)


def ensemble_rows(cfg: ExperimentConfig, archive: ForecastArchive):
    """Post-processed trajectory ensembles, one row per (station, date, method, member)."""
    cfg.validate()
    _check_archive(archive, cfg)
    n_lead = next(iter(archive.stations.values())).n_lead
    header = ["station", "init_date", "method", "member"] + [f"lead_{j:02d}" for j in range(1, n_lead + 1)]

    def rows():
        for i, sid in enumerate(archive.station_ids()):
            for case in iter_station_cases(archive.stations[sid], cfg, i):
                for label in cfg.labels:
                    for k, traj in enumerate(case.ensembles[label], 1):
                        yield [sid, str(case.date), label, k] + [float(v) for v in traj]

    return header, rows()


def read_ensembles(path):
    """Inverse of :func:`ensemble_rows`: {(station, date): {method: (K, L) array}}."""
    out = {}
    with Path(path).open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or header[:4] != ["station", "init_date", "method", "member"]:
            raise UsageError(f"{path}: not an ensemble table")
        for lineno, row in enumerate(reader, 2):
            if not row:
                continue
            try:
                key = (row[0], np.datetime64(row[1], "D"))
                vals = [float(v) for v in row[4:]]
            except ValueError as exc:
                raise UsageError(f"{path}: line {lineno}: {exc}") from None
            out.setdefault(key, {}).setdefault(row[2], []).append(vals)
    return {key: {m: np.array(v) for m, v in d.items()} for key, d in out.items()}


def verify_ensembles(cfg: ExperimentConfig, archive: ForecastArchive, ensembles) -> ExperimentReport:
    """Score saved ensembles against archive observations (same seeds as :func:`run_experiment`)."""
    ids = archive.station_ids()
    methods = sorted({m for d in ensembles.values() for m in d}, key=lambda m: (METHODS.index(base_method(m)), m))
    unknown = [m for m in methods if base_method(m) not in METHODS]
    if unknown:
        raise UsageError(f"unknown method(s) in ensemble table: {unknown}")
    cfg = ExperimentConfig.from_mapping({**_as_mapping(cfg), "methods": tuple(base_method(m) for m in methods)})
    cfg.validate()
    results = []
    k = None
    for i, sid in enumerate(ids):
        st = archive.stations[sid]
        keys = sorted(date for (s, date) in ensembles if s == sid)
        scores, ranks = _empty_scores(cfg.labels)
        dates = []
        for date in keys:
            per = ensembles[(sid, date)]
            if set(per) != set(cfg.labels):
                continue
            d = int(np.searchsorted(st.dates, date))
            if d >= st.dates.size or st.dates[d] != date:
                raise UsageError(f"{sid} {date}: not in the archive")
            y = st.obs[d]
            if not np.all(np.isfinite(y)):
                continue
            k = k or next(iter(per.values())).shape[0]
            _accumulate(DayCase(d, date, y, per, {}), cfg, i, scores, ranks)
            dates.append(date)
        results.append(
            StationResult(
                sid,
                np.array(dates, dtype="datetime64[D]"),
                {m: {s: np.asarray(v) for s, v in dd.items()} for m, dd in scores.items()},
                {m: np.asarray(v, dtype=int) for m, v in ranks.items()},
                [],
                {},
                0,
                0,
                0,
            )
        )
    return ExperimentReport(cfg, results, k or 52)


def _as_mapping(cfg):
    return {f.name: getattr(cfg, f.name) for f in fields(cfg)}
