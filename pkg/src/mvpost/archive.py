"""In-memory forecast archive and its delimited text format.

One row per (station, init date, lead):

    station_id,init_date,lead_days,obs,hres,ctrl,ens_01,...,ens_50

Missing observations are empty fields. Floats are written with 17
significant digits so a write/read cycle is bit-exact.
"""

from __future__ import annotations

import csv
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .emos import N_ENS, EnsembleForecast, VariableKind
from .errors import ArchiveParseError

HEADER = ["station_id", "init_date", "lead_days", "obs", "hres", "ctrl"] + [f"ens_{i:02d}" for i in range(1, N_ENS + 1)]


@dataclass
class StationData:
    """Forecasts of one station on a daily grid: arrays indexed (day, lead[, member])."""

    station_id: str
    dates: np.ndarray
    obs: np.ndarray
    hres: np.ndarray
    ctrl: np.ndarray
    ens: np.ndarray

    def __post_init__(self):
        # fixed memory layout keeps reductions bit-identical across processes
        self.dates = np.asarray(self.dates, dtype="datetime64[D]")
        for name in ("obs", "hres", "ctrl", "ens"):
            setattr(self, name, np.ascontiguousarray(getattr(self, name), dtype=float))

    @property
    def n_lead(self):
        return self.obs.shape[1]

    @property
    def members(self):
        return np.concatenate([self.hres[..., None], self.ctrl[..., None], self.ens], axis=-1)


@dataclass
class ForecastArchive:
    kind: VariableKind
    stations: dict = field(default_factory=dict)

    def __post_init__(self):
        self.kind = VariableKind(self.kind)

    def __len__(self):
        return len(self.stations)

    def station_ids(self):
        return sorted(self.stations)

    def records(self):
        """Iterate over :class:`EnsembleForecast` rows in station/date/lead order."""
        for sid in self.station_ids():
            st = self.stations[sid]
            for d, date in enumerate(st.dates):
                for j in range(st.n_lead):
                    if not np.isfinite(st.hres[d, j]):
                        continue
                    yield EnsembleForecast(sid, date.astype(object), j + 1, st.hres[d, j], st.ctrl[d, j], st.ens[d, j], st.obs[d, j])

    @classmethod
    def from_records(cls, kind, records, n_lead=None):
        by_station = {}
        for r in records:
            by_station.setdefault(r.station_id, []).append(r)
        stations = {}
        for sid, rows in by_station.items():
            dates = np.array(sorted({np.datetime64(r.init_date, "D") for r in rows}), dtype="datetime64[D]")
            lead = n_lead or max(r.lead_days for r in rows)
            n = dates.size
            obs = np.full((n, lead), np.nan)
            hres = np.full((n, lead), np.nan)
            ctrl = np.full((n, lead), np.nan)
            ens = np.full((n, lead, N_ENS), np.nan)
            pos = np.searchsorted(dates, np.array([np.datetime64(r.init_date, "D") for r in rows]))
            for i, r in zip(pos, rows):
                j = r.lead_days - 1
                obs[i, j], hres[i, j], ctrl[i, j], ens[i, j] = r.obs, r.hres, r.ctrl, r.ens
            stations[sid] = StationData(sid, dates, obs, hres, ctrl, ens)
        return cls(kind, stations)


def _fmt(v):
    return "" if not np.isfinite(v) else repr(float(v))


def write_archive(path, archive: ForecastArchive):
    path = Path(path)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(HEADER)
        for sid in archive.station_ids():
            st = archive.stations[sid]
            for d, date in enumerate(st.dates):
                for j in range(st.n_lead):
                    if not np.isfinite(st.hres[d, j]):
                        continue
                    w.writerow(
                        [sid, str(date), j + 1, _fmt(st.obs[d, j]), _fmt(st.hres[d, j]), _fmt(st.ctrl[d, j])]
                        + [_fmt(v) for v in st.ens[d, j]]
                    )


def _parse_row(row, lineno, kind):
    if len(row) != len(HEADER):
        n_ens = len(row) - 6
        raise ValueError(f"line {lineno}: expected {N_ENS} ENS members, got {max(n_ens, 0)}")
    sid, date_s, lead_s, obs_s, *vals = row
    try:
        date = np.datetime64(date_s, "D")
    except ValueError:
        raise ValueError(f"line {lineno}: bad init_date {date_s!r}") from None
    try:
        lead = int(lead_s)
    except ValueError:
        raise ValueError(f"line {lineno}: bad lead_days {lead_s!r}") from None
    if lead < 1:
        raise ValueError(f"line {lineno}: lead_days must be >= 1")
    try:
        obs = float(obs_s) if obs_s.strip() else np.nan
        members = np.array([float(v) for v in vals])
    except ValueError as exc:
        raise ValueError(f"line {lineno}: {exc}") from None
    if not np.all(np.isfinite(members)):
        raise ValueError(f"line {lineno}: non-finite member value")
    if kind is not VariableKind.T2M and (np.any(members < 0) or obs < 0):
        raise ValueError(f"line {lineno}: negative value for {kind.value}")
    return EnsembleForecast(sid, date.astype(object), lead, members[0], members[1], members[2:], obs)


def ingest(path, kind, strict=True, n_lead=None):
    """Read and validate an archive file.

    With ``strict`` any invalid row raises :class:`ArchiveParseError` listing
    every problem; otherwise invalid rows are skipped with a warning.
    """
    kind = VariableKind(kind)
    path = Path(path)
    problems, records = [], []
    with path.open(newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None:
            warnings.warn(f"{path}: empty archive file", stacklevel=2)
            return ForecastArchive(kind)
        if [h.strip() for h in header] != HEADER:
            raise ArchiveParseError([f"line 1: header does not match the archive schema"])
        for lineno, row in enumerate(reader, start=2):
            if not row:
                continue
            try:
                records.append(_parse_row(row, lineno, kind))
            except ValueError as exc:
                problems.append(str(exc))
    if problems:
        if strict:
            raise ArchiveParseError(problems)
        warnings.warn(f"{path}: skipped {len(problems)} invalid row(s)", stacklevel=2)
    if not records:
        warnings.warn(f"{path}: archive contains no forecasts", stacklevel=2)
    return ForecastArchive.from_records(kind, records, n_lead)
