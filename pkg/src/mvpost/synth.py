"""Synthetic forecast archives with known temporal dependence.

For every station and init day a predictable centre trajectory (seasonal
cycle evaluated at the valid date plus an anomaly) is perturbed twice: once
to give the observation and once per member to give the ensemble. Both
perturbations share the lead-time correlation ``truth_corr``, so with
``ensemble_bias=0`` and ``spread_deflation=1`` the observation is one more
exchangeable draw and the raw ensemble is calibrated. HRES noise has half
the variance of the other members.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .archive import ForecastArchive, StationData
from .emos import N_ENS, N_MEMBERS, VariableKind, day_indices
from .errors import ConfigurationError

# level, error sd, signal sd, seasonal amplitude on the latent (pre-transform) scale
_KIND_DEFAULTS = {
    VariableKind.T2M: (10.0, 1.5, 3.0, 8.0),
    VariableKind.V10: (2.2, 0.35, 0.45, 0.3),
    VariableKind.PPT24: (0.0, 2.0, 2.0, 0.5),
}


def ar1_corr(n_lead, rho):
    """Correlation matrix rho^|i-j| of a stationary AR(1) process."""
    idx = np.arange(n_lead)
    return float(rho) ** np.abs(idx[:, None] - idx[None, :])


def _corr_root(corr):
    c = np.asarray(corr, dtype=float)
    if c.ndim != 2 or c.shape[0] != c.shape[1]:
        raise ConfigurationError("truth_corr must be square")
    if not np.allclose(c, c.T, atol=1e-12) or not np.allclose(np.diag(c), 1.0, atol=1e-12):
        raise ConfigurationError("truth_corr must be symmetric with unit diagonal")
    vals, vecs = np.linalg.eigh(c)
    if vals.min() < -1e-10:
        raise ConfigurationError("truth_corr is not positive semidefinite")
    return vecs * np.sqrt(np.clip(vals, 0.0, None))


@dataclass
class ScenarioConfig:
    variable_kind: VariableKind = VariableKind.T2M
    n_stations: int = 5
    n_days: int = 1100
    L: int = 10
    K: int = N_MEMBERS
    truth_corr: np.ndarray | None = None
    ensemble_bias: float = 0.0
    spread_deflation: float = 1.0
    seasonal_amplitude: float | None = None
    seed: int = 0
    start_date: str = "2002-01-01"
    level: float | None = None
    error_sd: float | None = None
    error_growth: float = 0.08
    signal_sd: float | None = None
    spread_variability: float = 0.3
    missing_obs_fraction: float = 0.0
    station_ids: list = field(default_factory=list)

    def __post_init__(self):
        self.variable_kind = VariableKind(self.variable_kind)
        if self.truth_corr is None:
            self.truth_corr = ar1_corr(self.L, 0.7)
        self.truth_corr = np.asarray(self.truth_corr, dtype=float)
        lvl, err, sig, amp = _KIND_DEFAULTS[self.variable_kind]
        self.seasonal_amplitude = amp if self.seasonal_amplitude is None else self.seasonal_amplitude
        self.level = lvl if self.level is None else self.level
        self.error_sd = err if self.error_sd is None else self.error_sd
        self.signal_sd = sig if self.signal_sd is None else self.signal_sd

    def validate(self):
        if self.K < 2:
            raise ConfigurationError("K must be at least 2")
        if self.K != N_MEMBERS:
            raise ConfigurationError(f"archive format holds exactly {N_MEMBERS} members")
        if not 0.0 < self.spread_deflation <= 1.0:
            raise ConfigurationError("spread_deflation must lie in (0, 1]")
        if self.truth_corr.shape != (self.L, self.L):
            raise ConfigurationError("truth_corr must be L x L")
        if self.n_stations < 1 or self.n_days < 1:
            raise ConfigurationError("need at least one station and one day")
        return _corr_root(self.truth_corr)


def _transform(kind, latent):
    if kind is VariableKind.V10:
        return np.maximum(latent, 0.0) ** 2
    if kind is VariableKind.PPT24:
        return np.maximum(latent, 0.0)
    return latent


def _station(cfg: ScenarioConfig, root, rng, sid):
    n, L = cfg.n_days, cfg.L
    dates = np.datetime64(cfg.start_date, "D") + np.arange(n)
    level = cfg.level + (rng.normal(0.0, 0.3 * cfg.signal_sd) if cfg.variable_kind is not VariableKind.PPT24 else 0.0)
    phase = rng.uniform(0.0, 2.0 * np.pi)
    valid_t = day_indices((dates[:, None] + np.arange(1, L + 1)[None, :]).ravel()).reshape(n, L)
    seasonal = level + cfg.seasonal_amplitude * np.sin(2.0 * np.pi * valid_t / 365.0 + phase)
    anomaly = cfg.signal_sd * rng.standard_normal((n, L)) @ root.T
    centre = seasonal + anomaly
    day_scale = np.exp(cfg.spread_variability * rng.standard_normal(n))
    sd = cfg.error_sd * (1.0 + cfg.error_growth * np.arange(L))[None, :] * day_scale[:, None]

    def noise(*lead_shape):
        z = rng.standard_normal((n,) + lead_shape + (L,)) @ root.T
        return np.moveaxis(z, -1, 1) if lead_shape else z

    obs = centre + sd * noise()
    spread = cfg.spread_deflation * sd
    base = centre + cfg.ensemble_bias
    hres = base + spread / np.sqrt(2.0) * noise()
    ctrl = base + spread * noise()
    ens = base[..., None] + spread[..., None] * noise(N_ENS)
    kind = cfg.variable_kind
    obs, hres, ctrl, ens = (_transform(kind, a) for a in (obs, hres, ctrl, ens))
    if cfg.missing_obs_fraction > 0:
        obs[rng.random(obs.shape) < cfg.missing_obs_fraction] = np.nan
    return StationData(sid, dates, obs, hres, ctrl, ens)


def generate_archive(cfg: ScenarioConfig) -> ForecastArchive:
    """Deterministic synthetic archive; one random substream per station."""
    root = cfg.validate()
    ids = list(cfg.station_ids) or [f"S{i:03d}" for i in range(cfg.n_stations)]
    if len(ids) != cfg.n_stations:
        raise ConfigurationError("station_ids length differs from n_stations")
    streams = np.random.SeedSequence(cfg.seed).spawn(cfg.n_stations)
    stations = {sid: _station(cfg, root, np.random.default_rng(ss), sid) for sid, ss in zip(ids, streams)}
    return ForecastArchive(cfg.variable_kind, stations)


def headline_scenario(**overrides) -> ScenarioConfig:
    """Biased, underdispersive T2M ensemble with AR(1) truth (lag-1 correlation 0.7)."""
    kw = dict(
        variable_kind=VariableKind.T2M,
        n_stations=20,
        n_days=1500,
        L=10,
        truth_corr=ar1_corr(10, 0.7),
        ensemble_bias=1.0,
        spread_deflation=0.7,
        seed=2024,
    )
    kw.update(overrides)
    if "L" in overrides and "truth_corr" not in overrides:
        kw["truth_corr"] = ar1_corr(kw["L"], 0.7)
    return ScenarioConfig(**kw)


def seasonal_scenario(**overrides) -> ScenarioConfig:
    """T2M with a seasonal cycle much larger than the day-to-day signal."""
    kw = dict(
        variable_kind=VariableKind.T2M,
        n_stations=10,
        n_days=1100,
        L=10,
        seasonal_amplitude=15.0,
        signal_sd=1.5,
        ensemble_bias=0.5,
        spread_deflation=0.8,
        seed=77,
    )
    kw.update(overrides)
    return ScenarioConfig(**kw)
