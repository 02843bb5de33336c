"""Univariate EMOS calibration for temperature, wind speed and precipitation.

Each lead time is calibrated independently. Coefficients enter the link
functions squared, so the optimiser works on unconstrained reals.
"""

from __future__ import annotations

import datetime as dt
import logging
from dataclasses import dataclass, field
from enum import Enum

import numpy as np
from scipy.optimize import minimize
from scipy.special import ndtr

from .dists import (
    PPT24_SHAPE,
    CensoredGevDist,
    GaussianDist,
    TruncGaussianDist,
    crps_censored_gev,
    crps_censored_gev_grad,
    crps_gaussian,
    crps_trunc_gaussian,
    crps_trunc_gaussian_grad,
)
from .errors import DegenerateClimateError, EstimationError, NoModelError, UsageError

log = logging.getLogger(__name__)

N_ENS = 50
N_MEMBERS = 52
PERIOD = 365.0


class VariableKind(str, Enum):
    T2M = "T2M"
    V10 = "V10"
    PPT24 = "PPT24"


DEFAULT_WINDOW = {VariableKind.T2M: 720, VariableKind.V10: 365, VariableKind.PPT24: 1816}


@dataclass(frozen=True)
class EnsembleForecast:
    station_id: str
    init_date: dt.date
    lead_days: int
    hres: float
    ctrl: float
    ens: np.ndarray
    obs: float = np.nan

    def __post_init__(self):
        ens = np.asarray(self.ens, dtype=float)
        if ens.shape != (N_ENS,):
            raise UsageError(f"expected {N_ENS} exchangeable members, got {ens.size}")
        object.__setattr__(self, "ens", ens)

    @property
    def members(self):
        return np.concatenate([[self.hres, self.ctrl], self.ens])


@dataclass(frozen=True)
class EnsembleStats:
    ens_mean: np.ndarray
    ens_var: np.ndarray
    all_mean: np.ndarray
    all_var: np.ndarray
    md: np.ndarray
    md_sqrt: np.ndarray
    pi0: np.ndarray


def mean_difference(x):
    """(1/K^2) sum_{k,l} |x_k - x_l| along the last axis, via the sorted form."""
    x = np.sort(np.asarray(x, dtype=float), axis=-1)
    k = x.shape[-1]
    w = 2.0 * np.arange(1, k + 1) - k - 1.0
    return 2.0 * (x @ w) / k**2


def ensemble_stats(members):
    """Summary statistics of ``(..., 52)`` member arrays ordered HRES, CTRL, ENS."""
    members = np.asarray(members, dtype=float)
    ens = members[..., 2:]
    with np.errstate(invalid="ignore"):
        root = np.sqrt(np.maximum(members, 0.0))
    return EnsembleStats(
        ens_mean=ens.mean(axis=-1),
        ens_var=ens.var(axis=-1),
        all_mean=members.mean(axis=-1),
        all_var=members.var(axis=-1),
        md=mean_difference(members),
        md_sqrt=mean_difference(root),
        pi0=(members == 0.0).mean(axis=-1),
    )


def compute_stats(fc: EnsembleForecast) -> EnsembleStats:
    return ensemble_stats(fc.members)


# ---------------------------------------------------------------------------
# seasonal regression


@dataclass(frozen=True)
class SeasonalFit:
    c0: float
    c1: float
    c2: float


def day_index(date) -> int:
    """Day of year on a 365-day calendar; 29 February maps to 365."""
    return int(day_indices([date])[0])


def day_indices(dates):
    d = np.asarray(dates, dtype="datetime64[D]")
    year = d.astype("datetime64[Y]")
    raw = (d - year.astype("datetime64[D]")).astype(np.int64) + 1
    y = year.astype(np.int64) + 1970
    leap = (y % 4 == 0) & ((y % 100 != 0) | (y % 400 == 0))
    doy = np.where(leap & (raw > 60), raw - 1, raw)
    return np.where(leap & (raw == 60), 365, doy).astype(float)


def _harmonics(t):
    w = 2.0 * np.pi * np.asarray(t, dtype=float) / PERIOD
    return np.column_stack([np.ones_like(w), np.sin(w), np.cos(w)])


def fit_seasonal_many(t, ys):
    """Least-squares sinusoid coefficients for each column of ``ys``; shape (3, m)."""
    t = np.asarray(t, dtype=float)
    ys = np.asarray(ys, dtype=float)
    if t.size < 3:
        raise EstimationError("seasonal fit needs at least 3 points")
    coef, *_ = np.linalg.lstsq(_harmonics(t), ys, rcond=None)
    return coef


def fit_seasonal(t, y) -> SeasonalFit:
    t = np.asarray(t, dtype=float)
    y = np.asarray(y, dtype=float)
    ok = np.isfinite(y)
    coef = fit_seasonal_many(t[ok], y[ok])
    return SeasonalFit(*map(float, coef))


def predict_seasonal(fit: SeasonalFit, t):
    w = 2.0 * np.pi * np.asarray(t, dtype=float) / PERIOD
    return fit.c0 + fit.c1 * np.sin(w) + fit.c2 * np.cos(w)


@dataclass(frozen=True)
class SeasonalModel:
    """Sinusoid fits for observations, HRES, CTRL and the ENS mean."""

    obs: SeasonalFit
    hres: SeasonalFit
    ctrl: SeasonalFit
    ens_mean: SeasonalFit

    @classmethod
    def from_coef(cls, coef):
        return cls(*(SeasonalFit(*map(float, coef[:, j])) for j in range(4)))

    def predict(self, t):
        return tuple(predict_seasonal(f, t) for f in (self.obs, self.hres, self.ctrl, self.ens_mean))


# ---------------------------------------------------------------------------
# link functions


@dataclass(frozen=True)
class EmosParams:
    variable_kind: VariableKind
    a: tuple
    b: tuple

    def __post_init__(self):
        kind = VariableKind(self.variable_kind)
        want = 5 if kind is VariableKind.PPT24 else 4
        if len(self.a) != want or len(self.b) != 2:
            raise UsageError(f"{kind.value} needs {want} a-coefficients and 2 b-coefficients")
        object.__setattr__(self, "variable_kind", kind)
        object.__setattr__(self, "a", tuple(float(v) for v in self.a))
        object.__setattr__(self, "b", tuple(float(v) for v in self.b))

    def to_vector(self):
        """Free parameters; T2M has no intercept because the seasonal fit supplies it."""
        a = self.a[1:] if self.variable_kind is VariableKind.T2M else self.a
        return np.array(a + self.b)

    @classmethod
    def from_vector(cls, kind, theta):
        kind = VariableKind(kind)
        theta = [float(v) for v in theta]
        if kind is VariableKind.T2M:
            return cls(kind, tuple([0.0] + theta[:3]), tuple(theta[3:]))
        n_a = 5 if kind is VariableKind.PPT24 else 4
        return cls(kind, tuple(theta[:n_a]), tuple(theta[n_a:]))


def default_params(kind) -> EmosParams:
    kind = VariableKind(kind)
    a = (0.0, 0.1, 0.1, 0.9)
    if kind is VariableKind.PPT24:
        a = a + (0.1,)
    return EmosParams(kind, a, (1.0, 1.0))


@dataclass
class Predictors:
    """Training or forecast covariates in a family-independent layout.

    ``loc = offset + intercept * a0 + slopes @ w**2`` and
    ``scale^2 = b0^2 + b1^2 * spread``; ``target`` is the observation on the
    model scale (square root of wind speed for V10).
    """

    kind: VariableKind
    offset: np.ndarray
    slopes: np.ndarray
    spread: np.ndarray
    target: np.ndarray | None = None


def build_predictors(kind, members, obs=None, t=None, seasonal: SeasonalModel | None = None):
    """Covariates for rows of ``members`` (shape (n, 52))."""
    members = np.atleast_2d(np.asarray(members, dtype=float))
    return predictors_from_stats(kind, members[:, 0], members[:, 1], ensemble_stats(members), obs, t, seasonal)


def predictors_from_stats(kind, hres, ctrl, st: EnsembleStats, obs=None, t=None, seasonal=None):
    kind = VariableKind(kind)
    target = None if obs is None else np.asarray(obs, dtype=float).reshape(-1)
    if kind is VariableKind.T2M:
        if seasonal is None or t is None:
            raise UsageError("T2M predictors need seasonal fits and day indices")
        y_hat, h_hat, c_hat, e_hat = seasonal.predict(np.asarray(t, dtype=float).reshape(-1))
        slopes = np.column_stack([hres - h_hat, ctrl - c_hat, st.ens_mean - e_hat])
        return Predictors(kind, np.broadcast_to(y_hat, hres.shape).astype(float), slopes, st.all_var, target)
    zeros = np.zeros(hres.shape)
    if kind is VariableKind.V10:
        slopes = np.sqrt(np.maximum(np.column_stack([hres, ctrl, st.ens_mean]), 0.0))
        if target is not None:
            target = np.sqrt(np.maximum(target, 0.0))
        return Predictors(kind, zeros, slopes, st.md_sqrt, target)
    slopes = np.column_stack([hres, ctrl, st.ens_mean, st.pi0])
    return Predictors(kind, zeros, slopes, st.md, target)


def _stats_rows(st: EnsembleStats, rows, j):
    return EnsembleStats(*(getattr(st, f)[rows, j] for f in EnsembleStats.__dataclass_fields__))


def _link(theta, X: Predictors):
    if X.kind is VariableKind.T2M:
        a0, w, b = 0.0, theta[:3], theta[3:]
    else:
        a0, w, b = theta[0], theta[1:-2], theta[-2:]
    loc = X.offset + a0 + X.slopes @ (w * w)
    var = b[0] ** 2 + b[1] ** 2 * X.spread
    return loc, var


def make_dist(kind, loc, scale):
    kind = VariableKind(kind)
    if kind is VariableKind.T2M:
        return GaussianDist(loc, scale)
    if kind is VariableKind.V10:
        return TruncGaussianDist(loc, scale)
    return CensoredGevDist(loc, scale, PPT24_SHAPE)


def emos_predictive(params: EmosParams, fc: EnsembleForecast, seasonal: SeasonalModel | None = None, t=None):
    """Predictive distribution for one forecast; V10 lives on the square-root scale."""
    kind = params.variable_kind
    if kind is VariableKind.T2M and (seasonal is None or t is None):
        raise UsageError("T2M requires seasonal fits and a day index")
    if kind is not VariableKind.T2M and seasonal is not None:
        raise UsageError("seasonal fits apply to T2M only")
    X = build_predictors(kind, fc.members[None, :], t=None if t is None else [t], seasonal=seasonal)
    return predictive_from_predictors(params, X)[0]


def predictive_from_predictors(params: EmosParams, X: Predictors):
    if params.variable_kind is not X.kind:
        raise UsageError("parameter kind does not match predictors")
    loc, var = _link(params.to_vector(), X)
    scale = np.sqrt(var)
    if not (np.all(np.isfinite(loc)) and np.all(np.isfinite(scale)) and np.all(scale > 0)):
        raise EstimationError("link function produced non-finite or zero-scale parameters")
    return make_dist(X.kind, loc, scale)


# ---------------------------------------------------------------------------
# estimation


def mean_crps(theta, X: Predictors):
    loc, var = _link(theta, X)
    if np.any(~(var > 0)):
        return np.inf
    scale = np.sqrt(var)
    if X.kind is VariableKind.T2M:
        vals = crps_gaussian(loc, scale, X.target)
    elif X.kind is VariableKind.V10:
        with np.errstate(all="ignore"):
            vals = crps_trunc_gaussian(loc, scale, X.target)
    else:
        with np.errstate(all="ignore"):
            vals = crps_censored_gev(loc, scale, PPT24_SHAPE, X.target)
    out = float(vals.mean())
    return out if np.isfinite(out) else np.inf


_INV_SQRT_PI = 1.0 / np.sqrt(np.pi)
_SQRT_2_OVER_PI = np.sqrt(2.0 / np.pi)


def _mean_crps_and_grad_gaussian(theta, X: Predictors):
    w, b0, b1 = theta[:3], theta[3], theta[4]
    var = b0 * b0 + b1 * b1 * X.spread
    if not var.min() > 0:
        return np.inf, np.zeros_like(theta)
    s = np.sqrt(var)
    r = X.target - (X.offset + X.slopes @ (w * w))
    z = r / s
    p2 = 2.0 * ndtr(z) - 1.0
    dens = _SQRT_2_OVER_PI * np.exp(-0.5 * z * z) - _INV_SQRT_PI
    n = r.size
    grad = np.empty(5)
    grad[:3] = -2.0 * w * (p2 @ X.slopes) / n
    gs = dens / s
    grad[3] = b0 * gs.sum() / n
    grad[4] = b1 * (gs @ X.spread) / n
    return float((r @ p2 + s @ dens) / n), grad


def _mean_crps_and_grad_location(theta, X: Predictors):
    """Objective and gradient for the V10 and PPT24 links (free intercept a0)."""
    a0, w, b0, b1 = theta[0], theta[1:-2], theta[-2], theta[-1]
    var = b0 * b0 + b1 * b1 * X.spread
    if not var.min() > 0:
        return np.inf, np.zeros_like(theta)
    s = np.sqrt(var)
    loc = a0 + X.slopes @ (w * w)
    with np.errstate(all="ignore"):
        if X.kind is VariableKind.V10:
            val, d_loc, d_scale = crps_trunc_gaussian_grad(loc, s, X.target)
        else:
            val, d_loc, d_scale = crps_censored_gev_grad(loc, s, PPT24_SHAPE, X.target)
    n = val.size
    f = float(val.sum() / n)
    grad = np.empty(theta.size)
    grad[0] = d_loc.sum() / n
    grad[1:-2] = 2.0 * w * (d_loc @ X.slopes) / n
    gs = d_scale / s
    grad[-2] = b0 * gs.sum() / n
    grad[-1] = b1 * (gs @ X.spread) / n
    if not (np.isfinite(f) and np.all(np.isfinite(grad))):
        return np.inf, np.zeros_like(theta)
    return f, grad


_GRADIENT_OBJECTIVES = {
    VariableKind.T2M: _mean_crps_and_grad_gaussian,
    VariableKind.V10: _mean_crps_and_grad_location,
    VariableKind.PPT24: _mean_crps_and_grad_location,
}


@dataclass
class FitResult:
    params: EmosParams
    mean_crps: float
    init_crps: float
    converged: bool
    n_iter: int


def _minimise(theta0, X: Predictors, optimizer):
    if optimizer == "auto" and X.kind in _GRADIENT_OBJECTIVES:
        res = minimize(
            _GRADIENT_OBJECTIVES[X.kind], theta0, args=(X,), jac=True, method="L-BFGS-B",
            options={"ftol": 1e-13, "gtol": 1e-9, "maxiter": 500},
        )
    else:
        res = minimize(
            mean_crps, theta0, args=(X,), method="Nelder-Mead",
            options={"xatol": 1e-6, "fatol": np.inf, "maxiter": 500},
        )
    return res


def fit_predictors(X: Predictors, init: EmosParams, extra_starts=(), optimizer="auto") -> FitResult:
    """CRPS-minimising parameters; the best of all starting points is kept."""
    kind = X.kind
    theta_init = init.to_vector()
    init_crps = mean_crps(theta_init, X)
    best = None
    for start in (init, *extra_starts):
        res = _minimise(start.to_vector(), X, optimizer)
        fun = mean_crps(res.x, X)
        if best is None or fun < best[1]:
            best = (res.x, fun, bool(res.success), int(res.nit))
    theta, fun, ok, nit = best
    if not fun <= init_crps:
        theta, fun = theta_init, init_crps
    if not np.isfinite(fun):
        raise EstimationError("CRPS objective is not finite at any start")
    return FitResult(EmosParams.from_vector(kind, theta), fun, init_crps, ok, nit)


def _check_training(kind, obs):
    if obs.size == 0:
        raise NoModelError("training window is empty")
    if kind is VariableKind.PPT24 and not np.any(obs > 0):
        raise DegenerateClimateError("all precipitation observations in the window are zero")


def estimate_params(training, kind, init_guess: EmosParams | None = None, optimizer="auto"):
    """Fit EMOS on a list of :class:`EnsembleForecast` for one station and lead.

    Returns ``(FitResult, SeasonalModel | None)``; pairs without an
    observation are dropped first. T2M seasonal terms are indexed by the
    valid date ``init_date + lead_days``.
    """
    kind = VariableKind(kind)
    rows = [fc for fc in training if np.isfinite(fc.obs)]
    obs = np.array([fc.obs for fc in rows], dtype=float)
    _check_training(kind, obs)
    members = np.array([fc.members for fc in rows])
    seasonal = t = None
    if kind is VariableKind.T2M:
        t = day_indices([np.datetime64(fc.init_date, "D") + np.timedelta64(fc.lead_days, "D") for fc in rows])
        st = ensemble_stats(members)
        coef = fit_seasonal_many(t, np.column_stack([obs, members[:, 0], members[:, 1], st.ens_mean]))
        seasonal = SeasonalModel.from_coef(coef)
    X = build_predictors(kind, members, obs=obs, t=t, seasonal=seasonal)
    init = init_guess if init_guess is not None else default_params(kind)
    return fit_predictors(X, init, optimizer=optimizer), seasonal


# ---------------------------------------------------------------------------
# rolling training


@dataclass
class CalibratedCase:
    init_date: np.datetime64
    lead_days: int
    dist: object = None
    params: EmosParams | None = None
    seasonal: SeasonalModel | None = None
    error: Exception | None = None


@dataclass
class RollingCalibration:
    """Predictive parameters for every verification day and lead.

    ``loc``/``scale`` have shape (n_days, L); rows before the first full
    window and failed fits are NaN with the exception kept in ``errors``.
    """

    kind: VariableKind
    dates: np.ndarray
    loc: np.ndarray
    scale: np.ndarray
    first_day: int
    errors: dict = field(default_factory=dict)
    params: dict = field(default_factory=dict)

    def ok(self, day):
        return bool(np.all(np.isfinite(self.loc[day])) and np.all(np.isfinite(self.scale[day])))

    def dist(self, day, lead=None):
        """Distribution of one day (vectorised over leads) or of one lead."""
        sl = slice(None) if lead is None else lead - 1
        return make_dist(self.kind, self.loc[day, sl], self.scale[day, sl])

    def cases(self):
        n_days, n_lead = self.loc.shape
        for d in range(self.first_day, n_days):
            for j in range(n_lead):
                err = self.errors.get((d, j + 1))
                dist = None if err is not None or not np.isfinite(self.loc[d, j]) else self.dist(d, j + 1)
                yield CalibratedCase(self.dates[d], j + 1, dist, self.params.get((d, j + 1)), None, err)

    @property
    def n_failed(self):
        return len(self.errors)


def training_slice(dates, day, window_days):
    """Index range of init dates within the ``window_days`` calendar days before ``day``."""
    dates = np.asarray(dates, dtype="datetime64[D]")
    start = dates[day] - np.timedelta64(window_days, "D")
    lo = int(np.searchsorted(dates, start, side="left"))
    return lo, day


def first_verification_day(dates, window_days):
    dates = np.asarray(dates, dtype="datetime64[D]")
    if dates.size == 0:
        return 0
    return int(np.searchsorted(dates, dates[0] + np.timedelta64(window_days, "D"), side="left"))


def rolling_calibrate(station, kind, window_days=None, optimizer="auto", cold_restart_days=30, keep_params=False, leads=None):
    """Rolling-window EMOS fits for one station.

    ``station`` exposes ``dates`` (n,), ``obs`` (n, L) and ``members``
    (n, L, 52). Each (day, lead) fit uses only the preceding ``window_days``
    calendar days; training pairs with missing data are dropped without
    extending the window. Fits are warm-started from the previous day's
    optimum and additionally restarted from the default initialisation on the
    first day and every ``cold_restart_days`` days thereafter.
    """
    kind = VariableKind(kind)
    window_days = DEFAULT_WINDOW[kind] if window_days is None else int(window_days)
    dates = np.asarray(station.dates, dtype="datetime64[D]")
    obs = np.asarray(station.obs, dtype=float)
    members = np.asarray(station.members, dtype=float)
    n_days, n_lead = obs.shape
    loc = np.full((n_days, n_lead), np.nan)
    scale = np.full((n_days, n_lead), np.nan)
    first = first_verification_day(dates, window_days)
    out = RollingCalibration(kind, dates, loc, scale, first)
    fc_ok = np.all(np.isfinite(members), axis=-1)
    stats = ensemble_stats(np.where(fc_ok[..., None], members, 0.0))
    hres, ctrl = members[..., 0], members[..., 1]
    default = default_params(kind)
    for lead in leads or range(1, n_lead + 1):
        j = lead - 1
        previous = None
        # seasonal terms are indexed by the valid date
        t_all = day_indices(dates + np.timedelta64(lead, "D")) if kind is VariableKind.T2M else None
        for d in range(first, n_days):
            try:
                if not fc_ok[d, j]:
                    raise NoModelError("forecast missing")
                lo, hi = training_slice(dates, d, window_days)
                rows = np.arange(lo, hi)
                rows = rows[np.isfinite(obs[rows, j]) & fc_ok[rows, j]]
                y = obs[rows, j]
                _check_training(kind, y)
                seasonal = None
                if kind is VariableKind.T2M:
                    coef = fit_seasonal_many(
                        t_all[rows],
                        np.column_stack([y, hres[rows, j], ctrl[rows, j], stats.ens_mean[rows, j]]),
                    )
                    seasonal = SeasonalModel.from_coef(coef)
                t_rows = None if t_all is None else t_all[rows]
                X = predictors_from_stats(
                    kind, hres[rows, j], ctrl[rows, j], _stats_rows(stats, rows, j), y, t_rows, seasonal
                )
                cold = previous is None or (cold_restart_days and (d - first) % cold_restart_days == 0)
                init = previous if previous is not None else default
                extra = (default,) if cold and previous is not None else ()
                fit = fit_predictors(X, init, extra, optimizer=optimizer)
                previous = fit.params
                today = [d]
                Xd = predictors_from_stats(
                    kind, hres[today, j], ctrl[today, j], _stats_rows(stats, today, j), None,
                    None if t_all is None else t_all[today], seasonal,
                )
                loc_d, var_d = _link(fit.params.to_vector(), Xd)
                if not (np.isfinite(loc_d[0]) and var_d[0] > 0):
                    raise EstimationError("non-finite predictive parameters")
                loc[d, j] = loc_d[0]
                scale[d, j] = np.sqrt(var_d[0])
                if keep_params:
                    out.params[(d, lead)] = fit.params
            except EstimationError as exc:
                out.errors[(d, lead)] = exc
                log.debug("fit failed day=%s lead=%d: %s", dates[d], lead, exc)
    return out
