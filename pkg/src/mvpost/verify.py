"""Univariate and multivariate verification scores and tests."""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.stats import norm

from .errors import DegenerateTestError, UndefinedSkillError, UsageError
from .reorder import ranks_with_random_ties


def crps_empirical(ensemble, y):
    """CRPS of the empirical distribution of ``ensemble``: E|X-y| - E|X-X'|/2."""
    x = np.asarray(ensemble, dtype=float).ravel()
    return float(np.abs(x - y).mean() - 0.5 * np.abs(x[:, None] - x[None, :]).mean())


def _check_dims(ens, y):
    ens = np.atleast_2d(np.asarray(ens, dtype=float))
    y = np.asarray(y, dtype=float).ravel()
    if ens.shape[1] != y.size:
        raise UsageError(f"ensemble dimension {ens.shape[1]} does not match observation dimension {y.size}")
    return ens, y


def energy_score(ens, y):
    ens, y = _check_dims(ens, y)
    to_obs = np.sqrt(((ens - y) ** 2).sum(axis=1)).mean()
    diff = ens[:, None, :] - ens[None, :, :]
    spread = np.sqrt((diff**2).sum(axis=-1)).mean()
    return float(to_obs - 0.5 * spread)


def default_vs_weights(n_lead):
    return 1.0 - np.eye(n_lead)


def variogram_score(ens, y, p=1.0, weights=None):
    ens, y = _check_dims(ens, y)
    n_lead = y.size
    w = default_vs_weights(n_lead) if weights is None else np.asarray(weights, dtype=float)
    obs_vario = np.abs(y[:, None] - y[None, :]) ** p
    ens_vario = (np.abs(ens[:, :, None] - ens[:, None, :]) ** p).mean(axis=0)
    return float((w * (obs_vario - ens_vario) ** 2).sum())


def skill_score(mean_score, mean_ref):
    if mean_ref == 0:
        raise UndefinedSkillError("reference score is zero")
    return 1.0 - mean_score / mean_ref


def average_rank(ens, y, rng):
    """Rank of the observation among the K+1 averaged univariate ranks."""
    ens, y = _check_dims(ens, y)
    points = np.vstack([y[None, :], ens])
    pre = ranks_with_random_ties(points, rng).mean(axis=1)
    return int(ranks_with_random_ties(pre, rng)[0])


def rank_histogram(ranks, k):
    return np.bincount(np.asarray(ranks, dtype=int) - 1, minlength=k + 1)


def reliability_index(counts):
    counts = np.asarray(counts, dtype=float)
    total = counts.sum()
    if total <= 0:
        raise UsageError("rank histogram is empty")
    return float(np.abs(counts / total - 1.0 / counts.size).sum())


@dataclass
class RankHistogram:
    counts: np.ndarray

    @property
    def reliability_index(self):
        return reliability_index(self.counts)


# ---------------------------------------------------------------------------
# multivariate median


def l1_objective(m, points):
    return float(np.sqrt(((np.asarray(points) - m) ** 2).sum(axis=1)).sum())


def l1_median(points, tol=1e-10, max_iter=1000):
    """Geometric median by the modified Weiszfeld iteration of Vardi and Zhang.

    At a data point x_j with multiplicity eta, the step is damped by
    min(1, eta / ||R||), where R is the sum of unit vectors towards the other
    points, so the iteration can stop at (or move off) data points.
    """
    x = np.atleast_2d(np.asarray(points, dtype=float))
    if x.shape[0] == 1:
        return x[0].copy()
    m = x.mean(axis=0)
    for _ in range(max_iter):
        d = np.sqrt(((x - m) ** 2).sum(axis=1))
        at = d <= 1e-14 * (1.0 + np.abs(m).max())
        eta = int(at.sum())
        far = ~at
        if not far.any():
            break
        w = 1.0 / d[far]
        T = (w[:, None] * x[far]).sum(axis=0) / w.sum()
        if eta == 0:
            new = T
        else:
            R = (w[:, None] * (x[far] - m)).sum(axis=0)
            r = np.sqrt((R**2).sum())
            gamma = 1.0 if r == 0 else min(1.0, eta / r)
            new = (1.0 - gamma) * T + gamma * m
        step = np.sqrt(((new - m) ** 2).sum())
        m = new
        if step < tol:
            break
    # the iteration descends from the centroid; a data point can still be better
    vals = np.sqrt(((x[:, None, :] - x[None, :, :]) ** 2).sum(axis=-1)).sum(axis=1)
    j = int(np.argmin(vals))
    if vals[j] < l1_objective(m, x):
        return x[j].copy()
    return m


def euclidean_error(median, y):
    return float(np.sqrt(((np.asarray(median, dtype=float) - np.asarray(y, dtype=float)) ** 2).sum()))


# ---------------------------------------------------------------------------
# Diebold-Mariano


@dataclass
class ScoreSeries:
    method: str
    station: str
    dates: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        self.dates = np.asarray(self.dates)
        if self.dates.shape != self.values.shape:
            raise UsageError("dates and values differ in length")


@dataclass
class DMResult:
    statistic: float
    n: int
    decision: str
    lag: int
    small_sample: bool

    @property
    def significant(self):
        return self.decision in ("F better", "G better")

    @property
    def p_value(self):
        if not np.isfinite(self.statistic):
            return 1.0
        return float(2.0 * norm.sf(abs(self.statistic)))


def hac_variance(d, lag=None):
    """Bartlett-kernel long-run variance with truncation lag ceil(N^(1/3))."""
    d = np.asarray(d, dtype=float)
    n = d.size
    lag = math.ceil(n ** (1.0 / 3.0)) if lag is None else lag
    e = d - d.mean()
    var = e @ e / n
    for k in range(1, min(lag, n - 1) + 1):
        var += 2.0 * (1.0 - k / (lag + 1.0)) * (e[k:] @ e[:-k]) / n
    return var, lag


def dm_test(series_f, series_g, lag=None, level=0.05):
    """Diebold-Mariano statistic; negative values favour F."""
    if isinstance(series_f, ScoreSeries) and isinstance(series_g, ScoreSeries):
        if not np.array_equal(series_f.dates, series_g.dates):
            raise UsageError("score series are not aligned on the same dates")
    f = np.asarray(getattr(series_f, "values", series_f), dtype=float)
    g = np.asarray(getattr(series_g, "values", series_g), dtype=float)
    if f.shape != g.shape:
        raise UsageError("score series differ in length")
    d = f - g
    n = d.size
    small = n < 30
    if n == 0 or np.all(d == 0):
        return DMResult(np.nan, n, "equal", 0, small)
    var, lag = hac_variance(d, lag)
    if not var > 0:
        raise DegenerateTestError("score differences have zero variance")
    t = math.sqrt(n) * d.mean() / math.sqrt(var)
    crit = norm.ppf(1.0 - level / 2.0)
    if t <= -crit:
        decision = "F better"
    elif t >= crit:
        decision = "G better"
    else:
        decision = "no significant difference"
    return DMResult(float(t), n, decision, lag, small)
