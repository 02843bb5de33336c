"""Empirical-copula reordering: ECC, dECC and Schaake shuffle variants.

Trajectory ensembles are (K, L) arrays: row k is member k's trajectory over
the L lead times. Every method first draws its marginal samples and then
consumes the generator for tie-breaking and template selection, so a caller
can reproduce the marginal samples by reseeding.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, UsageError
from .marginals import draw_samples, sample_quantiles


def ranks_with_random_ties(values, rng):
    """1-based ranks along axis 0; tied values get a uniformly random order."""
    values = np.asarray(values, dtype=float)
    tie_break = rng.random(values.shape)
    order = np.lexsort((tie_break, values), axis=0)
    ranks = np.empty(values.shape, dtype=np.int64)
    np.put_along_axis(ranks, order, np.arange(1, values.shape[0] + 1).reshape((-1,) + (1,) * (values.ndim - 1)), axis=0)
    return ranks


def apply_template(samples, ranks):
    """Member k at lead l gets the ranks[k, l]-th smallest sample value of lead l."""
    samples = np.asarray(samples, dtype=float)
    ranks = np.asarray(ranks)
    if samples.shape != ranks.shape:
        raise UsageError(f"sample block {samples.shape} does not match template {ranks.shape}")
    ordered = np.sort(samples, axis=0, kind="stable")
    return np.take_along_axis(ordered, ranks - 1, axis=0)


def ecc_reorder(raw, samples, rng):
    return apply_template(samples, ranks_with_random_ties(raw, rng))


def ecc(raw, dists, scheme, rng, k=None):
    """Reorder calibrated samples in the rank order of the raw ensemble."""
    raw = np.asarray(raw, dtype=float)
    k = raw.shape[0] if k is None else k
    if k != raw.shape[0]:
        raise UsageError("ECC sample size must equal the raw ensemble size")
    samples = draw_samples(dists, scheme, k, rng)
    return ecc_reorder(raw, samples, rng)


# ---------------------------------------------------------------------------
# dual ECC


@dataclass(frozen=True)
class ErrorAutocorrelation:
    matrix: np.ndarray
    sqrt: np.ndarray
    fallback: bool = False

    @classmethod
    def identity(cls, n_lead, fallback=False):
        eye = np.eye(n_lead)
        return cls(eye, eye.copy(), fallback)

    @classmethod
    def from_matrix(cls, matrix):
        """Repair to a PSD correlation matrix and take its symmetric square root."""
        m = np.asarray(matrix, dtype=float)
        m = 0.5 * (m + m.T)
        vals, vecs = np.linalg.eigh(m)
        m = (vecs * np.clip(vals, 0.0, None)) @ vecs.T
        d = np.sqrt(np.clip(np.diag(m), 1e-300, None))
        m = m / np.outer(d, d)
        m = 0.5 * (m + m.T)
        vals, vecs = np.linalg.eigh(m)
        root = (vecs * np.sqrt(np.clip(vals, 0.0, None))) @ vecs.T
        return cls(m, 0.5 * (root + root.T))


def estimate_error_autocorrelation(ens_mean, obs):
    """Correlation across leads of ensemble-mean errors ``obs - ens_mean``.

    Rows with a missing value are dropped. Fewer than L+1 complete rows, or a
    lead with zero error variance, falls back to the identity (flagged).
    """
    ens_mean = np.asarray(ens_mean, dtype=float)
    obs = np.asarray(obs, dtype=float)
    err = obs - ens_mean
    err = err[np.all(np.isfinite(err), axis=1)]
    n_lead = ens_mean.shape[1]
    if err.shape[0] < n_lead + 1:
        return ErrorAutocorrelation.identity(n_lead, fallback=True)
    if n_lead == 1:
        return ErrorAutocorrelation.identity(1)
    sd = err.std(axis=0)
    if np.any(sd == 0):
        return ErrorAutocorrelation.identity(n_lead, fallback=True)
    return ErrorAutocorrelation.from_matrix(np.corrcoef(err, rowvar=False))


def decc(raw, dists, autocorr: ErrorAutocorrelation, rng):
    raw = np.asarray(raw, dtype=float)
    k = raw.shape[0]
    samples = sample_quantiles(dists, k)
    initial = ecc_reorder(raw, samples, rng)
    correction = (initial - raw) @ autocorr.sqrt.T
    adjusted = raw + correction
    return ecc_reorder(adjusted, samples, rng)


# ---------------------------------------------------------------------------
# Schaake shuffle family


@dataclass
class HistoricalArchive:
    """Complete observation trajectories with ensemble mean/variance per lead."""

    obs: np.ndarray
    ens_mean: np.ndarray | None = None
    ens_var: np.ndarray | None = None
    dates: np.ndarray | None = None

    def __post_init__(self):
        self.obs = np.atleast_2d(np.asarray(self.obs, dtype=float))
        keep = np.all(np.isfinite(self.obs), axis=1)
        for name in ("ens_mean", "ens_var"):
            arr = getattr(self, name)
            if arr is not None:
                arr = np.atleast_2d(np.asarray(arr, dtype=float))
                keep &= np.all(np.isfinite(arr), axis=1)
        self.obs = self.obs[keep]
        if self.ens_mean is not None:
            self.ens_mean = np.atleast_2d(np.asarray(self.ens_mean, dtype=float))[keep]
        if self.ens_var is not None:
            self.ens_var = np.atleast_2d(np.asarray(self.ens_var, dtype=float))[keep]
        if self.dates is not None:
            self.dates = np.asarray(self.dates)[keep]

    def __len__(self):
        return self.obs.shape[0]


def schaake_reorder(samples, template, rng):
    """Reorder samples by the per-lead ranks of observation trajectories."""
    return apply_template(samples, ranks_with_random_ties(template, rng))


def ssh_select(archive: HistoricalArchive, k, rng):
    if len(archive) < k:
        raise ConfigurationError(f"archive holds {len(archive)} trajectories, need {k}")
    return rng.choice(len(archive), size=k, replace=False)


def ssh(dists, archive: HistoricalArchive, scheme, k, rng):
    samples = draw_samples(dists, scheme, k, rng)
    idx = ssh_select(archive, k, rng)
    return schaake_reorder(samples, archive.obs[idx], rng)


def central_intervals(dists, coverage=0.99):
    tail = 0.5 * (1.0 - coverage)
    return dists.quantile(tail), dists.quantile(1.0 - tail)


def mdssh_select(dists, archive: HistoricalArchive, k, rng, m_min_count=None, m_max=None):
    """Trajectories with at least m leads inside the 99% central intervals.

    m is the largest value not exceeding ``m_max`` (default L) that retains at
    least max(K, m_min_count) trajectories; K of them are drawn at random.
    Returns ``(indices, m)``.
    """
    need = max(k, m_min_count or k)
    if len(archive) < need:
        raise ConfigurationError(f"archive holds {len(archive)} trajectories, need {need}")
    lo, hi = central_intervals(dists)
    inside = ((archive.obs >= lo) & (archive.obs <= hi)).sum(axis=1)
    n_lead = archive.obs.shape[1]
    m = n_lead if m_max is None else min(int(m_max), n_lead)
    while m > 0 and np.count_nonzero(inside >= m) < need:
        m -= 1
    pool = np.flatnonzero(inside >= m)
    return rng.choice(pool, size=k, replace=False), m


def mdssh(dists, archive: HistoricalArchive, k, rng, m_min_count=None, m_max=None):
    samples = sample_quantiles(dists, k)
    idx, _ = mdssh_select(dists, archive, k, rng, m_min_count, m_max)
    return schaake_reorder(samples, archive.obs[idx], rng)


def similarity(cur_mean, cur_var, hist_mean, hist_var):
    """Distance between the current ensemble mean/variance profile and each historical one."""
    cur_mean = np.asarray(cur_mean, dtype=float)
    n_lead = cur_mean.shape[-1]
    dm = ((np.asarray(hist_mean) - cur_mean) ** 2).sum(axis=-1)
    dv = ((np.asarray(hist_var) - np.asarray(cur_var)) ** 2).sum(axis=-1)
    return np.sqrt(dm + dv / n_lead)


def simssh_select(cur_mean, cur_var, archive: HistoricalArchive, k):
    if archive.ens_mean is None or archive.ens_var is None:
        raise ConfigurationError("similarity selection needs ensemble statistics in the archive")
    if len(archive) < k:
        raise ConfigurationError(f"archive holds {len(archive)} trajectories, need {k}")
    delta = similarity(cur_mean, cur_var, archive.ens_mean, archive.ens_var)
    # stable sort keeps earlier dates first among equal distances
    return np.argsort(delta, kind="stable")[:k]


def simssh(cur_mean, cur_var, dists, archive: HistoricalArchive, k, rng=None):
    rng = np.random.default_rng(0) if rng is None else rng
    samples = sample_quantiles(dists, k)
    idx = simssh_select(cur_mean, cur_var, archive, k)
    return schaake_reorder(samples, archive.obs[idx], rng)
