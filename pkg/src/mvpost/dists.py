"""Parametric predictive distributions used by EMOS.

All three families are vectorised: parameters may be scalars or arrays and
every method broadcasts its argument against them. A distribution holding
parameters of shape ``(L,)`` therefore describes the L lead-time marginals of
one forecast case at once.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import gamma as gamma_fn
from scipy.special import gammaincc, ndtr, ndtri

from .errors import DomainError

_SQRT_PI = np.sqrt(np.pi)
_INV_SQRT_2PI = 1.0 / np.sqrt(2.0 * np.pi)
# uniform draws are clipped into the open unit interval
_U_LO = 2.0**-54
_U_HI = 1.0 - 2.0**-53

PPT24_SHAPE = 0.2


def _pdf(z):
    return _INV_SQRT_2PI * np.exp(-0.5 * z * z)


def _check_prob(p):
    p = np.asarray(p, dtype=float)
    if np.any(~(p > 0.0) | ~(p < 1.0)):
        raise DomainError("quantile level must lie strictly inside (0, 1)")
    return p


def _uniforms(rng, shape):
    return np.clip(rng.random(shape), _U_LO, _U_HI)


# ---------------------------------------------------------------------------
# closed-form CRPS kernels


def crps_gaussian(mu, sigma, y):
    z = (y - mu) / sigma
    return sigma * (z * (2.0 * ndtr(z) - 1.0) + 2.0 * _pdf(z) - 1.0 / _SQRT_PI)


def crps_gaussian_grad(mu, sigma, y):
    """CRPS of N(mu, sigma^2) with its partial derivatives in mu and sigma."""
    z = (y - mu) / sigma
    cdf = ndtr(z)
    dens = _pdf(z)
    value = sigma * (z * (2.0 * cdf - 1.0) + 2.0 * dens - 1.0 / _SQRT_PI)
    return value, 1.0 - 2.0 * cdf, 2.0 * dens - 1.0 / _SQRT_PI


def crps_trunc_gaussian(loc, scale, y):
    """CRPS of a normal law left-truncated at zero.

    For ``y < 0`` the integral picks up the constant ``-y`` over ``[y, 0)``
    on top of the score at zero.
    """
    y = np.asarray(y, dtype=float)
    yp = np.maximum(y, 0.0)
    z = (yp - loc) / scale
    p = ndtr(loc / scale)
    inner = (
        z * p * (2.0 * ndtr(z) + p - 2.0)
        + 2.0 * _pdf(z) * p
        - ndtr(np.sqrt(2.0) * loc / scale) / _SQRT_PI
    )
    return scale * inner / p**2 + np.maximum(-y, 0.0)


def crps_trunc_gaussian_grad(loc, scale, y):
    """Truncated-normal CRPS with its partial derivatives in loc and scale."""
    y = np.asarray(y, dtype=float)
    yp = np.maximum(y, 0.0)
    a = loc / scale
    z = (yp - loc) / scale
    p = ndtr(a)
    pa = _pdf(a)
    cz = ndtr(z)
    pz = _pdf(z)
    bracket = 2.0 * cz + p - 2.0
    n = z * p * bracket + 2.0 * pz * p - ndtr(np.sqrt(2.0) * a) / _SQRT_PI
    g = n / p**2
    g_z = bracket / p
    n_a = z * pa * bracket + z * p * pa + 2.0 * pz * pa - np.sqrt(2.0) * _pdf(np.sqrt(2.0) * a) / _SQRT_PI
    g_a = n_a / p**2 - 2.0 * n * pa / p**3
    value = scale * g + np.maximum(-y, 0.0)
    return value, g_a - g_z, g - z * g_z - a * g_a


def _gev_t(x, loc, scale, shape):
    """-log F(x) of the uncensored GEV, with the support handled explicitly."""
    arg = 1.0 + shape * (x - loc) / scale
    with np.errstate(divide="ignore", invalid="ignore", over="ignore"):
        t = np.where(arg > 0.0, np.maximum(arg, 1e-300) ** (-1.0 / shape), 0.0)
    outside = np.inf if shape > 0 else 0.0
    return np.where(arg > 0.0, t, outside)


def _gev_lower_partial(a, loc, scale, shape):
    """E[(a - X)^+] for X ~ GEV(loc, scale, shape)."""
    t = _gev_t(a, loc, scale, shape)
    cdf = np.exp(-t)
    finite = np.isfinite(t)
    tail = gamma_fn(1.0 - shape) * np.where(finite, gammaincc(1.0 - shape, np.where(finite, t, 0.0)), 0.0)
    return (a - loc + scale / shape) * cdf - (scale / shape) * tail


def crps_censored_gev(loc, scale, shape, y):
    """CRPS of a GEV law left-censored at zero (shape must be nonzero and < 1).

    Uses CRPS*(y) = CRPS(F, y+) - int_{-inf}^0 F(x)^2 dx + (-y)^+ and the fact
    that F^2 is again a GEV with scale 2^shape * scale.
    """
    if shape == 0.0 or shape >= 1.0:
        raise DomainError("censored GEV CRPS requires shape != 0 and shape < 1")
    y = np.asarray(y, dtype=float)
    yp = np.maximum(y, 0.0)
    g1 = gamma_fn(1.0 - shape)
    mean = loc + scale * (g1 - 1.0) / shape
    two_xi = 2.0**shape
    uncensored = (
        2.0 * _gev_lower_partial(yp, loc, scale, shape)
        - (yp - mean)
        - scale * (two_xi - 1.0) * g1 / shape
    )
    sq_loc = loc + scale * (two_xi - 1.0) / shape
    below_zero = _gev_lower_partial(0.0, sq_loc, two_xi * scale, shape)
    return uncensored - below_zero + np.maximum(-y, 0.0)


def crps_censored_gev_grad(loc, scale, shape, y):
    """Censored-GEV CRPS with its partial derivatives in loc and scale.

    With P(a) = E[(a - X)^+]: dP/dloc = -F(a) and dP/dscale = P(a)/scale - v F(a),
    v = (a - loc)/scale.
    """
    if shape == 0.0 or shape >= 1.0:
        raise DomainError("censored GEV CRPS requires shape != 0 and shape < 1")
    y = np.asarray(y, dtype=float)
    yp = np.maximum(y, 0.0)
    g1 = gamma_fn(1.0 - shape)
    m1 = (g1 - 1.0) / shape
    two_xi = 2.0**shape
    k = (two_xi - 1.0) / shape
    c = scale * k * g1
    p_y = _gev_lower_partial(yp, loc, scale, shape)
    f_y = np.exp(-_gev_t(yp, loc, scale, shape))
    sq_loc = loc + scale * k
    sq_scale = two_xi * scale
    p_0 = _gev_lower_partial(0.0, sq_loc, sq_scale, shape)
    f0_sq = np.exp(-_gev_t(0.0, sq_loc, sq_scale, shape))
    value = 2.0 * p_y - (yp - loc - scale * m1) - c - p_0 + np.maximum(-y, 0.0)
    d_loc = 1.0 - 2.0 * f_y + f0_sq
    v_y = (yp - loc) / scale
    v_0 = -sq_loc / sq_scale
    d_scale = (2.0 * p_y - p_0) / scale - 2.0 * v_y * f_y + m1 - k * g1 + k * f0_sq + two_xi * v_0 * f0_sq
    return value, d_loc, d_scale


# ---------------------------------------------------------------------------
# distribution families


class _Dist:
    @property
    def batch_shape(self):
        return np.broadcast(*self._params()).shape

    def __getitem__(self, idx):
        return type(self)(*(np.broadcast_to(p, self.batch_shape)[idx] for p in self._params()))

    def sample(self, rng, size=None):
        """Inverse-transform draws; ``size`` defaults to the parameter shape."""
        if size is None:
            size = self.batch_shape
        return self.quantile(_uniforms(rng, size))

    def _params(self):
        raise NotImplementedError


@dataclass(frozen=True)
class GaussianDist(_Dist):
    mu: float | np.ndarray
    sigma: float | np.ndarray

    def __post_init__(self):
        if np.any(~(np.asarray(self.sigma) > 0)):
            raise DomainError("sigma must be positive")

    def _params(self):
        return (self.mu, self.sigma)

    def cdf(self, x):
        return ndtr((np.asarray(x, dtype=float) - self.mu) / self.sigma)

    def quantile(self, p):
        return self.mu + self.sigma * ndtri(_check_prob(p))

    def crps(self, y):
        return crps_gaussian(self.mu, self.sigma, np.asarray(y, dtype=float))


@dataclass(frozen=True)
class TruncGaussianDist(_Dist):
    """Normal(location, scale^2) truncated to [0, inf)."""

    location: float | np.ndarray
    scale: float | np.ndarray

    def __post_init__(self):
        if np.any(~(np.asarray(self.scale) > 0)):
            raise DomainError("scale must be positive")

    def _params(self):
        return (self.location, self.scale)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        keep = ndtr(self.location / self.scale)
        out = (keep - ndtr((self.location - np.maximum(x, 0.0)) / self.scale)) / keep
        return np.where(x < 0.0, 0.0, np.clip(out, 0.0, 1.0))

    def quantile(self, p):
        p = _check_prob(p)
        r = self.location / self.scale
        lower = ndtr(-r)
        # pick the better-conditioned tail to avoid cancellation
        via_lower = ndtri(lower + p * (1.0 - lower))
        via_upper = -ndtri((1.0 - p) * ndtr(r))
        z = np.where(lower < 0.5, via_lower, via_upper)
        return np.maximum(self.location + self.scale * z, 0.0)

    def crps(self, y):
        return crps_trunc_gaussian(self.location, self.scale, np.asarray(y, dtype=float))


@dataclass(frozen=True)
class CensoredGevDist(_Dist):
    """GEV(location, scale, shape) left-censored at zero: X* = max(X, 0)."""

    location: float | np.ndarray
    scale: float | np.ndarray
    shape: float = PPT24_SHAPE

    def __post_init__(self):
        if np.any(~(np.asarray(self.scale) > 0)):
            raise DomainError("scale must be positive")
        if self.shape == 0.0 or self.shape >= 1.0:
            raise DomainError("shape must be nonzero and below 1")

    def _params(self):
        return (self.location, self.scale)

    def __getitem__(self, idx):
        loc, scale = (np.broadcast_to(p, self.batch_shape)[idx] for p in self._params())
        return CensoredGevDist(loc, scale, self.shape)

    def gev_cdf(self, x):
        """CDF of the uncensored GEV."""
        return np.exp(-_gev_t(np.asarray(x, dtype=float), self.location, self.scale, self.shape))

    @property
    def zero_mass(self):
        return self.gev_cdf(0.0)

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return np.where(x < 0.0, 0.0, self.gev_cdf(x))

    def quantile(self, p):
        p = _check_prob(p)
        xi = self.shape
        x = self.location + self.scale * ((-np.log(p)) ** (-xi) - 1.0) / xi
        return np.where(p <= self.zero_mass, 0.0, np.maximum(x, 0.0))

    def crps(self, y):
        return crps_censored_gev(self.location, self.scale, self.shape, np.asarray(y, dtype=float))


@dataclass(frozen=True)
class SquaredDist(_Dist):
    """Law of X^2 for a nonnegative X; maps square-root-scale models back."""

    base: TruncGaussianDist

    def _params(self):
        return self.base._params()

    @property
    def batch_shape(self):
        return self.base.batch_shape

    def __getitem__(self, idx):
        return SquaredDist(self.base[idx])

    def cdf(self, x):
        x = np.asarray(x, dtype=float)
        return self.base.cdf(np.sqrt(np.maximum(x, 0.0))) * (x >= 0)

    def quantile(self, p):
        return self.base.quantile(p) ** 2

    def crps(self, y):
        raise NotImplementedError("score square-root models on their own scale")


PredictiveDistribution = GaussianDist | TruncGaussianDist | CensoredGevDist | SquaredDist


def cdf(dist, x):
    return dist.cdf(x)


def quantile(dist, p):
    return dist.quantile(p)


def sample(dist, rng, size=None):
    return dist.sample(rng, size)


def crps_analytic(dist, y):
    return dist.crps(y)
