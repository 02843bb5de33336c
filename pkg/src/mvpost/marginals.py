"""Size-K marginal samples from predictive distributions.

Samples are arrays of shape ``(K,) + dist.batch_shape`` sorted along the
first axis, so a distribution vectorised over L leads yields a (K, L) block.
"""

from __future__ import annotations

import numpy as np

from .errors import UsageError

SCHEMES = ("R", "Q", "S")


def _sorted(values):
    return np.sort(values, axis=0, kind="stable")


def _levels_shape(dist, k):
    return (k,) + tuple(dist.batch_shape)


def sample_random(dist, k, rng):
    """K iid inverse-transform draws, sorted ascending."""
    if k < 1:
        raise UsageError("sample size must be positive")
    return _sorted(dist.sample(rng, _levels_shape(dist, k)))


def quantile_levels(k):
    return np.arange(1, k + 1) / (k + 1.0)


def sample_quantiles(dist, k):
    """Equidistant quantiles at levels k/(K+1)."""
    if k < 1:
        raise UsageError("sample size must be positive")
    levels = quantile_levels(k).reshape((k,) + (1,) * len(dist.batch_shape))
    return _sorted(np.broadcast_to(dist.quantile(levels), _levels_shape(dist, k)))


def sample_stratified(dist, k, rng, offsets=None):
    """One draw per stratum ](k-1)/K, k/K].

    ``offsets`` in (0, 1] fixes the position inside each stratum (0.5 gives
    stratum midpoints); by default they are uniform random.
    """
    if k < 1:
        raise UsageError("sample size must be positive")
    shape = _levels_shape(dist, k)
    if offsets is None:
        offsets = 1.0 - rng.random(shape)
    offsets = np.asarray(offsets, dtype=float)
    if offsets.ndim == 1 and len(shape) > 1:
        offsets = offsets.reshape((-1,) + (1,) * (len(shape) - 1))
    offsets = np.broadcast_to(offsets, shape)
    strata = np.arange(k).reshape((k,) + (1,) * (len(shape) - 1))
    u = np.clip((strata + offsets) / k, 2.0**-54, 1.0 - 2.0**-53)
    return _sorted(dist.quantile(u))


def draw_samples(dist, scheme, k, rng=None):
    if scheme == "R":
        return sample_random(dist, k, rng)
    if scheme == "Q":
        return sample_quantiles(dist, k)
    if scheme == "S":
        return sample_stratified(dist, k, rng)
    raise UsageError(f"unknown sampling scheme {scheme!r}")


def independent_baseline(samples):
    """Rank-aligned trajectories: member k takes the k-th sorted value at every lead.

    ``samples`` is a (K, L) array or a sequence of L length-K samples.
    """
    if isinstance(samples, np.ndarray) and samples.ndim == 2:
        return _sorted(samples.copy())
    sizes = {len(s) for s in samples}
    if len(sizes) != 1:
        raise UsageError(f"inconsistent sample sizes across leads: {sorted(sizes)}")
    return np.column_stack([np.sort(np.asarray(s, dtype=float), kind="stable") for s in samples])
