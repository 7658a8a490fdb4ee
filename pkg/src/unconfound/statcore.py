"""Random streams and the scalar statistical primitives used throughout.

Every stochastic routine in the package takes a :class:`numpy.random.Generator`.
Generators are derived from a 64-bit master seed plus a tuple of integer keys
through :class:`numpy.random.SeedSequence`, so ``substream(seed, j, i)`` is a
pure function of its arguments and different key tuples give independent
streams.  Replicate ``i`` of experiment ``j`` can therefore be rerun alone.
"""

from __future__ import annotations

import math
from statistics import NormalDist

import numpy as np

from .errors import DomainError

Rng = np.random.Generator

_STD_NORMAL = NormalDist()
_SEED_MASK = (1 << 64) - 1


def _check_seed(seed: int) -> int:
    if isinstance(seed, (bool, np.bool_)) or not isinstance(seed, (int, np.integer)):
        raise DomainError(f"seed must be an integer, got {seed!r}")
    seed = int(seed)
    if seed < 0 or seed > _SEED_MASK:
        raise DomainError(f"seed must be an unsigned 64-bit integer, got {seed}")
    return seed


def make_rng(seed: int) -> Rng:
    """Return the root generator for ``seed``."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(_check_seed(seed))))


def substream(seed: int, *keys: int) -> Rng:
    """Return the child generator identified by ``(seed, *keys)``.

    The mapping is pure: the same arguments always rebuild the same stream,
    regardless of how many other streams were created before.
    """
    keys = tuple(int(k) for k in keys)
    if any(k < 0 for k in keys):
        raise DomainError("substream keys must be non-negative")
    ss = np.random.SeedSequence(_check_seed(seed), spawn_key=keys)
    return np.random.Generator(np.random.PCG64(ss))


def normal_cdf(z: float) -> float:
    """Standard normal CDF, computed from ``erfc`` (absolute error ~1e-16)."""
    z = float(z)
    if not math.isfinite(z):
        raise DomainError(f"normal_cdf requires a finite argument, got {z}")
    return 0.5 * math.erfc(-z / math.sqrt(2.0))


def normal_quantile(p: float) -> float:
    """Inverse of :func:`normal_cdf` on the open interval (0, 1)."""
    p = float(p)
    if not (0.0 < p < 1.0):
        raise DomainError(f"normal_quantile requires 0 < p < 1, got {p}")
    # Wichura's AS241 (relative accuracy ~1e-16)
    return _STD_NORMAL.inv_cdf(p)


def empirical_quantile(values, p: float) -> float:
    """Sample quantile with linear interpolation between order statistics.

    With sorted values ``v[0..n-1]`` the quantile at ``p`` sits at the
    zero-based position ``h = (n - 1) * p`` and interpolates between
    ``v[floor(h)]`` and ``v[ceil(h)]`` (Hyndman & Fan type 7).
    """
    arr = np.asarray(values, dtype=float).ravel()
    if arr.size == 0:
        raise DomainError("empirical_quantile of an empty list")
    p = float(p)
    if not (0.0 <= p <= 1.0) or math.isnan(p):
        raise DomainError(f"quantile level must lie in [0, 1], got {p}")
    return float(np.quantile(arr, p, method="linear"))


def draw_normal(rng: Rng, mean: float, sd: float, size=None):
    """Draw from N(mean, sd**2); ``sd == 0`` returns ``mean`` exactly."""
    if not sd >= 0:
        raise DomainError(f"standard deviation must be >= 0, got {sd}")
    z = rng.standard_normal(size)
    return mean + sd * z


def draw_bernoulli(rng: Rng, p: float, size=None):
    """Draw 0/1 indicators with success probability ``p``."""
    if not (0.0 <= p <= 1.0):
        raise DomainError(f"Bernoulli probability must lie in [0, 1], got {p}")
    u = rng.random(size)
    if size is None:
        return int(u < p)
    return (u < p).astype(np.int64)
