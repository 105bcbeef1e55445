"""
Statistics Utilities Module
Bootstrap percentile intervals, seeded resampling and log-log slope fits.
"""

from typing import Callable, Optional, Sequence, Tuple

import numpy as np

from .errors import InsufficientPointsError

DEFAULT_RESAMPLES = 1000


def resampling_rng(seed: int, *tags: int) -> np.random.Generator:
    """
    Build the bootstrap generator for a plan seed

    Args:
        seed: Plan master seed
        tags: Extra integers that separate independent resampling streams

    Returns:
        Philox-backed generator, a pure function of (seed, tags)
    """
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), 0xB00757, *map(int, tags)])))


def bootstrap_indexes(n: int, n_resamples: int, rng: np.random.Generator) -> np.ndarray:
    """Index matrix of shape (n_resamples, n) drawn with replacement"""
    return rng.integers(0, n, size=(n_resamples, n))


def bootstrap_ci(data: np.ndarray,
                 statistic: Optional[Callable[[np.ndarray], float]] = None,
                 n_resamples: int = DEFAULT_RESAMPLES,
                 alpha: float = 0.05,
                 rng: Optional[np.random.Generator] = None) -> Tuple[float, float, float]:
    """
    Percentile bootstrap confidence interval along the first axis

    Args:
        data: Samples (first axis indexes samples)
        statistic: Function of a resampled array; defaults to the mean
        n_resamples: Number of bootstrap resamples
        alpha: Two-sided level (0.05 gives a 95% interval)
        rng: Resampling generator; a fixed default is used when omitted

    Returns:
        Tuple of (point_estimate, low, high); the interval always contains the estimate
    """
    data = np.asarray(data, dtype=float)
    if statistic is None:
        statistic = lambda x: float(np.mean(x, axis=0))
    if rng is None:
        rng = resampling_rng(0)

    estimate = float(statistic(data))
    if data.shape[0] < 2:
        return estimate, estimate, estimate

    stats = np.array([statistic(data[idx]) for idx in bootstrap_indexes(data.shape[0], n_resamples, rng)],
                     dtype=float)
    low, high = np.percentile(stats, [100.0 * alpha / 2.0, 100.0 * (1.0 - alpha / 2.0)])
    return estimate, float(min(low, estimate)), float(max(high, estimate))


def loglog_slope(x: Sequence[float], y: Sequence[float], min_points: int = 2) -> float:
    """
    Least-squares slope of log(y) against log(x)

    Args:
        x: Abscissae (positive)
        y: Ordinates (positive)
        min_points: Minimum number of usable points

    Returns:
        Fitted slope
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    usable = (x > 0) & (y > 0) & np.isfinite(x) & np.isfinite(y)
    if usable.sum() < min_points:
        raise InsufficientPointsError(
            f"Need at least {min_points} positive points for a log-log fit, got {int(usable.sum())}",
            {'usable_points': int(usable.sum()), 'required': min_points})
    coeffs = np.polyfit(np.log(x[usable]), np.log(y[usable]), 1)
    return float(coeffs[0])


def ratio_spread(values: Sequence[float]) -> float:
    """max/min of positive values (inf when the minimum is not positive)"""
    values = np.asarray(values, dtype=float)
    low = float(np.min(values))
    if low <= 0:
        return float('inf') if float(np.max(values)) > 0 else 1.0
    return float(np.max(values)) / low
