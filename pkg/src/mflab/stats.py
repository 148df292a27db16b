"""Output-analysis helpers for correlated simulation series."""

from __future__ import annotations

import numpy as np
from scipy import stats


def batch_means(series: np.ndarray, n_batches: int = 20) -> np.ndarray:
    """Standard error of the column means of ``series`` by non-overlapping batches.

    Trailing samples that do not fill a batch are dropped.
    """
    series = np.asarray(series, dtype=float)
    if series.ndim == 1:
        series = series[:, None]
    size = series.shape[0] // n_batches
    if size < 1:
        raise ValueError(f"{series.shape[0]} samples cannot fill {n_batches} batches")
    batches = series[: size * n_batches].reshape(n_batches, size, -1).mean(axis=1)
    return batches.std(axis=0, ddof=1) / np.sqrt(n_batches)


def mean_ci(values, level: float = 0.95) -> tuple[float, float]:
    """Sample mean and Student-t half-width."""
    x = np.asarray(values, dtype=float)
    m = float(x.mean())
    if len(x) < 2:
        return m, float("inf")
    half = stats.t.ppf(0.5 + level / 2, len(x) - 1) * x.std(ddof=1) / np.sqrt(len(x))
    return m, float(half)
