"""Monte Carlo point estimates with attached confidence information.

Three interval methods cover the three kinds of statistics produced here:

* ``wilson``       -- probabilities estimated from Bernoulli counts,
* ``normal``       -- means of unbounded per-replica statistics,
* ``batch-means``  -- means of correlated MCMC series.

``stderr`` always holds a one-sigma half width, so ``mean +/- 3*stderr``
is the three-sigma band used by the verdict checks.
"""

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class EstimateWithCI:
    mean: float
    stderr: float
    n_replicas: int
    method: str

    def __post_init__(self):
        if self.method not in ("wilson", "normal", "batch-means", "exact"):
            raise ValueError(f"unknown CI method {self.method!r}")

    @property
    def half_width_3sigma(self):
        return 3.0 * self.stderr


def wilson_estimate(successes, n):
    """Estimate a probability from `successes` out of `n` Bernoulli trials.

    The reported stderr is the half width of the one-sigma Wilson score
    interval.  Unlike the plain sqrt(p(1-p)/n) it stays positive at 0 or n
    successes, so three-sigma verdicts keep honest slack in the corners.
    """
    if n <= 0:
        raise ValueError("need at least one replica")
    p = successes / n
    z = 1.0
    denom = 1.0 + z * z / n
    half = z * np.sqrt(p * (1.0 - p) / n + z * z / (4.0 * n * n)) / denom
    return EstimateWithCI(mean=p, stderr=float(half), n_replicas=n, method="wilson")


def normal_estimate(values):
    """Mean and stderr of independent per-replica values."""
    values = np.asarray(values, dtype=float)
    n = values.size
    if n < 2:
        raise ValueError("need at least two replicas for a normal CI")
    stderr = values.std(ddof=1) / np.sqrt(n)
    return EstimateWithCI(mean=float(values.mean()), stderr=float(stderr),
                          n_replicas=n, method="normal")


def batch_means_estimate(series, n_batches=30):
    """Mean and stderr of a correlated series via non-overlapping batch means.

    The series is cut into `n_batches` equal batches (trailing remainder
    dropped); the stderr comes from the empirical spread of batch means,
    which absorbs autocorrelation at lags shorter than a batch.
    """
    series = np.asarray(series, dtype=float)
    if series.size < 2 * n_batches:
        raise ValueError(f"series of {series.size} too short for {n_batches} batches")
    width = series.size // n_batches
    trimmed = series[: width * n_batches].reshape(n_batches, width)
    means = trimmed.mean(axis=1)
    stderr = means.std(ddof=1) / np.sqrt(n_batches)
    return EstimateWithCI(mean=float(trimmed.mean()), stderr=float(stderr),
                          n_replicas=series.size, method="batch-means")


def exact_value(x):
    """Wrap a deterministic quantity in the common estimate type."""
    return EstimateWithCI(mean=float(x), stderr=0.0, n_replicas=1, method="exact")
