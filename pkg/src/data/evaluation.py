"""
Statistics over simulated series.
 * Batch-means standard errors (successive blocking events are correlated).
 * Storm duration from per-second rejection counts.
 * Relative errors and goodness-of-fit of retry-count distributions with scipy.
"""

import numpy as np
from scipy import stats

from tool.analytics import retry_count_pmf


def batch_means(values, batches=50):
    """Mean and batch-means standard error of a correlated sequence"""

    values = np.asarray(values, dtype=float)

    if len(values) < batches:
        raise ValueError(f"need at least {batches} samples, got {len(values)}")

    size = len(values) // batches
    means = values[:size * batches].reshape(batches, size).mean(axis=1)

    return float(values.mean()), float(stats.sem(means))


def ratio_batch_means(numerator, denominator, batches=50):
    """Ratio of totals with a batch-means standard error on per-batch ratios"""

    num = np.asarray(numerator, dtype=float)
    den = np.asarray(denominator, dtype=float)
    size = len(num) // batches

    if size == 0:
        raise ValueError(f"need at least {batches} samples, got {len(num)}")

    num_b = num[:size * batches].reshape(batches, size).sum(axis=1)
    den_b = den[:size * batches].reshape(batches, size).sum(axis=1)
    ratios = np.divide(num_b, den_b, out=np.zeros_like(num_b), where=den_b > 0)

    return float(num.sum() / den.sum()), float(stats.sem(ratios))


def rare_event_stderr(p, n, inflation=1.0):
    """
    Binomial standard error of a fraction `p` over `n` trials, variance scaled by `inflation`.
    Floor for batch means when events are too rare for every batch to see one.
    """

    if n <= 0:
        return 0.0
    return float(np.sqrt(inflation * p * (1.0 - p) / n))


def relative_error(measured, expected):
    return abs(measured - expected) / abs(expected)


def quiet_floor(bins, start, end, minimum=3.0):
    """Per-bin rejection level regarded as normal: max(minimum, mean + 3 sigma) before `end`"""

    window = np.asarray(bins[int(start):int(end)], dtype=float)

    if len(window) == 0:
        return minimum

    return max(minimum, float(window.mean() + 3.0 * window.std()))


def storm_duration(bins, burst_start, floor, quiet_period=10):
    """
    Seconds from the burst start until the first run of `quiet_period` consecutive
    1-second bins at or below `floor`. Runs never going quiet last until the horizon.
    """

    bins = np.asarray(bins, dtype=float)
    run = 0

    for i in range(int(burst_start), len(bins)):
        run = run + 1 if bins[i] <= floor else 0

        if run == quiet_period:
            return float(i - quiet_period + 1 - burst_start)

    return float(len(bins) - burst_start)


def retry_count_fit(counts, p_tilde, k):
    """Chi-square p-value of observed retry counts (index = retries) against the truncated geometric"""

    observed = np.asarray(counts, dtype=float)
    expected = np.asarray(retry_count_pmf(p_tilde, k)) * observed.sum()
    keep = expected > 0

    return float(stats.chisquare(observed[keep], expected[keep] * observed[keep].sum() / expected[keep].sum()).pvalue)
