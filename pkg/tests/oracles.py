"""Independent reference implementations used as test oracles."""

import math


def window_stats_reference(w):
    """Mean, SD, RMS, kurtosis, shape factor, crest factor by explicit loops."""
    n = len(w)
    mean = math.fsum(w) / n
    # a window of identical values has no spread, whatever the rounding of its mean
    flat = max(w) == min(w)
    var = 0.0 if flat else math.fsum((v - mean) ** 2 for v in w) / n
    sd = math.sqrt(var)
    rms = math.sqrt(math.fsum(v * v for v in w) / n)
    m4 = math.fsum((v - mean) ** 4 for v in w) / n
    kurt = m4 / var**2 if not flat and var**2 > 0 else 0.0
    abs_mean = math.fsum(abs(v) for v in w) / n
    sf = rms / abs_mean if rms > 0 else 1.0
    cf = max(abs(v) for v in w) / rms if rms > 0 else 1.0
    return [mean, sd, rms, kurt, sf, cf]


def enumerate_dtw(x, y, band=None):
    """Minimum over every monotone, contiguous endpoint-to-endpoint path, by explicit enumeration."""
    n, m = len(x), len(y)
    best = math.inf

    def walk(i, j, acc):
        nonlocal best
        if band is not None and abs(i - j) > band:
            return
        acc += (x[i] - y[j]) ** 2
        if (i, j) == (n - 1, m - 1):
            best = min(best, acc)
            return
        if i + 1 < n:
            walk(i + 1, j, acc)
        if j + 1 < m:
            walk(i, j + 1, acc)
        if i + 1 < n and j + 1 < m:
            walk(i + 1, j + 1, acc)

    walk(0, 0, 0.0)
    return math.sqrt(best)
