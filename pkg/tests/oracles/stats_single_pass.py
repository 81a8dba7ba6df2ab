"""Welford single-pass mean and population std, row by row."""

import math


def welford(rows):
    n = 0
    mean = None
    m2 = None
    for row in rows:
        n += 1
        if mean is None:
            mean = [0.0] * len(row)
            m2 = [0.0] * len(row)
        for j, v in enumerate(row):
            d = v - mean[j]
            mean[j] += d / n
            m2[j] += d * (v - mean[j])
    return mean, [math.sqrt(s / n) for s in m2]
