"""pCVR calibration, baseline CVR estimation and predicted-vs-real gap curves."""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Hashable, Iterable, Optional, Sequence

import numpy as np

from .errors import AllZeroAfterTrim, EmptyHistory, EmptySamples, NonPositiveThreshold


def calibrate_cvr(p: float, tc: float = 0.012, base: float = math.e) -> float:
    """Compress a predicted CVR above the threshold ``tc`` logarithmically.

    Values below ``tc`` pass through; above it the result is
    ``tc * (1 + log(p / tc))``, which is continuous at ``tc`` and never
    exceeds ``p`` for the natural log.
    """
    if not tc > 0:
        raise NonPositiveThreshold(f"calibration threshold must be > 0, got {tc}")
    if p < tc:
        return p
    lg = math.log(p / tc) if base == math.e else math.log(p / tc, base)
    return tc * (1.0 + lg)


def calibrate_cvr_array(p: np.ndarray, tc: float = 0.012, base: float = math.e) -> np.ndarray:
    if not tc > 0:
        raise NonPositiveThreshold(f"calibration threshold must be > 0, got {tc}")
    p = np.asarray(p, dtype=float)
    high = p >= tc
    if not high.any():
        return p
    out = p.copy()
    logs = np.log(p[high] / tc)
    if base != math.e:
        logs /= math.log(base)
    out[high] = tc * (1.0 + logs)
    return out


@dataclass
class CvrHistory:
    campaign_id: Hashable
    observations: Sequence[float] = field(default_factory=list)


def trimmed_mean(values: Sequence[float] | np.ndarray, trim_fraction: float = 0.10) -> float:
    """Mean after dropping ``floor(n * trim_fraction)`` values from each end."""
    if not 0 <= trim_fraction < 0.5:
        raise ValueError(f"trim_fraction must be in [0, 0.5), got {trim_fraction}")
    arr = np.sort(np.asarray(values, dtype=float))
    n = len(arr)
    if n == 0:
        raise EmptyHistory("no observations to average")
    # exact decimal product, so 0.1 * 30 trims 3 and not 2 on a rounding slip
    k = math.floor(Fraction(str(trim_fraction)) * n)
    kept = arr[k : n - k]
    # fsum keeps the result independent of summation order
    return math.fsum(kept.tolist()) / len(kept)


def expected_cvr(history: CvrHistory | Sequence[float], trim_fraction: float = 0.10) -> float:
    """Trimmed-mean estimate of a campaign's baseline conversion rate.

    Raises ``AllZeroAfterTrim`` when the estimate is zero; callers then use
    a neutral quality ratio of 1.
    """
    obs = history.observations if isinstance(history, CvrHistory) else history
    if len(obs) == 0:
        raise EmptyHistory("CVR history is empty")
    arr = np.asarray(obs, dtype=float)
    if ((arr < 0) | (arr > 1)).any():
        raise ValueError("CVR observations must lie in [0, 1]")
    mean = trimmed_mean(arr, trim_fraction)
    if mean <= 0:
        raise AllZeroAfterTrim("trimmed CVR mean is zero")
    return mean


@dataclass(frozen=True)
class GapBucket:
    mean_predicted: float
    mean_real: float
    ratio: Optional[float]  # None when mean_real == 0
    count: int


@dataclass
class GapCurve:
    buckets: list[GapBucket]

    def rows(self) -> list[tuple]:
        return [
            (i, b.mean_predicted, b.mean_real, b.ratio, b.count) for i, b in enumerate(self.buckets)
        ]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["bucket_index", "mean_pred", "mean_real", "ratio", "count"])
            for i, mp, mr, ratio, n in self.rows():
                w.writerow([i, f"{mp:.6f}", f"{mr:.6f}", "NA" if ratio is None else f"{ratio:.6f}", n])


def gap_curve(samples: Iterable[tuple[float, float]], n_buckets: int = 20) -> GapCurve:
    """Equal-frequency buckets of (predicted, realized) pairs, by predicted value.

    When the sample count does not divide evenly the leading buckets get one
    extra sample each.
    """
    data = np.asarray(list(samples), dtype=float)
    if data.size == 0:
        raise EmptySamples("gap curve needs at least one sample")
    if n_buckets < 1:
        raise ValueError("n_buckets must be >= 1")
    data = data.reshape(-1, 2)
    idx = np.argsort(data[:, 0], kind="stable")
    pred, real = data[idx, 0], data[idx, 1]
    n = len(pred)
    k = min(n_buckets, n)
    base, extra = divmod(n, k)
    buckets = []
    start = 0
    for i in range(k):
        size = base + (1 if i < extra else 0)
        mp = float(pred[start : start + size].mean())
        mr = float(real[start : start + size].mean())
        buckets.append(GapBucket(mp, mr, mp / mr if mr > 0 else None, size))
        start += size
    return GapCurve(buckets)
