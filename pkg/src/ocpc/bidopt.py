"""ROI formulas and the feasible region for per-request bid adjustment."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import NegativeInput, NonPositiveBid, NonPositiveExpectedCvr, NonPositiveExponent


def single_click_roi(pcvr: float, ppb: float, bid: float) -> float:
    """Expected return of one click charged at ``bid``."""
    if not bid > 0:
        raise NonPositiveBid(f"bid must be > 0, got {bid}")
    return pcvr * ppb / bid


def campaign_roi(expected_cvr: float, ppb: float, bid: float) -> float:
    """Return over the campaign's whole traffic at a fixed bid."""
    if not bid > 0:
        raise NonPositiveBid(f"bid must be > 0, got {bid}")
    return expected_cvr * ppb / bid


def quality_ratio(pcvr: float, expected_cvr: float) -> float:
    if not expected_cvr > 0:
        raise NonPositiveExpectedCvr(f"expected_cvr must be > 0, got {expected_cvr}")
    return pcvr / expected_cvr


@dataclass(frozen=True)
class BidBounds:
    lower_bid: float
    upper_bid: float
    lower_score: float
    upper_score: float


def bid_bounds(
    bid: float, pctr: float, ratio: float, r_a: float, opt_authorized: bool = True
) -> BidBounds:
    """Feasible bid interval that keeps the campaign's ROI from falling.

    Below-baseline traffic (ratio < 1) may be bid down to ``bid * (1 - r_a)``;
    above-baseline traffic may be bid up to ``bid * min(1 + r_a, ratio)``.
    """
    if not bid > 0:
        raise NonPositiveBid(f"bid must be > 0, got {bid}")
    if not 0 <= r_a < 1:
        raise ValueError(f"r_a must be in [0, 1), got {r_a}")
    if ratio < 0:
        raise NegativeInput(f"quality ratio must be >= 0, got {ratio}")
    if not opt_authorized:
        lo = hi = bid
    elif ratio < 1:
        lo, hi = bid * (1 - r_a), bid
    else:
        lo, hi = bid, bid * min(1 + r_a, ratio)
    return BidBounds(lo, hi, pctr * lo, pctr * hi)


def bid_bounds_array(bid, ratio, r_a, authorized) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized lower/upper bid bounds; same rule as :func:`bid_bounds`."""
    low_quality = ratio < 1
    lo = np.where(low_quality, bid * (1 - r_a), bid)
    hi = np.where(low_quality, bid, bid * np.minimum(1 + r_a, ratio))
    if not authorized.all():
        lo = np.where(authorized, lo, bid)
        hi = np.where(authorized, hi, bid)
    return lo, hi


def sigma(x: float, w: float) -> float:
    """``(x**w - 1) / (x**w + 1)``: increasing in x, zero at x = 1, in [-1, 1)."""
    if x < 0:
        raise NegativeInput(f"sigma needs x >= 0, got {x}")
    if not w > 0:
        raise NonPositiveExponent(f"sigma needs w > 0, got {w}")
    try:
        xw = x**w
    except OverflowError:
        return 1.0
    if xw == float("inf"):
        return 1.0
    return (xw - 1.0) / (xw + 1.0)


def sigma_array(x: np.ndarray, w: float) -> np.ndarray:
    if not w > 0:
        raise NonPositiveExponent(f"sigma needs w > 0, got {w}")
    # tanh form avoids overflow for large x; sigma(0) = -1 handled by log(0) = -inf
    with np.errstate(divide="ignore"):
        return np.tanh(0.5 * w * np.log(x))


def str1_bid(bid: float, ratio: float, w: float, r_a: float) -> float:
    """Direct bid rule ``bid * (1 + sigma(ratio, w) * r_a)``."""
    if not bid > 0:
        raise NonPositiveBid(f"bid must be > 0, got {bid}")
    if not 0 <= r_a < 1:
        raise ValueError(f"r_a must be in [0, 1), got {r_a}")
    return bid * (1.0 + sigma(ratio, w) * r_a)
