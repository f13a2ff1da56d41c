import math

import numpy as np
import pytest
from hypothesis import assume, given
from hypothesis import strategies as st

from ocpc.bidopt import (
    bid_bounds,
    bid_bounds_array,
    campaign_roi,
    quality_ratio,
    sigma,
    sigma_array,
    single_click_roi,
    str1_bid,
)
from ocpc.errors import NegativeInput, NonPositiveBid, NonPositiveExpectedCvr, NonPositiveExponent


def test_roi_formulas():
    assert single_click_roi(0.01, 100, 2) == pytest.approx(0.5)
    assert single_click_roi(0.0, 100, 2) == 0.0
    assert single_click_roi(0.02, 50, 1) == pytest.approx(1.0)
    assert campaign_roi(0.0055, 200, 1.1) == pytest.approx(1.0)
    assert campaign_roi(0.013, 70, 1.3) == single_click_roi(0.013, 70, 1.3)
    assert campaign_roi(0.01, 0, 1) == 0.0
    with pytest.raises(NonPositiveBid):
        single_click_roi(0.01, 1, 0)
    with pytest.raises(NonPositiveBid):
        campaign_roi(0.01, 1, -1)


def test_quality_ratio():
    assert quality_ratio(0.012, 0.006) == pytest.approx(2.0)
    assert quality_ratio(0.007, 0.007) == 1.0
    assert quality_ratio(0.0, 0.007) == 0.0
    with pytest.raises(NonPositiveExpectedCvr):
        quality_ratio(0.01, 0)


def test_bounds_worked_rows():
    b = bid_bounds(2, 0.04, 1.5, 0.4)
    assert (b.lower_bid, b.upper_bid) == pytest.approx((2, 2.8))
    assert (b.lower_score, b.upper_score) == pytest.approx((0.08, 0.112))
    b = bid_bounds(1.5, 0.06, 1.3, 0.4)
    assert (b.lower_bid, b.upper_bid, b.lower_score) == pytest.approx((1.5, 1.95, 0.09))
    b = bid_bounds(1.5, 0.05, 0.8, 0.4)
    assert (b.lower_bid, b.upper_bid, b.lower_score) == pytest.approx((0.9, 1.5, 0.045))


def test_bounds_collapse_at_baseline_and_when_unauthorized():
    b = bid_bounds(1.7, 0.1, 1.0, 0.4)
    assert b.lower_bid == b.upper_bid == 1.7
    b = bid_bounds(1.7, 0.1, 3.0, 0.4, opt_authorized=False)
    assert b.lower_bid == b.upper_bid == 1.7


@given(
    bid=st.floats(1e-3, 1e3),
    pctr=st.floats(0, 1),
    ratio=st.floats(0, 50),
    ra=st.floats(0, 0.99),
    auth=st.booleans(),
)
def test_bounds_invariants(bid, pctr, ratio, ra, auth):
    b = bid_bounds(bid, pctr, ratio, ra, auth)
    assert 0 < b.lower_bid <= bid <= b.upper_bid
    assert b.lower_bid >= bid * (1 - ra) * (1 - 1e-15)
    assert b.upper_bid <= bid * (1 + ra) * (1 + 1e-15)
    assert b.lower_score <= b.upper_score
    # ROI soundness: a raised bid never outgrows the quality ratio
    if b.upper_bid > bid:
        assert b.upper_bid / bid <= ratio * (1 + 1e-12)
        assert campaign_roi(ratio, 1.0, b.upper_bid) >= campaign_roi(1.0, 1.0, bid) * (1 - 1e-12)
    lo, hi = bid_bounds_array(np.array([bid]), np.array([ratio]), np.array([ra]), np.array([auth]))
    assert (lo[0], hi[0]) == (b.lower_bid, b.upper_bid)


@given(st.floats(1, 50), st.floats(1, 50), st.floats(0, 0.99))
def test_upper_bound_monotone_in_ratio(r1, r2, ra):
    lo_r, hi_r = sorted((r1, r2))
    assert bid_bounds(1.0, 0.1, lo_r, ra).upper_bid <= bid_bounds(1.0, 0.1, hi_r, ra).upper_bid


def test_sigma_values():
    assert sigma(1, 3.7) == 0
    assert sigma(2, 2) == pytest.approx(0.6)
    assert sigma(0, 2) == -1
    assert sigma(1e300, 6) == 1.0
    with pytest.raises(NegativeInput):
        sigma(-1, 2)
    with pytest.raises(NonPositiveExponent):
        sigma(2, 0)


@given(st.floats(1e-6, 1e6), st.floats(1e-6, 1e6), st.floats(0.1, 10))
def test_sigma_monotone(x1, x2, w):
    lo, hi = sorted((x1, x2))
    assert sigma(lo, w) <= sigma(hi, w)


@given(st.floats(1e-3, 1e3), st.floats(0.1, 8))
def test_sigma_odd_symmetry_and_array(x, w):
    assert sigma(1 / x, w) == pytest.approx(-sigma(x, w), abs=1e-12)
    assert sigma_array(np.array([x]), w)[0] == pytest.approx(sigma(x, w), abs=1e-12)
    s = sigma(x, w)
    assert -1 <= s <= 1
    assert math.copysign(1, s) == math.copysign(1, x - 1) or s == 0


def test_str1_bid():
    assert str1_bid(2, 1, 2, 0.4) == 2
    assert str1_bid(2, 2, 2, 0.4) == pytest.approx(2.48)
    assert str1_bid(2, 1e6, 2, 0.4) < 2.8
    assert str1_bid(2, 1e6, 2, 0.4) == pytest.approx(2.8)


@given(st.floats(1e-3, 100), st.floats(1e-6, 1e3), st.floats(0.1, 8), st.floats(0.01, 0.99))
def test_str1_bid_inside_region(bid, ratio, w, ra):
    assume(1e-3 < ratio ** w < 1e3)
    b = str1_bid(bid, ratio, w, ra)
    assert bid * (1 - ra) < b < bid * (1 + ra)
