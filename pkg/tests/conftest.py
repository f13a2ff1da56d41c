import math
import sys

import pytest
from hypothesis import HealthCheck, settings

from ocpc.bidopt import bid_bounds
from ocpc.domain import AdCandidate

settings.register_profile("default", deadline=None, suppress_health_check=[HealthCheck.too_slow])
settings.load_profile("default")


# The four-ad worked example. pcvr * ppb values (5, 3.6, 2, 2.5) and quality
# ratios are chosen to reproduce the listed bounds and f2 values; ad 4 needs
# r_a = 0.1 for its lower score of 0.036.
WORKED = [
    # id, pctr, bid, pcvr, ppb, expected_cvr, r_a
    (1, 0.04, 2.0, 0.010, 500.0, 0.005, 0.4),  # ratio 2 -> capped at 1.4
    (2, 0.05, 1.5, 0.008, 450.0, 0.010, 0.4),  # ratio 0.8
    (3, 0.06, 1.5, 0.010, 200.0, 0.010 / 1.3, 0.4),  # ratio 1.3
    (4, 0.04, 1.0, 0.005, 500.0, 0.010, 0.1),  # ratio 0.5
]


@pytest.fixture
def worked_candidates():
    return [
        AdCandidate(cid, bid, pctr, pcvr, ppb, exp, ra, category_id=cid % 2)
        for cid, pctr, bid, pcvr, ppb, exp, ra in WORKED
    ]


@pytest.fixture
def worked_pairs(worked_candidates):
    """(candidate, bounds) with the ratios fixed to the example's values."""
    ratios = {1: 1.5, 2: 0.8, 3: 1.3, 4: 0.5}
    return [
        (c, bid_bounds(c.bid, c.pctr, ratios[c.campaign_id], c.adjust_range))
        for c in worked_candidates
    ]


def close(a, b, tol=1e-9):
    return math.isclose(a, b, rel_tol=tol, abs_tol=tol)


def pytest_terminal_summary(terminalreporter):
    results = getattr(sys.modules.get("test_acceptance"), "RESULTS", None)
    if not results:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(results):
        title, status = results[number]
        terminalreporter.write_line(f"criterion {number}: {status}  {title}")
