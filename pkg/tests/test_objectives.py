import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from ocpc.domain import AdCandidate
from ocpc.errors import MissingAsr, ZeroNormalizer
from ocpc.objectives import (
    AuctionContext,
    ObjectiveKind,
    ObjectiveSpec,
    affine_coefficients,
    auction_context,
    context_for,
    evaluate,
)


def cand(pctr=0.04, pcvr=0.01, ppb=500.0, ra=0.4, pasr=None):
    return AdCandidate("c", 1.0, pctr, pcvr, ppb, 0.01, ra, pasr=pasr)


def test_f2_worked_rows():
    f2 = ObjectiveSpec.f2(1.0)
    assert evaluate(f2, cand(pcvr=0.01, ppb=500), 2.8) == pytest.approx(0.312)
    assert evaluate(f2, cand(pcvr=0.005, ppb=500), 1.0) == pytest.approx(0.14)


def test_f1_ignores_bid():
    f1 = ObjectiveSpec.f1()
    assert evaluate(f1, cand(pcvr=0.0), 5.0) == 0.0
    assert evaluate(f1, cand(), 1.0) == evaluate(f1, cand(), 9.0)


def test_sigma_fixed_point():
    c = cand()
    ctx = AuctionContext(mean_gmv=c.pcvr * c.ppb, mean_cvr=c.pcvr)
    assert evaluate(ObjectiveSpec.sigma_gmv(), c, 2.0, ctx) == pytest.approx(c.pctr * 2.0)


def test_context_means_over_full_list():
    cs = [cand(pcvr=0.01, ppb=100, pasr=0.1), cand(pcvr=0.03, ppb=200, pasr=0.3)]
    ctx = context_for(cs)
    assert ctx.mean_gmv == pytest.approx((1 + 6) / 2)
    assert ctx.mean_cvr == pytest.approx(0.02)
    assert ctx.mean_asr == pytest.approx(0.2)


def test_normalizer_errors():
    ctx = auction_context([0.0, 0.0], [10.0, 10.0])
    with pytest.raises(ZeroNormalizer):
        evaluate(ObjectiveSpec.sigma_gmv(), cand(pcvr=0.0), 1.0, ctx)
    ctx = context_for([cand(), cand(pasr=0.2)])
    assert ctx.mean_asr is None
    with pytest.raises(MissingAsr):
        evaluate(ObjectiveSpec.sigma_composite("asr"), cand(), 1.0, ctx)
    # pasr is only needed when the ASR signal is used
    evaluate(ObjectiveSpec.sigma_composite("cvr"), cand(), 1.0, ctx)


def test_from_name():
    assert ObjectiveSpec.from_name("f1").kind is ObjectiveKind.F1
    assert ObjectiveSpec.from_name("f2", alpha=3).alpha == 3
    s = ObjectiveSpec.from_name("sigma-asr", w=4)
    assert (s.name, s.w) == ("sigma-asr", 4)
    with pytest.raises(ValueError):
        ObjectiveSpec.from_name("f9")
    with pytest.raises(ValueError):
        ObjectiveSpec.f2(-1)
    with pytest.raises(ValueError):
        ObjectiveSpec.sigma_composite("gmv", 0)


specs = st.sampled_from(
    [ObjectiveSpec.f1(), ObjectiveSpec.f2(0.5), ObjectiveSpec.f2(3), ObjectiveSpec.sigma_gmv(),
     ObjectiveSpec.sigma_composite("cvr", 2), ObjectiveSpec.sigma_composite("asr", 6)]
)


@given(
    spec=specs,
    pctr=st.floats(1e-4, 1),
    pcvr=st.floats(1e-4, 1),
    ppb=st.floats(0.1, 1e3),
    pasr=st.floats(1e-3, 1),
    ra=st.floats(0, 0.99),
    b1=st.floats(0.01, 100),
    b2=st.floats(0.01, 100),
)
def test_monotone_in_bid_and_affine(spec, pctr, pcvr, ppb, pasr, ra, b1, b2):
    c = cand(pctr, pcvr, ppb, ra, pasr)
    ctx = auction_context([pcvr, 0.02], [ppb, 50.0], [pasr, 0.1])
    lo, hi = sorted((b1, b2))
    f_lo, f_hi = evaluate(spec, c, lo, ctx), evaluate(spec, c, hi, ctx)
    assert f_lo <= f_hi
    if spec.kind is not ObjectiveKind.F1 and lo < hi:
        assert f_lo < f_hi
    off, slope = affine_coefficients(
        spec, np.array([pctr]), np.array([pcvr]), np.array([ppb]), np.array([ra]), np.array([pasr]), ctx
    )
    assert off[0] + slope[0] * hi == pytest.approx(f_hi, rel=1e-9)
    if spec.kind is ObjectiveKind.SIGMA:
        assert pctr * hi * (1 - ra) * (1 - 1e-12) <= f_hi <= pctr * hi * (1 + ra) * (1 + 1e-12)


def test_f2_large_alpha_orders_like_ecpm():
    rng = np.random.default_rng(3)
    for _ in range(200):
        cs = [cand(pctr=rng.uniform(0.01, 0.1), pcvr=rng.uniform(0.001, 0.05), ppb=rng.uniform(1, 500))
              for _ in range(5)]
        bids = rng.uniform(0.5, 3, 5)
        spec = ObjectiveSpec.f2(1e9)
        by_f = int(np.argmax([evaluate(spec, c, b) for c, b in zip(cs, bids)]))
        by_ecpm = int(np.argmax([c.pctr * b for c, b in zip(cs, bids)]))
        assert by_f == by_ecpm
