import json
import math

import numpy as np
import pytest

from ocpc.domain import AdCandidate, Campaign, PvRequest, Strategy, StrategyConfig
from ocpc.errors import UnorderedLog
from ocpc.logformat import write_requests
from ocpc.metrics import Outcome, aggregate, compare
from ocpc.simulator import (
    LEDGER_COLUMNS,
    Ledger,
    grouped_totals,
    per_campaign_report,
    per_category_report,
    replay,
    replay_many,
)

STR0 = StrategyConfig(Strategy.STR0)
STR2 = StrategyConfig(Strategy.STR2)


def ad(cid, pctr, bid, pcvr=0.005, ppb=100.0, exp=0.005, ra=0.4, cat=None):
    return AdCandidate(cid, bid, pctr, pcvr, ppb, exp, ra, category_id=cat)


def random_requests(n_pv, n_ads=12, n_camp=30, seed=0, n_slots=3):
    rng = np.random.default_rng(seed)
    bids = np.round(rng.lognormal(0, 0.4, n_camp), 2)
    ppb = np.round(rng.lognormal(4, 0.5, n_camp), 2)
    exp = rng.uniform(0.003, 0.01, n_camp)
    out = []
    for pv in range(n_pv):
        ids = rng.choice(n_camp, n_ads, replace=False)
        cands = [
            ad(int(c), float(rng.beta(2, 60)), float(bids[c]), float(rng.uniform(0.001, 0.02)),
               float(ppb[c]), float(exp[c]), 0.4, int(c) % 4)
            for c in ids
        ]
        out.append(PvRequest(pv, cands, n_slots, timestamp=1000 + pv, user_id=pv % 7, position_id=0))
    return out


def test_one_pv_str0_hand_accounting():
    req = PvRequest("pv0", [ad("a", 0.05, 2.0), ad("b", 0.04, 2.0), ad("c", 0.1, 0.5)], n_slots=2)
    led = replay([req], STR0)
    cols = led.columns
    assert cols["campaign_id"].tolist() == ["a", "b"]
    assert cols["slot"].tolist() == [0, 1]
    # GSP: the next score divided by own pctr
    np.testing.assert_allclose(cols["price_per_click"], [0.08 / 0.05, 0.05 / 0.04])
    np.testing.assert_array_equal(cols["b_star"], [2.0, 2.0])
    r = aggregate(led)
    assert r.clicks == pytest.approx(0.09)
    assert r.cost == pytest.approx(0.05 * 1.6 + 0.04 * 1.25)
    assert r.gmv == pytest.approx(0.09 * 0.005 * 100)


def test_zero_budget_campaign_never_serves():
    reqs = random_requests(40)
    led = replay(reqs, STR2, campaigns=[Campaign(3, budget=0.0)])
    assert 3 not in set(led.columns["campaign_id"].tolist())
    free = replay(reqs, STR2)
    assert 3 in set(free.columns["campaign_id"].tolist())


def test_budget_exclusion_keeps_the_crossing_impression():
    reqs = [PvRequest(i, [ad("x", 0.1, 2.0), ad("y", 0.05, 1.0)], 1, timestamp=i) for i in range(5)]
    # x pays 0.05/0.1 = 0.5 per click, 0.05 per impression in expectation
    led = replay(reqs, STR0, campaigns={"x": Campaign("x", budget=0.07)})
    assert led.columns["campaign_id"].tolist() == ["x", "x", "y", "y", "y"]
    state = led.campaign_states["x"]
    assert state.budget_remaining == 0.0
    assert state.cost == pytest.approx(0.1)


def test_budget_conservation():
    reqs = random_requests(200, seed=4)
    budgets = [Campaign(c, budget=0.02 * (1 + c % 5)) for c in range(30)]
    led = replay(reqs, STR2, campaigns=budgets)
    per = grouped_totals(led)
    for cid, st in led.campaign_states.items():
        spent = per[cid].cost if cid in per else 0.0
        assert st.cost == pytest.approx(spent, abs=1e-12)
        assert st.budget_remaining >= 0
        initial = led.initial_budgets[cid]
        assert st.budget_remaining == pytest.approx(max(initial - st.cost, 0.0), abs=1e-12)


def test_replay_is_deterministic():
    reqs = random_requests(80, seed=2)
    a, b = replay(reqs, STR2), replay(reqs, STR2)
    for k in LEDGER_COLUMNS:
        np.testing.assert_array_equal(a.columns[k], b.columns[k])


def test_replay_many_matches_separate_runs():
    reqs = random_requests(60, seed=8)
    budgets = [Campaign(c, budget=0.05) for c in range(30)]
    cfgs = [STR0, STR2, StrategyConfig(Strategy.STR3), StrategyConfig(Strategy.STR1)]
    many = replay_many(reqs, cfgs, campaigns=budgets)
    for cfg, led in zip(cfgs, many):
        solo = replay(reqs, cfg, campaigns=budgets)
        assert led.columns["campaign_id"].tolist() == solo.columns["campaign_id"].tolist()
        np.testing.assert_array_equal(led.columns["price_per_click"], solo.columns["price_per_click"])


def test_unordered_log_raises():
    reqs = [PvRequest(0, [ad("a", 0.1, 1)], timestamp=5), PvRequest(1, [ad("a", 0.1, 1)], timestamp=4)]
    with pytest.raises(UnorderedLog):
        replay(reqs, STR0)


def test_malformed_lines_are_skipped(tmp_path):
    path = tmp_path / "log.jsonl"
    write_requests(path, random_requests(5, seed=1))
    lines = path.read_text().splitlines()
    broken = json.loads(lines[3])
    del broken["pctr"]
    lines[3] = json.dumps(broken)
    lines.insert(2, "{not json")
    path.write_text("\n".join(lines) + "\n")
    led = replay(path, STR2)
    assert sorted(set(led.columns["pv_id"].tolist())) == [0, 1, 3, 4]
    assert led.meta["skipped_pv"] == 1
    assert led.meta["n_pv"] == 4
    assert len(led.meta["log_sha256"]) == 64


def test_file_and_memory_replay_agree(tmp_path):
    reqs = random_requests(30, seed=6)
    path = tmp_path / "log.jsonl"
    write_requests(path, reqs)
    a, b = replay(path, STR2), replay(reqs, STR2)
    assert a.columns["campaign_id"].tolist() == b.columns["campaign_id"].tolist()
    np.testing.assert_allclose(a.columns["b_star"], b.columns["b_star"], rtol=1e-12)


def test_str0_identity():
    reqs = random_requests(100, seed=3)
    led = replay(reqs, STR0)
    cols = led.columns
    np.testing.assert_array_equal(cols["b_star"], cols["bid"])
    by_pv = {}
    for pv, cid in zip(cols["pv_id"].tolist(), cols["campaign_id"].tolist()):
        by_pv.setdefault(pv, []).append(cid)
    for req in reqs:
        ranked = sorted(req.candidates, key=lambda c: (-c.pctr * c.bid, c.campaign_id))
        assert by_pv[req.pv_id] == [c.campaign_id for c in ranked[: req.n_slots]]
    r = aggregate(led)
    assert all(v in (0, None) for v in compare(r, r).values())


def test_csv_round_trip(tmp_path):
    led = replay(random_requests(20, seed=5), STR2)
    led.to_csv(tmp_path / "l.csv")
    back = Ledger.from_csv(tmp_path / "l.csv")
    for k in ("pv_id", "slot", "campaign_id", "category_id"):
        assert back.columns[k].tolist() == led.columns[k].tolist()
    for k in ("pctr", "b_star", "price_per_click"):
        np.testing.assert_allclose(back.columns[k], led.columns[k], atol=5e-7)
    assert np.isnan(back.columns["pasr"]).all()
    back.to_csv(tmp_path / "again.csv")
    assert (tmp_path / "again.csv").read_bytes() == (tmp_path / "l.csv").read_bytes()


def rows(spec):
    """Ledger from (campaign, category, pctr, pcvr, ppb, price) tuples."""
    cols = {k: [] for k in ("pv_id", "slot", "campaign_id", "category_id", "pctr", "pcvr", "ppb", "price_per_click")}
    for i, (c, cat, p, v, g, q) in enumerate(spec):
        for k, x in zip(cols, (i, 0, c, cat, p, v, g, q)):
            cols[k].append(x)
    return Ledger.from_columns(cols)


def test_per_campaign_self_comparison():
    led = replay(random_requests(80, seed=9), STR0)
    rep = per_campaign_report(led, led, min_conversions=0)
    assert all(v in (0, None) for r in rep.rows for v in r.deltas.values())
    assert rep.proportions[Outcome.IMPROVED.value] == 0


def test_per_campaign_hand_accounting_and_filter():
    base = rows([("a", 1, 0.1, 0.5, 10, 1.0), ("b", 1, 0.1, 0.01, 10, 1.0)])
    test = rows([("a", 1, 0.1, 0.6, 10, 0.8), ("a", 1, 0.1, 0.6, 10, 0.8), ("b", 1, 0.1, 0.01, 10, 2.0)])
    rep = per_campaign_report(test, base, min_conversions=0.05)
    a, b = rep.rows
    # a: gmv 0.5 -> 1.2, cost 0.1 -> 0.16, pv 1 -> 2
    assert a.deltas["gmv"] == pytest.approx(1.4)
    assert a.deltas["cost"] == pytest.approx(0.6)
    assert a.deltas["impressions"] == pytest.approx(1.0)
    assert a.deltas["roi"] == pytest.approx((1.2 / 0.16) / 5 - 1)
    assert a.outcome is Outcome.IMPROVED and a.included
    # b converts 0.001 expected times: excluded from the proportions
    assert not b.included
    assert rep.proportions[Outcome.IMPROVED.value] == 1.0


def test_per_category_shifts():
    base = rows([("a", "x", 0.1, 0.1, 10, 1.0), ("b", "y", 0.1, 0.1, 10, 1.0)])
    test = rows([("a", "x", 0.1, 0.1, 10, 1.0), ("a", "x", 0.1, 0.1, 10, 1.0)])
    rep = per_category_report(test, base)
    x, y = rep.rows
    assert (x.base_share, x.test_share) == (0.5, 1.0)
    assert x.share_variation == pytest.approx(1.0)
    assert y.share_variation == pytest.approx(-1.0)
    same = per_category_report(base, base)
    assert all(r.share_variation == 0 for r in same.rows)
    assert math.fsum(v for v in same.by_count.values() if v) == pytest.approx(1.0)
