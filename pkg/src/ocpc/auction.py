"""Greedy bound-tightening ranking, strategy orchestration and GSP pricing.

The ranking keeps the eCPM sort (pctr * b*) as the final display order
while choosing, slot by slot, the ad with the best composite index whose
score interval can still reach the top. The public functions take
:class:`AdCandidate` objects; the simulator calls :func:`run_batch` on
columnar data directly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Hashable, Mapping, NamedTuple, Optional, Sequence

import numpy as np

from .bidopt import BidBounds, bid_bounds_array, sigma_array
from .calibration import CvrHistory, calibrate_cvr_array, expected_cvr
from .domain import AdCandidate, CandidateBatch, PvRequest, Strategy, StrategyConfig, validate
from .errors import EmptyHistory, AllZeroAfterTrim, NoEligibleWinner, UnrankedOutcome
from .objectives import ObjectiveSpec, affine_coefficients, auction_context, context_for


class Placement(NamedTuple):
    campaign_id: Hashable
    b_star: float
    score: float
    weight: float  # score per unit of bid: pctr, or pctr * pcvr under Str3
    price_per_click: Optional[float] = None


@dataclass(frozen=True)
class AuctionOutcome:
    winners: tuple[Placement, ...]
    losers: tuple[Placement, ...]

    @property
    def slots_filled(self) -> int:
        return len(self.winners)

    @property
    def priced(self) -> bool:
        return all(p.price_per_click is not None for p in self.winners)


def greedy_rank(
    offset: np.ndarray,
    slope: np.ndarray,
    pctr: np.ndarray,
    order: np.ndarray,
    lower_bid: np.ndarray,
    upper_bid: np.ndarray,
    n_slots: int,
    eligible: Optional[np.ndarray] = None,
    trace: Optional[list] = None,
) -> tuple[list[int], np.ndarray, np.ndarray]:
    """Pick up to ``n_slots`` winners; return (winners, b_star, final score).

    Each round sorts the remaining ads by f(u(b*)) = offset + slope * u(b*),
    takes the first whose upper score reaches the largest lower score, then
    caps every other remaining ad's upper score at the winner's. Ads with
    ``pctr == 0`` never win. When ``trace`` is given, the upper-score vector
    after each round is appended to it.
    """
    u_b = np.array(upper_bid, dtype=float)
    l_b = np.asarray(lower_bid, dtype=float)
    u_s = pctr * u_b
    l_s = pctr * l_b
    remaining = pctr > 0
    if eligible is not None:
        remaining &= eligible
    if trace is None:
        # Round j's threshold is at least the j-th largest lower score and
        # upper scores only shrink, so anything below the n_slots-th largest
        # lower score can never qualify. Winners' caps sit above that level,
        # so dropping these ads leaves their final bounds untouched too.
        pool = l_s[remaining]
        if pool.size > n_slots:
            floor = np.partition(pool, pool.size - n_slots)[pool.size - n_slots]
            remaining &= u_s >= floor
    # the surviving pool is small; plain lists beat per-round numpy calls
    live = np.flatnonzero(remaining)
    us = u_s[live].tolist()
    ub = u_b[live].tolist()
    lb = l_b[live].tolist()
    ls = l_s[live].tolist()
    ct = pctr[live].tolist()
    off = np.asarray(offset, dtype=float)[live].tolist()
    slp = np.asarray(slope, dtype=float)[live].tolist()
    tie = np.asarray(order)[live].tolist()
    pool = list(range(len(live)))
    picked: list[int] = []
    while len(picked) < n_slots and pool:
        t = max(ls[i] for i in pool)
        cand = [i for i in pool if us[i] >= t]
        if not cand:
            # only reachable through rounding; the ad attaining t always qualifies
            cand = [i for i in pool if ls[i] == t]
        k = max(cand, key=lambda i: (off[i] + slp[i] * ub[i], -tie[i]))
        picked.append(k)
        pool.remove(k)
        cap = us[k]
        for i in pool:
            if us[i] > cap:
                us[i] = cap
                # keep b* inside [l, u] despite the division's rounding
                ub[i] = max(min(ub[i], cap / ct[i]), lb[i])
        if trace is not None:
            u_s[live] = us
            trace.append(u_s.copy())
    u_s[live] = us
    u_b[live] = ub
    return live[picked].tolist(), u_b, u_s


def _sort_select(score, weight, order, n_slots, reserve=0.0) -> list[int]:
    ok = (weight > 0) & (score >= reserve)
    idx = np.flatnonzero(ok)
    if idx.size == 0:
        return []
    ranked = idx[np.lexsort((order[idx], -score[idx]))]
    return ranked[:n_slots].tolist()


def _gsp(win_scores, win_weights, win_bstar, best_loser: float, reserve: float) -> np.ndarray:
    nxt = np.append(np.asarray(win_scores, dtype=float)[1:], best_loser)
    nxt = np.maximum(nxt, reserve)
    with np.errstate(divide="ignore", invalid="ignore"):
        price = nxt / np.asarray(win_weights, dtype=float)
    # rounding guard: next score never exceeds own score, so price <= b*
    return np.minimum(price, win_bstar)


@dataclass
class BatchOutcome:
    """Array-level result of one auction (indices refer to the input batch)."""

    winners: np.ndarray
    b_star: np.ndarray
    score: np.ndarray
    weight: np.ndarray
    price: np.ndarray
    pcvr: np.ndarray
    ratio: np.ndarray
    r_a: np.ndarray
    lower_bid: np.ndarray
    upper_bid: np.ndarray


def quality_ratios(
    pcvr: np.ndarray,
    batch: CandidateBatch,
    histories: Optional[Mapping[Hashable, CvrHistory]] = None,
    trim_fraction: float = 0.10,
) -> np.ndarray:
    """pcvr / expected_cvr with a neutral ratio of 1 when the baseline is unknown."""
    exp = batch.expected_cvr
    missing = ~(exp > 0)
    if missing.any():
        exp = exp.copy()
        if histories:
            for i in np.flatnonzero(missing):
                hist = histories.get(batch.campaign_id[i])
                if hist is None:
                    continue
                try:
                    exp[i] = expected_cvr(hist, trim_fraction)
                except (EmptyHistory, AllZeroAfterTrim):
                    pass
        missing = ~(exp > 0)
        exp[missing] = 1.0
        ratio = pcvr / exp
        ratio[missing] = 1.0
        return ratio
    return pcvr / exp


def run_batch(
    batch: CandidateBatch,
    n_slots: int,
    config: StrategyConfig,
    histories: Optional[Mapping[Hashable, CvrHistory]] = None,
) -> BatchOutcome:
    """Calibrate, bound, rank and price one auction given in columnar form."""
    pctr, bid = batch.pctr, batch.bid
    if not (pctr > 0).any():
        raise NoEligibleWinner("every candidate has pctr == 0")
    if config.calibrate:
        pcvr = calibrate_cvr_array(batch.pcvr, config.calibration_threshold, config.log_base)
    else:
        pcvr = batch.pcvr
    ratio = quality_ratios(pcvr, batch, histories, config.trim_fraction)
    r_a = batch.r_a if config.ra_override is None else np.full(len(batch), config.ra_override)
    strategy = config.strategy
    reserve = config.reserve_score

    weight = pctr
    if strategy is Strategy.STR2:
        lo, hi = bid_bounds_array(bid, ratio, r_a, batch.authorized)
        spec = config.objective
        ctx = auction_context(pcvr, batch.ppb, batch.pasr)
        offset, slope = affine_coefficients(spec, pctr, pcvr, batch.ppb, r_a, batch.pasr, ctx)
        winners, b_star, score = greedy_rank(
            offset, slope, pctr, batch.order, lo, hi, n_slots, eligible=pctr * hi >= reserve
        )
    else:
        if strategy is Strategy.STR1:
            adj = np.where(batch.authorized, sigma_array(ratio, config.w) * r_a, 0.0)
            b_star = bid * (1.0 + adj)
            lo, hi = bid * (1 - r_a), bid * (1 + r_a)
        else:
            b_star = bid
            lo = hi = bid
        if strategy is Strategy.STR3:
            weight = pctr * pcvr
        score = weight * b_star
        winners = _sort_select(score, weight, batch.order, n_slots, reserve)

    win = np.asarray(winners, dtype=np.int64)
    if win.size:
        losers = np.ones(len(batch), dtype=bool)
        losers[win] = False
        best_loser = float(score[losers].max()) if losers.any() else 0.0
        price = _gsp(score[win], weight[win], b_star[win], best_loser, reserve)
    else:
        price = np.empty(0)
    return BatchOutcome(win, b_star, score, weight, price, pcvr, ratio, r_a, lo, hi)


def _to_outcome(batch: CandidateBatch, res: BatchOutcome, priced: bool) -> AuctionOutcome:
    win = res.winners.tolist()
    winset = set(win)
    ids = batch.campaign_id
    winners = tuple(
        Placement(
            ids[i],
            float(res.b_star[i]),
            float(res.score[i]),
            float(res.weight[i]),
            float(res.price[j]) if priced else None,
        )
        for j, i in enumerate(win)
    )
    losers = tuple(
        Placement(ids[i], float(res.b_star[i]), float(res.score[i]), float(res.weight[i]))
        for i in range(len(batch))
        if i not in winset
    )
    return AuctionOutcome(winners, losers)


def rank(
    candidates: Sequence[tuple[AdCandidate, BidBounds]],
    spec: ObjectiveSpec,
    n_slots: int,
    ctx=None,
) -> AuctionOutcome:
    """Greedy ranking over precomputed bounds; returns an unpriced outcome.

    The sigma objectives are normalized over the full candidate list unless
    an explicit ``ctx`` is supplied.
    """
    if n_slots < 1:
        raise ValueError("n_slots must be >= 1")
    cands = [c for c, _ in candidates]
    if not any(c.pctr > 0 for c in cands):
        raise NoEligibleWinner("every candidate has pctr == 0")
    batch = CandidateBatch.from_candidates(cands)
    lo = np.array([b.lower_bid for _, b in candidates], dtype=float)
    hi = np.array([b.upper_bid for _, b in candidates], dtype=float)
    if ctx is None and spec.kind.value == "sigma":
        ctx = context_for(cands)
    offset, slope = affine_coefficients(
        spec, batch.pctr, batch.pcvr, batch.ppb, batch.r_a, batch.pasr, ctx
    )
    winners, b_star, score = greedy_rank(offset, slope, batch.pctr, batch.order, lo, hi, n_slots)
    res = BatchOutcome(
        np.asarray(winners, dtype=np.int64), b_star, score, batch.pctr,
        np.empty(0), batch.pcvr, np.ones(len(batch)), batch.r_a, lo, hi,
    )
    return _to_outcome(batch, res, priced=False)


def str3_rank(candidates: Sequence[AdCandidate], n_slots: int) -> AuctionOutcome:
    """Top ``n_slots`` by pctr * pcvr * bid, bids untouched (unpriced)."""
    batch = CandidateBatch.from_candidates(list(candidates))
    weight = batch.pctr * batch.pcvr
    score = weight * batch.bid
    winners = _sort_select(score, weight, batch.order, n_slots)
    res = BatchOutcome(
        np.asarray(winners, dtype=np.int64), batch.bid, score, weight,
        np.empty(0), batch.pcvr, np.ones(len(batch)), batch.r_a, batch.bid, batch.bid,
    )
    return _to_outcome(batch, res, priced=False)


def gsp_price(outcome: AuctionOutcome, reserve_score: float = 0.0) -> AuctionOutcome:
    """Charge each winner the score of the ad ranked just below it.

    The price per click is ``max(next_score, reserve) / weight`` where the
    next score is the following winner's, or the best loser's for the last
    slot. Scores must be nonincreasing in display order.
    """
    w = outcome.winners
    if not w:
        return outcome
    scores = np.array([p.score for p in w])
    if (np.diff(scores) > 0).any():
        raise UnrankedOutcome("winner scores are not in nonincreasing order")
    best_loser = max((p.score for p in outcome.losers), default=0.0)
    if best_loser > scores[-1]:
        raise UnrankedOutcome("a loser outscores the last winner")
    price = _gsp(scores, [p.weight for p in w], [p.b_star for p in w], best_loser, reserve_score)
    return replace(
        outcome, winners=tuple(p._replace(price_per_click=float(c)) for p, c in zip(w, price))
    )


def run_ocpc(
    request: PvRequest,
    config: StrategyConfig,
    histories: Optional[Mapping[Hashable, CvrHistory]] = None,
) -> AuctionOutcome:
    """Validate, then run the configured strategy end to end with pricing."""
    validate(request)
    batch = CandidateBatch.from_candidates(request.candidates)
    res = run_batch(batch, request.n_slots, config, histories)
    return _to_outcome(batch, res, priced=True)
