"""Ranking-quality metrics and expected-value business metrics.

Undefined ratios (0/0, x/0) are reported as ``None`` rather than zero so
that "no data" is never confused with "zero performance".
"""

from __future__ import annotations

import math
from collections import defaultdict
from dataclasses import dataclass, fields
from enum import Enum
from typing import Hashable, Iterable, Mapping, Optional, Sequence

import numpy as np

from .errors import DegenerateLabels, EmptyLedger, EmptyRecords, NoValidGroups


@dataclass(frozen=True)
class LabeledScore:
    user_id: Hashable
    position_id: Hashable
    score: float
    label: int


def _ranks(x: np.ndarray) -> np.ndarray:
    """1-based ranks with ties sharing their average rank."""
    order = np.argsort(x, kind="mergesort")
    xs = x[order]
    n = len(x)
    # boundaries of runs of equal values
    starts = np.flatnonzero(np.r_[True, xs[1:] != xs[:-1]])
    ends = np.r_[starts[1:], n]
    avg = (starts + ends + 1) / 2.0
    ranks = np.empty(n)
    ranks[order] = np.repeat(avg, ends - starts)
    return ranks


def auc_arrays(scores, labels) -> float:
    scores = np.asarray(scores, dtype=float)
    labels = np.asarray(labels)
    pos = labels == 1
    n_pos = int(pos.sum())
    n_neg = len(labels) - n_pos
    if n_pos == 0 or n_neg == 0:
        raise DegenerateLabels("AUC needs at least one positive and one negative label")
    r = _ranks(scores)
    return (float(r[pos].sum()) - n_pos * (n_pos + 1) / 2.0) / (n_pos * n_neg)


def auc(samples: Sequence[LabeledScore] | Sequence[tuple[float, int]]) -> float:
    """Mann-Whitney AUC; tied scores count one half."""
    samples = list(samples)
    if samples and isinstance(samples[0], LabeledScore):
        return auc_arrays([s.score for s in samples], [s.label for s in samples])
    arr = np.asarray(samples, dtype=float).reshape(-1, 2)
    return auc_arrays(arr[:, 0], arr[:, 1].astype(int))


@dataclass(frozen=True)
class GaucResult:
    value: float
    groups_used: int
    groups_removed: int


def gauc_details(samples: Iterable[LabeledScore], weight_mode: str = "impressions") -> GaucResult:
    if weight_mode not in ("impressions", "clicks"):
        raise ValueError(f"weight_mode must be 'impressions' or 'clicks', got {weight_mode!r}")
    groups: dict = defaultdict(lambda: ([], []))
    for s in samples:
        sc, lb = groups[(s.user_id, s.position_id)]
        sc.append(s.score)
        lb.append(s.label)
    num = 0.0
    den = 0.0
    used = removed = 0
    last = math.nan
    for sc, lb in groups.values():
        lb = np.asarray(lb)
        clicks = int((lb == 1).sum())
        if clicks == 0 or clicks == len(lb):
            removed += 1
            continue
        w = len(lb) if weight_mode == "impressions" else clicks
        last = auc_arrays(sc, lb)
        num += w * last
        den += w
        used += 1
    if used == 0:
        raise NoValidGroups("every (user, position) group has a single label class")
    # w * a / w can be off by an ulp; one group is its own AUC
    return GaucResult(last if used == 1 else num / den, used, removed)


def gauc(samples: Iterable[LabeledScore], weight_mode: str = "impressions") -> float:
    """Weighted mean of per-(user, position) AUCs; single-class groups dropped."""
    return gauc_details(samples, weight_mode).value


def _ratio(num: float, den: float, scale: float = 1.0) -> Optional[float]:
    return scale * num / den if den != 0 else None


@dataclass(frozen=True)
class MetricsReport:
    impressions: float
    clicks: float
    conversions: float
    gmv: float
    cost: float
    asr_adds: float
    rpm: Optional[float]
    gpm: Optional[float]
    roi: Optional[float]
    ctr: Optional[float]
    cvr: Optional[float]
    ppc: Optional[float]
    asr: Optional[float]

    def as_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}


@dataclass
class Totals:
    """Mergeable expected-value accumulator."""

    impressions: float = 0.0
    clicks: float = 0.0
    conversions: float = 0.0
    gmv: float = 0.0
    cost: float = 0.0
    asr_adds: float = 0.0
    asr_clicks: float = 0.0

    def __add__(self, other: "Totals") -> "Totals":
        return Totals(*(getattr(self, f.name) + getattr(other, f.name) for f in fields(self)))

    @classmethod
    def from_columns(cls, pctr, pcvr, ppb, price, pasr=None) -> "Totals":
        pctr = np.asarray(pctr, dtype=float)
        pcvr = np.asarray(pcvr, dtype=float)
        conv = pctr * pcvr
        t = cls(
            impressions=float(len(pctr)),
            clicks=math.fsum(pctr.tolist()),
            conversions=math.fsum(conv.tolist()),
            gmv=math.fsum((conv * np.asarray(ppb, dtype=float)).tolist()),
            cost=math.fsum((pctr * np.asarray(price, dtype=float)).tolist()),
        )
        if pasr is not None:
            pasr = np.asarray(pasr, dtype=float)
            has = ~np.isnan(pasr)
            t.asr_adds = math.fsum((pctr[has] * pasr[has]).tolist())
            t.asr_clicks = math.fsum(pctr[has].tolist())
        return t

    def report(self) -> MetricsReport:
        return MetricsReport(
            impressions=self.impressions,
            clicks=self.clicks,
            conversions=self.conversions,
            gmv=self.gmv,
            cost=self.cost,
            asr_adds=self.asr_adds,
            rpm=_ratio(self.cost, self.impressions, 1000.0),
            gpm=_ratio(self.gmv, self.impressions, 1000.0),
            roi=_ratio(self.gmv, self.cost),
            ctr=_ratio(self.clicks, self.impressions),
            cvr=_ratio(self.conversions, self.clicks),
            ppc=_ratio(self.cost, self.clicks),
            asr=_ratio(self.asr_adds, self.asr_clicks),
        )


def _ledger_columns(ledger) -> Mapping[str, np.ndarray]:
    if hasattr(ledger, "columns"):
        return ledger.columns
    rows = list(ledger)
    if not rows:
        raise EmptyLedger("ledger has no impressions")
    keys = ("pctr", "pcvr", "ppb", "price_per_click")
    cols = {k: np.array([r[k] for r in rows], dtype=float) for k in keys}
    cols["pasr"] = np.array(
        [math.nan if r.get("pasr") is None else r["pasr"] for r in rows], dtype=float
    )
    return cols


def totals(ledger) -> Totals:
    cols = _ledger_columns(ledger)
    if len(cols["pctr"]) == 0:
        raise EmptyLedger("ledger has no impressions")
    return Totals.from_columns(
        cols["pctr"], cols["pcvr"], cols["ppb"], cols["price_per_click"], cols.get("pasr")
    )


def aggregate(ledger) -> MetricsReport:
    """Expected-value report over winning impressions.

    Each impression contributes pctr clicks, pctr * pcvr conversions,
    pctr * pcvr * ppb GMV and pctr * price cost. Accepts a simulator
    ledger or a sequence of row mappings.
    """
    return totals(ledger).report()


COMPARED = ("rpm", "gpm", "roi", "ctr", "cvr", "ppc", "asr", "impressions", "clicks", "gmv", "cost")


def relative_delta(base: Optional[float], test: Optional[float]) -> Optional[float]:
    if base is None or test is None or base == 0:
        return None
    return (test - base) / base


def compare(base: MetricsReport, test: MetricsReport, keys: Sequence[str] = COMPARED) -> dict:
    """Signed relative change ``(test - base) / base`` per metric (None if undefined)."""
    return {k: relative_delta(getattr(base, k), getattr(test, k)) for k in keys}


@dataclass(frozen=True)
class AdjustmentHistogram:
    counts: np.ndarray
    proportions: np.ndarray

    @property
    def n_bins(self) -> int:
        return len(self.counts)


def adjustment_bins(b_star, bid, r_a, n_bins: int = 9) -> np.ndarray:
    """Bin index of b*/bid on [1 - r_a, 1 + r_a], normalized per record."""
    b_star = np.asarray(b_star, dtype=float)
    bid = np.asarray(bid, dtype=float)
    r_a = np.broadcast_to(np.asarray(r_a, dtype=float), b_star.shape)
    if (bid <= 0).any():
        raise ValueError("bids must be > 0")
    with np.errstate(divide="ignore", invalid="ignore"):
        pos = (b_star / bid - (1.0 - r_a)) / (2.0 * r_a)
    pos = np.where(r_a > 0, pos, 0.5)  # no adjustment range: always the middle
    return np.clip(np.floor(pos * n_bins), 0, n_bins - 1).astype(np.int64)


def adjustment_histogram(records, n_bins: int = 9) -> AdjustmentHistogram:
    """Distribution of b*/bid over ``n_bins`` equal-width groups.

    ``records`` is a sequence of (b_star, bid, r_a) triples or a mapping with
    those columns.
    """
    if n_bins < 1:
        raise ValueError("n_bins must be >= 1")
    if isinstance(records, Mapping):
        b_star, bid, r_a = records["b_star"], records["bid"], records["r_a"]
    else:
        arr = np.asarray(list(records), dtype=float).reshape(-1, 3)
        b_star, bid, r_a = arr[:, 0], arr[:, 1], arr[:, 2]
    if len(b_star) == 0:
        raise EmptyRecords("no bid records to bin")
    counts = np.bincount(adjustment_bins(b_star, bid, r_a, n_bins), minlength=n_bins)
    return AdjustmentHistogram(counts, counts / counts.sum())


class Outcome(str, Enum):
    IMPROVED = "improved"
    QUANTITY_QUALITY_EXCHANGE = "quantity_quality_exchange"
    OTHER = "other"


def classify_deltas(d_gpm: Optional[float], d_roi: Optional[float], d_pv: Optional[float]) -> Outcome:
    if d_gpm is not None and d_roi is not None and d_gpm > 0 and d_roi > 0:
        return Outcome.IMPROVED
    if d_roi is not None and d_pv is not None and d_roi < 0 and d_pv > -d_roi:
        return Outcome.QUANTITY_QUALITY_EXCHANGE
    return Outcome.OTHER


def classify_outcome(base: MetricsReport, test: MetricsReport) -> Outcome:
    """Improved when GPM and ROI both rise; quantity-quality exchange when
    ROI falls by less (relatively) than PV grows."""
    return classify_deltas(
        relative_delta(base.gpm, test.gpm),
        relative_delta(base.roi, test.roi),
        relative_delta(base.impressions, test.impressions),
    )


def fmt(value: Optional[float]) -> str:
    return "NA" if value is None else f"{value:.6f}"


def fmt_pct(value: Optional[float]) -> str:
    return "NA" if value is None else f"{100.0 * value:+.6f}%"


def format_table(headers: Sequence[str], rows: Sequence[Sequence[str]]) -> str:
    """Aligned plain-text table with a header rule."""
    cells = [list(map(str, headers))] + [list(map(str, r)) for r in rows]
    widths = [max(len(r[i]) for r in cells) for i in range(len(headers))]
    lines = []
    for j, r in enumerate(cells):
        lines.append("  ".join(c.rjust(widths[i]) if i else c.ljust(widths[i]) for i, c in enumerate(r)))
        if j == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n"


REPORT_KEYS = ("impressions", "clicks", "conversions", "gmv", "cost", "asr_adds",
               "rpm", "gpm", "roi", "ctr", "cvr", "ppc", "asr")
TABLE_KEYS = ("rpm", "gpm", "roi", "ctr", "cvr", "ppc")


def report_csv(report: MetricsReport, label: str = "run") -> str:
    head = "label," + ",".join(REPORT_KEYS)
    row = label + "," + ",".join(fmt(getattr(report, k)) for k in REPORT_KEYS)
    return head + "\n" + row + "\n"


def delta_table(rows: Mapping[str, Mapping[str, Optional[float]]], keys: Sequence[str] = TABLE_KEYS) -> str:
    """Comparison rows (label -> deltas) in the strategy-vs-baseline layout."""
    return format_table([""] + [k.upper() for k in keys],
                        [[label] + [fmt_pct(d.get(k)) for k in keys] for label, d in rows.items()])
