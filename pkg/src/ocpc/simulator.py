"""Offline replay of a bid log under one or more strategies.

Every PV's eligible list is replayed as logged. Post-view behaviour is
accounted in expectation: an impression adds pctr clicks, and a winning
campaign's budget is debited pctr * price. Campaigns whose budget is spent
are dropped from later auctions; the impression that crosses zero is kept.
"""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterable, Iterator, Mapping, Optional, Sequence

import numpy as np

from .auction import run_batch
from .domain import CandidateBatch, PvRequest, StrategyConfig
from .errors import OcpcError, UnorderedLog, ValidationError, NonPositiveBid, ProbabilityOutOfRange
from .logformat import BidLogReader, CampaignTable, PvMeta, record_batch
from .metrics import (
    MetricsReport,
    Outcome,
    Totals,
    classify_outcome,
    fmt,
    relative_delta,
)

log = logging.getLogger(__name__)

FLOAT_COLUMNS = (
    "pctr", "pcvr", "ppb", "pasr", "bid", "r_a", "expected_cvr", "quality_ratio", "b_star", "price_per_click",
)
ID_COLUMNS = ("pv_id", "slot", "campaign_id", "category_id")
LEDGER_COLUMNS = ID_COLUMNS + FLOAT_COLUMNS


class _Buffer:
    """Growable float64 column."""

    __slots__ = ("data", "size")

    def __init__(self, capacity: int = 1024):
        self.data = np.empty(capacity)
        self.size = 0

    def extend(self, values: np.ndarray) -> None:
        n = len(values)
        end = self.size + n
        if end > len(self.data):
            grown = np.empty(max(end, 2 * len(self.data)))
            grown[: self.size] = self.data[: self.size]
            self.data = grown
        self.data[self.size : end] = values
        self.size = end

    def view(self) -> np.ndarray:
        return self.data[: self.size]


class Ledger:
    """Per-impression rows of one replay plus run metadata.

    ``columns`` maps every name in ``LEDGER_COLUMNS`` to a numpy array.
    """

    def __init__(self, meta: Optional[dict] = None):
        self.meta = dict(meta or {})
        self._ids = {k: [] for k in ID_COLUMNS}
        self._floats = {k: _Buffer() for k in FLOAT_COLUMNS}
        self._frozen: Optional[dict] = None

    def __len__(self) -> int:
        return len(self._ids["pv_id"])

    def append(self, pv_id, campaign_ids, category_ids, **values: np.ndarray) -> None:
        n = len(campaign_ids)
        self._ids["pv_id"].extend([pv_id] * n)
        self._ids["slot"].extend(range(n))
        self._ids["campaign_id"].extend(campaign_ids)
        self._ids["category_id"].extend(category_ids)
        for k, buf in self._floats.items():
            buf.extend(values[k])
        self._frozen = None

    @property
    def columns(self) -> dict:
        if self._frozen is None:
            cols = {k: np.array(v, dtype=object) for k, v in self._ids.items()}
            cols["slot"] = np.asarray(self._ids["slot"], dtype=np.int64)
            cols.update({k: b.view() for k, b in self._floats.items()})
            self._frozen = cols
        return self._frozen

    def rows(self) -> Iterator[dict]:
        cols = self.columns
        for i in range(len(self)):
            yield {k: cols[k][i] for k in LEDGER_COLUMNS}

    @classmethod
    def from_columns(cls, cols: Mapping[str, Sequence], meta: Optional[dict] = None) -> "Ledger":
        led = cls(meta)
        for k in ID_COLUMNS:
            led._ids[k] = list(cols[k])
        for k in FLOAT_COLUMNS:
            arr = np.asarray(cols.get(k, np.full(len(led._ids["pv_id"]), math.nan)), dtype=float)
            led._floats[k].extend(arr)
        return led

    def to_csv(self, path) -> None:
        """Columnar CSV, floats fixed at 6 decimals, NaN written as NA."""
        cols = self.columns
        with open(path, "w") as fh:
            fh.write(",".join(LEDGER_COLUMNS) + "\n")
            str_cols = [["NA" if v is None else str(v) for v in cols[k]] for k in ID_COLUMNS]
            for k in FLOAT_COLUMNS:
                str_cols.append(["NA" if v != v else f"{v:.6f}" for v in cols[k].tolist()])
            for row in zip(*str_cols):
                fh.write(",".join(row) + "\n")

    @classmethod
    def from_csv(cls, path, meta: Optional[dict] = None) -> "Ledger":
        import csv

        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            data = {k: [] for k in header}
            for row in reader:
                for k, v in zip(header, row):
                    data[k].append(v)
        cols = {k: [_parse_id(v) for v in data[k]] for k in ID_COLUMNS}
        cols["slot"] = [int(v) for v in data["slot"]]
        for k in FLOAT_COLUMNS:
            cols[k] = [math.nan if v == "NA" else float(v) for v in data[k]]
        return cls.from_columns(cols, meta)


def _parse_id(text: str):
    if text == "NA":
        return None
    try:
        return int(text)
    except ValueError:
        return text


@dataclass
class CampaignState:
    campaign_id: Hashable
    budget_remaining: float
    cost: float = 0.0
    gmv: float = 0.0
    pv: int = 0


class _BudgetBook:
    def __init__(self, budgets: np.ndarray):
        self.initial = budgets.astype(float).copy()
        self.remaining = budgets.astype(float).copy()
        self.spent = np.zeros(len(budgets))

    def sync(self, table: CampaignTable) -> None:
        n = len(table)
        if n > len(self.remaining):
            extra = table.budget[len(self.remaining) :]
            self.initial = np.concatenate([self.initial, extra])
            self.remaining = np.concatenate([self.remaining, extra])
            self.spent = np.concatenate([self.spent, np.zeros(len(extra))])

    def debit(self, idx: np.ndarray, amount: np.ndarray) -> None:
        self.spent[idx] += amount
        self.remaining[idx] = np.maximum(self.remaining[idx] - amount, 0.0)


def check_batch(meta: PvMeta, batch: CandidateBatch) -> None:
    """Cheap vectorized invariant checks for one decoded PV."""
    if not (batch.bid > 0).all():
        i = int(np.flatnonzero(~(batch.bid > 0))[0])
        raise NonPositiveBid(f"pv {meta.pv_id!r}: non-positive bid", batch.campaign_id[i])
    for name in ("pctr", "pcvr"):
        v = getattr(batch, name)
        bad = ~((v >= 0) & (v <= 1))
        if bad.any():
            i = int(np.flatnonzero(bad)[0])
            raise ProbabilityOutOfRange(f"pv {meta.pv_id!r}: {name} out of range", batch.campaign_id[i])
    if meta.n_slots < 1:
        raise ValidationError(f"pv {meta.pv_id!r}: n_slots must be >= 1")


class _Source:
    """Uniform iteration over a log path, a reader, or in-memory requests."""

    def __init__(self, log, campaigns=None):
        self.reader: Optional[BidLogReader] = None
        if isinstance(log, (str, Path)):
            log = BidLogReader(log)
        if isinstance(log, BidLogReader):
            self.reader = log
            self.table = log.campaigns
            self._records = iter(log)
        else:
            self.table = CampaignTable.from_header({})
            self._records = None
            self._requests = iter(log)
        if campaigns:
            for c in campaigns.values() if isinstance(campaigns, Mapping) else campaigns:
                if c.campaign_id not in self.table.index:
                    self.table.extend([c.campaign_id])
                self.table.budget[self.table.index[c.campaign_id]] = c.budget

    @property
    def identity(self) -> Optional[str]:
        return self.reader.sha256 if self.reader else None

    def __iter__(self):
        if self._records is not None:
            for rec in self._records:
                try:
                    yield record_batch(rec, self.table)
                except OcpcError as exc:
                    log.warning("skipping record: %s", exc)
                    yield None
        else:
            for req in self._requests:
                yield _request_batch(req, self.table)


def _request_batch(req: PvRequest, table: CampaignTable):
    ids = [c.campaign_id for c in req.candidates]
    table.extend(ids)
    batch = CandidateBatch.from_candidates(req.candidates)
    idx = np.array([table.index[c] for c in ids], dtype=np.int64)
    batch.order = table.order[idx]
    meta = PvMeta(req.pv_id, req.timestamp, req.user_id, req.position_id, req.n_slots)
    return meta, batch, idx


def replay_many(
    log,
    configs: Sequence[StrategyConfig],
    campaigns=None,
    n_slots: Optional[int] = None,
) -> list[Ledger]:
    """Replay one log under several strategies in a single streaming pass.

    ``log`` is a path, a :class:`BidLogReader`, or an iterable of
    :class:`PvRequest`. ``campaigns`` (mapping or iterable of
    :class:`Campaign`) overrides header budgets; campaigns not known
    anywhere get an unlimited budget. ``n_slots`` overrides the per-PV slot
    count. Each config gets its own budget state and ledger.
    """
    src = _Source(log, campaigns)
    ledgers = [Ledger({"config": c.echo()}) for c in configs]
    books = [_BudgetBook(src.table.budget) for _ in configs]
    skipped = [0] * len(configs)
    last_ts = None
    n_pv = 0
    for item in src:
        if item is None:
            for j in range(len(configs)):
                skipped[j] += 1
            continue
        meta, batch, cidx = item
        if last_ts is not None and meta.timestamp < last_ts:
            raise UnorderedLog(f"pv {meta.pv_id!r}: timestamp {meta.timestamp} precedes {last_ts}")
        last_ts = meta.timestamp
        n_pv += 1
        slots = n_slots or meta.n_slots
        try:
            check_batch(meta, batch)
        except ValidationError as exc:
            log.warning("skipping pv %r: %s", meta.pv_id, exc)
            for j in range(len(configs)):
                skipped[j] += 1
            continue
        for j, cfg in enumerate(configs):
            book = books[j]
            book.sync(src.table)
            sub, sub_idx = batch, cidx
            if cfg.enforce_budget:
                active = book.remaining[cidx] > 0
                if not active.all():
                    if not active.any():
                        continue
                    sub, sub_idx = batch.take(active), cidx[active]
            try:
                res = run_batch(sub, slots, cfg)
            except OcpcError as exc:
                log.debug("pv %r skipped under config %d: %s", meta.pv_id, j, exc)
                skipped[j] += 1
                continue
            w = res.winners
            if not w.size:
                continue
            ledgers[j].append(
                meta.pv_id,
                sub.campaign_id[w].tolist(),
                sub.category_id[w].tolist(),
                pctr=sub.pctr[w],
                pcvr=res.pcvr[w],
                ppb=sub.ppb[w],
                pasr=sub.pasr[w],
                bid=sub.bid[w],
                r_a=res.r_a[w],
                expected_cvr=sub.expected_cvr[w],
                quality_ratio=res.ratio[w],
                b_star=res.b_star[w],
                price_per_click=res.price,
            )
            if cfg.enforce_budget:
                book.debit(sub_idx[w], sub.pctr[w] * res.price)
    for j, led in enumerate(ledgers):
        led.meta.update(
            {
                "log_sha256": src.identity,
                "n_pv": n_pv,
                "skipped_pv": skipped[j],
                "impressions": len(led),
            }
        )
        book = books[j]
        led.campaign_states = {
            cid: CampaignState(cid, float(book.remaining[i]), float(book.spent[i]))
            for cid, i in src.table.index.items()
        }
        led.initial_budgets = {cid: float(book.initial[i]) for cid, i in src.table.index.items()}
    return ledgers


def replay(log, config: StrategyConfig, campaigns=None, n_slots: Optional[int] = None) -> Ledger:
    """Replay ``log`` under ``config``; see :func:`replay_many`."""
    return replay_many(log, [config], campaigns, n_slots)[0]


def grouped_totals(ledger: Ledger, key: str = "campaign_id") -> dict:
    """Totals per distinct value of ``key``."""
    cols = ledger.columns
    keys = cols[key]
    codes: dict = {}
    inv = np.fromiter((codes.setdefault(k, len(codes)) for k in keys), dtype=np.int64, count=len(keys))
    m = len(codes)
    pctr, pcvr, ppb, price = cols["pctr"], cols["pcvr"], cols["ppb"], cols["price_per_click"]
    pasr = cols["pasr"]
    has = ~np.isnan(pasr)
    conv = pctr * pcvr

    def sums(weights):
        return np.bincount(inv, weights=weights, minlength=m)

    imp = np.bincount(inv, minlength=m)
    clicks, convs, gmv, cost = sums(pctr), sums(conv), sums(conv * ppb), sums(pctr * price)
    asr_adds = sums(np.where(has, pctr * np.nan_to_num(pasr), 0.0))
    asr_clicks = sums(np.where(has, pctr, 0.0))
    return {
        k: Totals(float(imp[i]), clicks[i], convs[i], gmv[i], cost[i], asr_adds[i], asr_clicks[i])
        for k, i in codes.items()
    }


PER_CAMPAIGN_KEYS = ("gmv", "cost", "impressions", "gpm", "roi")


@dataclass
class BreakdownRow:
    key: Hashable
    base: MetricsReport
    test: MetricsReport
    deltas: dict
    outcome: Outcome
    included: bool = True
    base_share: Optional[float] = None
    test_share: Optional[float] = None
    share_variation: Optional[float] = None


@dataclass
class CampaignReport:
    rows: list[BreakdownRow]
    proportions: dict  # outcome value -> share of included campaigns
    min_conversions: float

    def summary_rows(self) -> list[tuple[str, str]]:
        return [
            ("GPM and ROI are improved", fmt(self.proportions.get(Outcome.IMPROVED.value))),
            ("Quantity and quality exchange", fmt(self.proportions.get(Outcome.QUANTITY_QUALITY_EXCHANGE.value))),
        ]


def _pairs(ledger: Ledger, base_ledger: Ledger, key: str):
    test_t = grouped_totals(ledger, key) if len(ledger) else {}
    base_t = grouped_totals(base_ledger, key) if len(base_ledger) else {}
    keys = list(base_t) + [k for k in test_t if k not in base_t]
    try:
        keys.sort()
    except TypeError:
        keys.sort(key=str)
    empty = Totals()
    return [(k, base_t.get(k, empty).report(), test_t.get(k, empty).report()) for k in keys]


def per_campaign_report(ledger: Ledger, base_ledger: Ledger, min_conversions: float = 5.0) -> CampaignReport:
    """Per-campaign deltas of ``ledger`` against ``base_ledger``.

    A campaign counts toward the outcome proportions when its expected
    conversions reach ``min_conversions`` in either run.
    """
    rows = []
    for k, b, t in _pairs(ledger, base_ledger, "campaign_id"):
        deltas = {m: relative_delta(getattr(b, m), getattr(t, m)) for m in PER_CAMPAIGN_KEYS}
        included = max(b.conversions, t.conversions) >= min_conversions
        rows.append(BreakdownRow(k, b, t, deltas, classify_outcome(b, t), included))
    inc = [r for r in rows if r.included]
    props = {o.value: (sum(r.outcome is o for r in inc) / len(inc) if inc else None) for o in Outcome}
    return CampaignReport(rows, props, min_conversions)


@dataclass
class CategoryReport:
    rows: list[BreakdownRow]
    by_count: dict
    by_pv: dict

    def summary_rows(self) -> list[tuple[str, str, str]]:
        labels = (
            ("improved", "GPM and ROI are improved"),
            ("gpm_improved", "GPM is improved"),
            ("quantity_quality_exchange", "Quantity and quality exchange"),
        )
        return [(text, fmt(self.by_count.get(k)), fmt(self.by_pv.get(k))) for k, text in labels]


def _category_class(row: BreakdownRow) -> str:
    if row.outcome is not Outcome.OTHER:
        return row.outcome.value
    d = row.deltas.get("gpm")
    return "gpm_improved" if d is not None and d > 0 else "other"


def per_category_report(ledger: Ledger, base_ledger: Ledger) -> CategoryReport:
    """PV-share shift per category and outcome proportions.

    Proportions are given both per category and weighted by the category's
    PV count in ``ledger``. Categories whose only GPM moved up (ROI not)
    are reported as ``gpm_improved``.
    """
    pairs = _pairs(ledger, base_ledger, "category_id")
    base_pv = sum(b.impressions for _, b, _ in pairs)
    test_pv = sum(t.impressions for _, _, t in pairs)
    rows = []
    for k, b, t in pairs:
        deltas = {m: relative_delta(getattr(b, m), getattr(t, m)) for m in PER_CAMPAIGN_KEYS}
        bs = b.impressions / base_pv if base_pv else None
        ts = t.impressions / test_pv if test_pv else None
        rows.append(
            BreakdownRow(k, b, t, deltas, classify_outcome(b, t), True, bs, ts, relative_delta(bs, ts))
        )
    classes = ("improved", "gpm_improved", "quantity_quality_exchange", "other")
    by_count = {c: None for c in classes}
    by_pv = {c: None for c in classes}
    if rows:
        labels = [_category_class(r) for r in rows]
        pv = np.array([r.test.impressions for r in rows])
        for c in classes:
            mask = np.array([lab == c for lab in labels])
            by_count[c] = float(mask.mean())
            by_pv[c] = float(pv[mask].sum() / pv.sum()) if pv.sum() else None
    return CategoryReport(rows, by_count, by_pv)
