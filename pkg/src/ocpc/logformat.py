"""JSON Lines bid-log format.

Line 1 is a header object::

    {"format": "ocpc-bidlog", "version": 1, "n_pv": ..., "generator": {...},
     "campaigns": {"campaign_id": [...], "category_id": [...], "bid": [...],
                   "ppb": [...], "expected_cvr": [...], "r_a": [...],
                   "opt_authorized": [...], "budget": [...]}}

Every following line is one PV with per-candidate columns::

    {"pv_id": 0, "timestamp": 1486771200000, "user_id": 17, "position_id": 1,
     "n_slots": 3, "campaign_id": [...], "pctr": [...], "pcvr": [...],
     "pasr": [...]}

Campaign-level values (bid, ppb, expected_cvr, r_a, opt_authorized,
category_id) come from the header table and may be overridden per
candidate by a column of the same name in the PV line. ``null`` means
unknown (expected_cvr) or unlimited (budget).
"""

from __future__ import annotations

import hashlib
import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Hashable, Iterator, Optional, Sequence

import numpy as np

from .domain import AdCandidate, CandidateBatch, PvRequest, tie_order
from .errors import LogFormatError

FORMAT_NAME = "ocpc-bidlog"
FORMAT_VERSION = 1

CAMPAIGN_COLUMNS = ("campaign_id", "category_id", "bid", "ppb", "expected_cvr", "r_a", "opt_authorized", "budget")
log = logging.getLogger(__name__)

OVERRIDABLE = ("bid", "ppb", "expected_cvr", "r_a", "opt_authorized", "category_id")


def dumps(obj) -> str:
    return json.dumps(obj, separators=(",", ":"), allow_nan=False)


def _nan_to_none(values) -> list:
    return [None if (v is None or (isinstance(v, float) and math.isnan(v))) else v for v in values]


def _float_col(values, none_as: float) -> np.ndarray:
    return np.array([none_as if v is None else v for v in values], dtype=float)


@dataclass
class CampaignTable:
    """Per-campaign defaults, indexable by position."""

    campaign_id: list
    category_id: np.ndarray
    bid: np.ndarray
    ppb: np.ndarray
    expected_cvr: np.ndarray  # NaN = unknown
    r_a: np.ndarray
    authorized: np.ndarray
    budget: np.ndarray  # inf = unlimited
    index: dict = field(default_factory=dict)
    order: np.ndarray = None

    def __post_init__(self):
        self.index = {c: i for i, c in enumerate(self.campaign_id)}
        self.order = tie_order(self.campaign_id)
        self._dense = None
        ids = self.campaign_id
        # small non-negative integer ids get an array lookup
        if ids and all(type(c) is int for c in ids) and 0 <= min(ids) and max(ids) < 4 * len(ids) + 1024:
            self._dense = np.full(max(ids) + 1, -1, dtype=np.int64)
            self._dense[np.asarray(ids)] = np.arange(len(ids))

    def lookup(self, ids: list) -> Optional[np.ndarray]:
        """Table positions of ``ids``, or None if any id is unknown."""
        dense = self._dense
        if dense is not None:
            try:
                arr = np.array(ids, dtype=np.int64)
            except (TypeError, ValueError, OverflowError):
                arr = None
            # the round trip rejects ids the cast changed ("7", 1.5)
            if arr is not None and arr.ndim == 1 and arr.tolist() == ids:
                if arr.size == 0:
                    return arr
                if arr.min() >= 0 and arr.max() < len(dense):
                    idx = dense[arr]
                    if (idx >= 0).all():
                        return idx
                return None
        index = self.index
        try:
            return np.fromiter((index[c] for c in ids), dtype=np.int64, count=len(ids))
        except (KeyError, TypeError):
            return None

    def __len__(self) -> int:
        return len(self.campaign_id)

    @classmethod
    def from_header(cls, cols: dict) -> "CampaignTable":
        ids = list(cols.get("campaign_id", []))
        n = len(ids)

        def col(name, default):
            vals = cols.get(name)
            return [default] * n if vals is None else list(vals)

        return cls(
            campaign_id=ids,
            category_id=np.array(col("category_id", None), dtype=object),
            bid=_float_col(col("bid", None), math.nan),
            ppb=_float_col(col("ppb", None), math.nan),
            expected_cvr=_float_col(col("expected_cvr", None), math.nan),
            r_a=_float_col(col("r_a", 0.0), 0.0),
            authorized=np.array(col("opt_authorized", True), dtype=bool),
            budget=_float_col(col("budget", None), math.inf),
        )

    def to_header(self) -> dict:
        return {
            "campaign_id": list(self.campaign_id),
            "category_id": self.category_id.tolist(),
            "bid": _nan_to_none(self.bid.tolist()),
            "ppb": _nan_to_none(self.ppb.tolist()),
            "expected_cvr": _nan_to_none(self.expected_cvr.tolist()),
            "r_a": self.r_a.tolist(),
            "opt_authorized": self.authorized.tolist(),
            "budget": [None if math.isinf(b) else b for b in self.budget.tolist()],
        }

    def extend(self, ids: Sequence[Hashable]) -> None:
        """Register campaigns unseen in the header (no defaults, unlimited budget)."""
        new = [c for c in ids if c not in self.index]
        if not new:
            return
        k = len(new)
        self.campaign_id = self.campaign_id + new
        self.category_id = np.concatenate([self.category_id, np.array([None] * k, dtype=object)])
        nan = np.full(k, math.nan)
        self.bid = np.concatenate([self.bid, nan])
        self.ppb = np.concatenate([self.ppb, nan])
        self.expected_cvr = np.concatenate([self.expected_cvr, nan])
        self.r_a = np.concatenate([self.r_a, np.zeros(k)])
        self.authorized = np.concatenate([self.authorized, np.ones(k, dtype=bool)])
        self.budget = np.concatenate([self.budget, np.full(k, math.inf)])
        self.__post_init__()


@dataclass
class PvMeta:
    pv_id: Hashable
    timestamp: int
    user_id: Hashable
    position_id: Hashable
    n_slots: int


def header_line(campaigns: CampaignTable, n_pv: int, generator: Optional[dict] = None) -> str:
    head = {"format": FORMAT_NAME, "version": FORMAT_VERSION, "n_pv": n_pv}
    if generator is not None:
        head["generator"] = generator
    head["campaigns"] = campaigns.to_header()
    return dumps(head)


def parse_header(line: str | bytes) -> dict:
    try:
        head = json.loads(line)
    except json.JSONDecodeError as exc:
        raise LogFormatError(f"unreadable header: {exc}") from None
    if not isinstance(head, dict) or head.get("format") != FORMAT_NAME:
        raise LogFormatError("missing bid-log header line")
    if head.get("version") != FORMAT_VERSION:
        raise LogFormatError(f"unsupported bid-log version {head.get('version')!r}")
    return head


def record_batch(rec: dict, table: CampaignTable) -> tuple[PvMeta, CandidateBatch, np.ndarray]:
    """Decode one PV line into (meta, columnar candidates, campaign-table indices)."""
    try:
        ids = rec["campaign_id"]
        meta = PvMeta(rec["pv_id"], int(rec.get("timestamp", 0)), rec.get("user_id"),
                      rec.get("position_id"), int(rec.get("n_slots", 1)))
        pctr = np.asarray(rec["pctr"], dtype=float)
        pcvr = np.asarray(rec["pcvr"], dtype=float)
    except (KeyError, TypeError, ValueError) as exc:
        raise LogFormatError(f"malformed PV record: {exc!r}") from None
    idx = table.lookup(ids)
    if idx is None:
        try:
            table.extend(ids)
        except TypeError as exc:
            raise LogFormatError(f"pv {meta.pv_id!r}: bad campaign id: {exc}") from None
        idx = table.lookup(ids)
    n = len(idx)
    if len(pctr) != n or len(pcvr) != n:
        raise LogFormatError(f"pv {meta.pv_id!r}: column lengths differ")

    def column(name, default, as_float=True):
        if name in rec:
            vals = rec[name]
            if len(vals) != n:
                raise LogFormatError(f"pv {meta.pv_id!r}: column {name} has wrong length")
            if as_float:
                return _float_col(vals, math.nan)
            return np.asarray(vals, dtype=default.dtype)
        return default[idx]

    pasr = _float_col(rec["pasr"], math.nan) if "pasr" in rec else np.full(n, math.nan)
    batch = CandidateBatch(
        campaign_id=np.asarray(ids, dtype=object),
        category_id=column("category_id", table.category_id, as_float=False),
        order=table.order[idx],
        bid=column("bid", table.bid),
        pctr=pctr,
        pcvr=pcvr,
        ppb=column("ppb", table.ppb),
        expected_cvr=column("expected_cvr", table.expected_cvr),
        r_a=column("r_a", table.r_a),
        pasr=pasr,
        authorized=column("opt_authorized", table.authorized, as_float=False),
    )
    return meta, batch, idx


def batch_to_request(meta: PvMeta, batch: CandidateBatch) -> PvRequest:
    """Object view of a decoded PV (slow; for inspection and tests)."""
    def opt(x):
        return None if math.isnan(x) else float(x)

    cands = tuple(
        AdCandidate(
            campaign_id=batch.campaign_id[i],
            bid=float(batch.bid[i]),
            pctr=float(batch.pctr[i]),
            pcvr=float(batch.pcvr[i]),
            ppb=float(batch.ppb[i]),
            expected_cvr=opt(batch.expected_cvr[i]),
            adjust_range=float(batch.r_a[i]),
            category_id=batch.category_id[i],
            pasr=opt(batch.pasr[i]),
            opt_authorized=bool(batch.authorized[i]),
        )
        for i in range(len(batch))
    )
    return PvRequest(meta.pv_id, cands, meta.n_slots, meta.timestamp, meta.user_id, meta.position_id)


def request_line(request: PvRequest) -> str:
    """Self-contained PV line carrying every candidate field as a column."""
    cs = request.candidates
    rec = {
        "pv_id": request.pv_id,
        "timestamp": request.timestamp,
        "user_id": request.user_id,
        "position_id": request.position_id,
        "n_slots": request.n_slots,
        "campaign_id": [c.campaign_id for c in cs],
        "category_id": [c.category_id for c in cs],
        "bid": [c.bid for c in cs],
        "pctr": [c.pctr for c in cs],
        "pcvr": [c.pcvr for c in cs],
        "ppb": [c.ppb for c in cs],
        "expected_cvr": [c.expected_cvr for c in cs],
        "r_a": [c.adjust_range for c in cs],
        "opt_authorized": [c.opt_authorized for c in cs],
    }
    if any(c.pasr is not None for c in cs):
        rec["pasr"] = [c.pasr for c in cs]
    return dumps(rec)


def write_requests(path, requests: Sequence[PvRequest], campaigns: Optional[CampaignTable] = None) -> None:
    """Write a log whose PV lines carry all candidate fields inline."""
    table = campaigns or CampaignTable.from_header({})
    with open(path, "w") as fh:
        fh.write(header_line(table, len(requests)) + "\n")
        for r in requests:
            fh.write(request_line(r) + "\n")


class BidLogReader:
    """Streams a bid log one PV at a time while hashing its bytes."""

    def __init__(self, path):
        self.path = Path(path)
        self._fh = open(self.path, "rb")
        self._hash = hashlib.sha256()
        first = self._fh.readline()
        if not first:
            self._fh.close()
            raise LogFormatError(f"{self.path}: empty file")
        self._hash.update(first)
        self.header = parse_header(first)
        self.campaigns = CampaignTable.from_header(self.header.get("campaigns", {}))
        self.lines_read = 0
        self.bad_lines = 0

    def records(self) -> Iterator[dict]:
        try:
            for line in self._fh:
                self._hash.update(line)
                if not line.strip():
                    continue
                self.lines_read += 1
                try:
                    rec = json.loads(line)
                except json.JSONDecodeError as exc:
                    self.bad_lines += 1
                    log.warning("%s: skipping unreadable line %d: %s", self.path, self.lines_read + 1, exc)
                    continue
                yield rec
        finally:
            self._fh.close()

    def __iter__(self) -> Iterator[dict]:
        return self.records()

    @property
    def sha256(self) -> str:
        """Digest of the bytes consumed so far (the whole file once exhausted)."""
        return self._hash.hexdigest()


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
