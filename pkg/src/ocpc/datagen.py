"""Seeded synthetic bid logs.

The generator is built for property visibility rather than realism:
campaign bids and campaign conversion quality are drawn from a bivariate
normal whose correlation is ``gmv_value_correlation``, so objective-driven
reallocation has something to find when bids and value disagree.

Generation runs in two passes over deterministic PV shards. The first pass
collects every campaign's pCVR draws and derives its baseline CVR with the
trimmed-mean estimator; the second pass writes the header and the PV lines.
"""

from __future__ import annotations

import hashlib
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Optional

import numpy as np

from .calibration import expected_cvr
from .errors import AllZeroAfterTrim, InvalidSpec
from .logformat import CampaignTable, dumps, header_line

SHARD = 1000
BASE_TIMESTAMP = 1486771200000  # 2017-02-11T00:00:00Z, ms


@dataclass(frozen=True)
class GenSpec:
    seed: int = 42
    n_pv: int = 100_000
    candidates_per_pv: tuple[int, int] = (200, 200)
    n_campaigns: int = 500
    n_categories: int = 20
    n_slots: int = 3
    n_users: int = 20_000
    n_positions: int = 3
    pv_interval_ms: int = 864
    # campaign bid ~ lognormal(mu, sigma)
    bid_mu: float = 0.0
    bid_sigma: float = 0.4
    # pctr ~ beta(a, b * category factor) * campaign factor
    pctr_beta: tuple[float, float] = (2.0, 60.0)
    # pcvr ~ beta(a, b * category factor) * campaign quality
    pcvr_beta: tuple[float, float] = (20.0, 2500.0)
    category_spread: float = 0.3
    campaign_ctr_sigma: float = 0.3
    campaign_cvr_sigma: float = 0.4
    # ppb ~ lognormal(mu + category shift, sigma)
    ppb_mu: float = 4.0
    ppb_sigma: float = 0.5
    ppb_category_spread: float = 0.5
    ra_choices: tuple[float, ...] = (0.4,)
    opt_in_rate: float = 1.0
    pasr_beta: Optional[tuple[float, float]] = None
    # budget rule: "unlimited", or lognormal budgets with the given median and sigma
    budget_rule: str = "lognormal"
    budget_median: float = 40.0
    budget_sigma: float = 1.0
    gmv_value_correlation: float = 0.0
    trim_fraction: float = 0.10

    def __post_init__(self):
        errors = []
        if self.n_pv < 0:
            errors.append("n_pv must be >= 0")
        lo, hi = self.candidates_per_pv
        if not 1 <= lo <= hi:
            errors.append("candidates_per_pv must satisfy 1 <= lo <= hi")
        if self.n_campaigns < hi:
            errors.append("n_campaigns must be >= the largest candidate count")
        for name in ("n_categories", "n_slots", "n_users", "n_positions"):
            if getattr(self, name) < 1:
                errors.append(f"{name} must be >= 1")
        if not -1 <= self.gmv_value_correlation <= 1:
            errors.append("gmv_value_correlation must be in [-1, 1]")
        if not self.ra_choices or not all(0 <= r < 1 for r in self.ra_choices):
            errors.append("ra_choices must be non-empty values in [0, 1)")
        if not 0 <= self.opt_in_rate <= 1:
            errors.append("opt_in_rate must be in [0, 1]")
        if self.budget_rule not in ("unlimited", "lognormal"):
            errors.append(f"unknown budget_rule {self.budget_rule!r}")
        betas = [self.pctr_beta, self.pcvr_beta] + ([self.pasr_beta] if self.pasr_beta else [])
        if any(len(b) != 2 or min(b) <= 0 for b in betas):
            errors.append("beta parameters must be two positive numbers")
        if not 0 <= self.trim_fraction < 0.5:
            errors.append("trim_fraction must be in [0, 0.5)")
        if errors:
            raise InvalidSpec("; ".join(errors))

    @classmethod
    def from_dict(cls, data: dict) -> "GenSpec":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise InvalidSpec(f"unknown GenSpec fields: {sorted(unknown)}")
        kw = {}
        for k, v in data.items():
            kw[k] = tuple(v) if isinstance(v, list) else v
        try:
            return cls(**kw)
        except TypeError as exc:
            raise InvalidSpec(str(exc)) from None

    def to_dict(self) -> dict:
        return {k: list(v) if isinstance(v, tuple) else v for k, v in asdict(self).items()}


DESK_SCALE = GenSpec()


@dataclass
class _Campaigns:
    category: np.ndarray
    bid: np.ndarray
    ppb: np.ndarray
    r_a: np.ndarray
    authorized: np.ndarray
    budget: np.ndarray
    ctr_mult: np.ndarray
    cvr_mult: np.ndarray
    pctr_b: np.ndarray  # per category
    pcvr_b: np.ndarray


def _campaigns(spec: GenSpec) -> _Campaigns:
    rng = np.random.default_rng([spec.seed, 0])
    n, k = spec.n_campaigns, spec.n_categories
    cat_ctr = np.exp(spec.category_spread * rng.standard_normal(k))
    cat_cvr = np.exp(spec.category_spread * rng.standard_normal(k))
    cat_ppb = spec.ppb_category_spread * rng.standard_normal(k)
    category = rng.integers(0, k, n)
    rho = spec.gmv_value_correlation
    z_bid = rng.standard_normal(n)
    z_val = rho * z_bid + math.sqrt(1 - rho * rho) * rng.standard_normal(n)
    bid = np.round(np.exp(spec.bid_mu + spec.bid_sigma * z_bid), 2)
    bid = np.maximum(bid, 0.01)
    s = spec.campaign_cvr_sigma
    cvr_mult = np.exp(s * z_val - 0.5 * s * s)
    c = spec.campaign_ctr_sigma
    ctr_mult = np.exp(c * rng.standard_normal(n) - 0.5 * c * c)
    ppb = np.round(np.exp(spec.ppb_mu + cat_ppb[category] + spec.ppb_sigma * rng.standard_normal(n)), 2)
    r_a = np.asarray(spec.ra_choices, dtype=float)[rng.integers(0, len(spec.ra_choices), n)]
    authorized = rng.random(n) < spec.opt_in_rate
    if spec.budget_rule == "unlimited":
        budget = np.full(n, math.inf)
    else:
        budget = np.round(spec.budget_median * np.exp(spec.budget_sigma * rng.standard_normal(n)), 2)
    return _Campaigns(
        category, bid, ppb, r_a, authorized, budget, ctr_mult, cvr_mult,
        spec.pctr_beta[1] / cat_ctr, spec.pcvr_beta[1] / cat_cvr,
    )


def _micro(x: np.ndarray) -> np.ndarray:
    """Probabilities as integer millionths (the 6-decimal on-disk precision)."""
    return np.rint(np.clip(x, 0.0, 1.0) * 1e6).astype(np.int64)


def _shard(spec: GenSpec, camp: _Campaigns, shard: int):
    """PV rows [shard * SHARD, ...) as arrays; identical on every call."""
    start = shard * SHARD
    m = min(SHARD, spec.n_pv - start)
    rng = np.random.default_rng([spec.seed, 1, shard])
    lo, hi = spec.candidates_per_pv
    counts = rng.integers(lo, hi + 1, m)
    keys = rng.random((m, spec.n_campaigns))
    # prefix of a random permutation: a uniform draw without replacement
    chosen = np.argsort(keys, axis=1)[:, :hi]
    cat = camp.category[chosen]
    pctr = rng.beta(spec.pctr_beta[0], camp.pctr_b[cat]) * camp.ctr_mult[chosen]
    pcvr = rng.beta(spec.pcvr_beta[0], camp.pcvr_b[cat]) * camp.cvr_mult[chosen]
    pasr = None
    if spec.pasr_beta:
        pasr = _micro(rng.beta(spec.pasr_beta[0], spec.pasr_beta[1], (m, hi)))
    users = rng.integers(0, spec.n_users, m)
    positions = rng.integers(0, spec.n_positions, m)
    return start, counts, chosen, _micro(pctr), _micro(pcvr), pasr, users, positions


def _expected_cvrs(spec: GenSpec, camp: _Campaigns) -> np.ndarray:
    n_shards = -(-spec.n_pv // SHARD)
    ids, vals = [], []
    for s in range(n_shards):
        _, counts, chosen, _, pcvr, _, _, _ = _shard(spec, camp, s)
        keep = np.arange(chosen.shape[1])[None, :] < counts[:, None]
        ids.append(chosen[keep].astype(np.int32))
        vals.append(pcvr[keep].astype(np.int32))
    out = np.full(spec.n_campaigns, math.nan)
    if not ids:
        return out
    ids = np.concatenate(ids)
    vals = np.concatenate(vals)
    order = np.argsort(ids, kind="stable")
    ids, vals = ids[order], vals[order]
    bounds = np.searchsorted(ids, np.arange(spec.n_campaigns + 1))
    for c in range(spec.n_campaigns):
        seg = vals[bounds[c] : bounds[c + 1]]
        if seg.size == 0:
            continue
        try:
            out[c] = expected_cvr(seg / 1e6, spec.trim_fraction)
        except AllZeroAfterTrim:
            pass
    return out


def campaign_table(spec: GenSpec) -> CampaignTable:
    camp = _campaigns(spec)
    table = CampaignTable.from_header(
        {
            "campaign_id": list(range(spec.n_campaigns)),
            "category_id": camp.category.tolist(),
            "bid": camp.bid.tolist(),
            "ppb": camp.ppb.tolist(),
            "r_a": camp.r_a.tolist(),
            "opt_authorized": camp.authorized.tolist(),
            "budget": [None if math.isinf(b) else b for b in camp.budget.tolist()],
        }
    )
    table.expected_cvr = _expected_cvrs(spec, camp)
    return table


def iter_lines(spec: GenSpec):
    """Header line followed by one JSON line per PV."""
    camp = _campaigns(spec)
    table = campaign_table(spec)
    yield header_line(table, spec.n_pv, spec.to_dict())
    n_shards = -(-spec.n_pv // SHARD)
    for s in range(n_shards):
        start, counts, chosen, pctr, pcvr, pasr, users, positions = _shard(spec, camp, s)
        for r in range(len(counts)):
            k = counts[r]
            pv = start + r
            rec = {
                "pv_id": pv,
                "timestamp": BASE_TIMESTAMP + pv * spec.pv_interval_ms,
                "user_id": int(users[r]),
                "position_id": int(positions[r]),
                "n_slots": spec.n_slots,
                "campaign_id": chosen[r, :k].tolist(),
                "pctr": (pctr[r, :k] / 1e6).tolist(),
                "pcvr": (pcvr[r, :k] / 1e6).tolist(),
            }
            if pasr is not None:
                rec["pasr"] = (pasr[r, :k] / 1e6).tolist()
            yield dumps(rec)


def generate(spec: GenSpec, out_path) -> tuple[int, str]:
    """Write the log for ``spec``; return (PV record count, sha256 of the file)."""
    h = hashlib.sha256()
    n = -1
    path = Path(out_path)
    with open(path, "w") as fh:
        for line in iter_lines(spec):
            data = line + "\n"
            fh.write(data)
            h.update(data.encode())
            n += 1
    return n, h.hexdigest()
