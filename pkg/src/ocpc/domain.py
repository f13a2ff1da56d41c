"""Core value types for one page-view auction and input validation.

Currency amounts are plain floats. Outputs are rounded to 6 decimals when
written to disk, which is the precision contract of the file formats.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import IntEnum
from typing import Hashable, Optional, Sequence

import numpy as np

from .errors import (
    EmptyCandidates,
    InvalidAdjustRange,
    InvalidSlotCount,
    NonPositiveBid,
    NonPositiveExpectedCvr,
    ProbabilityOutOfRange,
)
from .objectives import ObjectiveSpec

DEFAULT_TC = 0.012
DEFAULT_TRIM = 0.10


@dataclass(frozen=True)
class AdCandidate:
    """One eligible ad inside one PV auction.

    ``pcvr`` is the conversion prediction fed to the strategy layer (it is
    calibrated inside the engine when calibration is switched on).
    ``expected_cvr`` is the campaign's baseline conversion rate; ``None``
    means it is unknown and the quality ratio falls back to 1.
    """

    campaign_id: Hashable
    bid: float
    pctr: float
    pcvr: float
    ppb: float
    expected_cvr: Optional[float]
    adjust_range: float = 0.0
    category_id: Hashable = None
    pasr: Optional[float] = None
    opt_authorized: bool = True

    @property
    def can_win(self) -> bool:
        # zero-ctr ads stay in the auction but never take a slot
        return self.pctr > 0


@dataclass(frozen=True)
class PvRequest:
    pv_id: Hashable
    candidates: tuple[AdCandidate, ...]
    n_slots: int = 1
    timestamp: int = 0
    user_id: Hashable = None
    position_id: Hashable = None

    def __post_init__(self):
        if not isinstance(self.candidates, tuple):
            object.__setattr__(self, "candidates", tuple(self.candidates))

    @property
    def zero_ctr(self) -> list[Hashable]:
        """Campaign ids that are present but can never win."""
        return [c.campaign_id for c in self.candidates if not c.can_win]


@dataclass(frozen=True)
class Campaign:
    campaign_id: Hashable
    budget: float = math.inf
    category_id: Hashable = None


class Strategy(IntEnum):
    STR0 = 0  # fixed bids, eCPM sort
    STR1 = 1  # direct sigma bid rule, eCPM sort
    STR2 = 2  # bounded bids + objective-driven greedy ranking
    STR3 = 3  # sort by pctr * pcvr * bid, fixed bids


@dataclass(frozen=True)
class StrategyConfig:
    """Everything that parameterizes one run of the strategy layer.

    ``w`` is the sigma exponent of the Str1 bid rule; the objective used by
    Str2 carries its own exponent and trade-off coefficient.
    ``ra_override`` replaces every candidate's adjustment range when set.
    """

    strategy: Strategy = Strategy.STR2
    objective: ObjectiveSpec = field(default_factory=ObjectiveSpec.sigma_gmv)
    w: float = 2.0
    calibration_threshold: float = DEFAULT_TC
    calibrate: bool = True
    log_base: float = math.e
    reserve_score: float = 0.0
    enforce_budget: bool = True
    ra_override: Optional[float] = None
    trim_fraction: float = DEFAULT_TRIM

    def __post_init__(self):
        object.__setattr__(self, "strategy", Strategy(self.strategy))
        if not self.w > 0:
            raise ValueError(f"w must be positive, got {self.w}")
        if not 0 < self.calibration_threshold <= 1:
            raise ValueError(f"calibration threshold must be in (0, 1], got {self.calibration_threshold}")
        if self.reserve_score < 0:
            raise ValueError("reserve_score must be >= 0")
        if self.ra_override is not None and not 0 <= self.ra_override < 1:
            raise ValueError(f"ra_override must be in [0, 1), got {self.ra_override}")

    def echo(self) -> dict:
        return {
            "strategy": int(self.strategy),
            "objective": self.objective.echo(),
            "w": self.w,
            "calibration_threshold": self.calibration_threshold,
            "calibrate": self.calibrate,
            "log_base": self.log_base,
            "reserve_score": self.reserve_score,
            "enforce_budget": self.enforce_budget,
            "ra_override": self.ra_override,
            "trim_fraction": self.trim_fraction,
        }


def _check_candidate(c: AdCandidate) -> None:
    cid = c.campaign_id
    if not c.bid > 0:
        raise NonPositiveBid(f"campaign {cid!r}: bid must be > 0, got {c.bid}", cid)
    for name in ("pctr", "pcvr"):
        v = getattr(c, name)
        if not 0.0 <= v <= 1.0:
            raise ProbabilityOutOfRange(f"campaign {cid!r}: {name}={v} outside [0, 1]", cid)
    if c.pasr is not None and not 0.0 <= c.pasr <= 1.0:
        raise ProbabilityOutOfRange(f"campaign {cid!r}: pasr={c.pasr} outside [0, 1]", cid)
    if c.expected_cvr is not None and not 0.0 < c.expected_cvr <= 1.0:
        raise NonPositiveExpectedCvr(
            f"campaign {cid!r}: expected_cvr must be in (0, 1], got {c.expected_cvr}", cid
        )
    if not 0.0 <= c.adjust_range < 1.0:
        raise InvalidAdjustRange(f"campaign {cid!r}: adjust_range={c.adjust_range} outside [0, 1)", cid)
    if not c.ppb >= 0:
        raise ValueError(f"campaign {cid!r}: ppb must be >= 0, got {c.ppb}")


def validate(request: PvRequest) -> PvRequest:
    """Return ``request`` unchanged if every invariant holds, else raise."""
    if not request.candidates:
        raise EmptyCandidates(f"pv {request.pv_id!r} has no candidates")
    if request.n_slots < 1:
        raise InvalidSlotCount(f"pv {request.pv_id!r}: n_slots must be >= 1, got {request.n_slots}")
    for c in request.candidates:
        _check_candidate(c)
    return request


def tie_order(ids: Sequence) -> np.ndarray:
    """Rank of each id under ascending id order (used to break score ties)."""
    n = len(ids)
    try:
        perm = sorted(range(n), key=ids.__getitem__)
    except TypeError:
        perm = sorted(range(n), key=lambda i: str(ids[i]))
    order = np.empty(n, dtype=np.int64)
    order[perm] = np.arange(n)
    return order


@dataclass
class CandidateBatch:
    """Columnar view of one auction's candidates.

    Missing ``expected_cvr`` and ``pasr`` values are NaN. ``order`` is the
    deterministic tie-break rank (smaller wins ties).
    """

    campaign_id: np.ndarray
    category_id: np.ndarray
    order: np.ndarray
    bid: np.ndarray
    pctr: np.ndarray
    pcvr: np.ndarray
    ppb: np.ndarray
    expected_cvr: np.ndarray
    r_a: np.ndarray
    pasr: np.ndarray
    authorized: np.ndarray

    def __len__(self) -> int:
        return len(self.bid)

    @classmethod
    def from_candidates(cls, candidates: Sequence[AdCandidate]) -> "CandidateBatch":
        ids = [c.campaign_id for c in candidates]
        nan = float("nan")
        return cls(
            campaign_id=np.array(ids, dtype=object),
            category_id=np.array([c.category_id for c in candidates], dtype=object),
            order=tie_order(ids),
            bid=np.array([c.bid for c in candidates], dtype=float),
            pctr=np.array([c.pctr for c in candidates], dtype=float),
            pcvr=np.array([c.pcvr for c in candidates], dtype=float),
            ppb=np.array([c.ppb for c in candidates], dtype=float),
            expected_cvr=np.array(
                [nan if c.expected_cvr is None else c.expected_cvr for c in candidates], dtype=float
            ),
            r_a=np.array([c.adjust_range for c in candidates], dtype=float),
            pasr=np.array([nan if c.pasr is None else c.pasr for c in candidates], dtype=float),
            authorized=np.array([bool(c.opt_authorized) for c in candidates], dtype=bool),
        )

    def take(self, idx) -> "CandidateBatch":
        return CandidateBatch(**{k: v[idx] for k, v in self.__dict__.items()})
