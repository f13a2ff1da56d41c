"""Composite ranking index f(b*) evaluated on a candidate at an optimized bid.

Every supported index is affine in the bid:

    f(b*) = offset + slope * b*

with ``slope >= 0``, which is what lets the greedy ranker evaluate f at the
upper bound of each bid interval. :func:`affine_coefficients` exposes that
form for whole auctions; :func:`evaluate` is the per-candidate closed form.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Optional

import numpy as np

from .bidopt import sigma, sigma_array
from .errors import MissingAsr, ZeroNormalizer


class ObjectiveKind(str, Enum):
    F1 = "f1"
    F2 = "f2"
    SIGMA = "sigma"


class Signal(str, Enum):
    GMV = "gmv"
    CVR = "cvr"
    ASR = "asr"


@dataclass(frozen=True)
class ObjectiveSpec:
    kind: ObjectiveKind = ObjectiveKind.SIGMA
    alpha: float = 1.0
    signal: Signal = Signal.GMV
    w: float = 6.0

    def __post_init__(self):
        object.__setattr__(self, "kind", ObjectiveKind(self.kind))
        object.__setattr__(self, "signal", Signal(self.signal))
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if not self.w > 0:
            raise ValueError(f"w must be > 0, got {self.w}")

    @classmethod
    def f1(cls) -> "ObjectiveSpec":
        return cls(ObjectiveKind.F1)

    @classmethod
    def f2(cls, alpha: float = 1.0) -> "ObjectiveSpec":
        return cls(ObjectiveKind.F2, alpha=alpha)

    @classmethod
    def sigma_composite(cls, signal: Signal | str = Signal.GMV, w: float = 6.0) -> "ObjectiveSpec":
        return cls(ObjectiveKind.SIGMA, signal=Signal(signal), w=w)

    @classmethod
    def sigma_gmv(cls) -> "ObjectiveSpec":
        return cls.sigma_composite(Signal.GMV, 6.0)

    @property
    def name(self) -> str:
        if self.kind is ObjectiveKind.SIGMA:
            return f"sigma-{self.signal.value}"
        return self.kind.value

    @classmethod
    def from_name(cls, name: str, alpha: float = 1.0, w: float = 6.0) -> "ObjectiveSpec":
        """Build from a CLI name: f1, f2, sigma-gmv, sigma-cvr or sigma-asr."""
        if name == "f1":
            return cls.f1()
        if name == "f2":
            return cls.f2(alpha)
        if name.startswith("sigma-"):
            return cls.sigma_composite(name[len("sigma-") :], w)
        raise ValueError(f"unknown objective {name!r}")

    def echo(self) -> dict:
        out = {"name": self.name}
        if self.kind is ObjectiveKind.F2:
            out["alpha"] = self.alpha
        if self.kind is ObjectiveKind.SIGMA:
            out["w"] = self.w
        return out


@dataclass(frozen=True)
class AuctionContext:
    """Per-auction mean signals over the full eligible list."""

    mean_gmv: float
    mean_cvr: float
    mean_asr: Optional[float] = None

    def mean(self, signal: Signal) -> float:
        value = {Signal.GMV: self.mean_gmv, Signal.CVR: self.mean_cvr, Signal.ASR: self.mean_asr}[signal]
        if value is None:
            raise MissingAsr("ASR signal requested but candidates carry no pasr")
        if not value > 0:
            raise ZeroNormalizer(f"mean {signal.value} signal over the auction is zero")
        return value


def auction_context(pcvr, ppb, pasr=None) -> AuctionContext:
    """Mean GMV, CVR and (when every candidate has one) ASR signal."""
    pcvr = np.asarray(pcvr, dtype=float)
    ppb = np.asarray(ppb, dtype=float)
    n = len(pcvr)
    mean_asr = None
    if pasr is not None:
        pasr = np.asarray(pasr, dtype=float)
        if n and not np.isnan(pasr).any():
            mean_asr = float(pasr.sum()) / n
    return AuctionContext(float((pcvr * ppb).sum()) / n, float(pcvr.sum()) / n, mean_asr)


def context_for(candidates) -> AuctionContext:
    pasr = [math.nan if c.pasr is None else c.pasr for c in candidates]
    return auction_context([c.pcvr for c in candidates], [c.ppb for c in candidates], pasr)


def _own_signal(spec: ObjectiveSpec, cand) -> float:
    if spec.signal is Signal.GMV:
        return cand.pcvr * cand.ppb
    if spec.signal is Signal.CVR:
        return cand.pcvr
    if cand.pasr is None:
        raise MissingAsr(f"campaign {cand.campaign_id!r} has no pasr")
    return cand.pasr


def evaluate(spec: ObjectiveSpec, cand, b_star: float, ctx: Optional[AuctionContext] = None) -> float:
    """Composite index of ``cand`` if it were charged ``b_star`` per click."""
    if spec.kind is ObjectiveKind.F1:
        return cand.pctr * cand.pcvr * cand.ppb
    if spec.kind is ObjectiveKind.F2:
        return cand.pctr * cand.pcvr * cand.ppb + spec.alpha * cand.pctr * b_star
    if ctx is None:
        raise ValueError("sigma objectives need an auction context")
    x = _own_signal(spec, cand) / ctx.mean(spec.signal)
    return cand.pctr * b_star * (1.0 + sigma(x, spec.w) * cand.adjust_range)


def affine_coefficients(
    spec: ObjectiveSpec, pctr, pcvr, ppb, r_a, pasr=None, ctx: Optional[AuctionContext] = None
) -> tuple[np.ndarray, np.ndarray]:
    """``(offset, slope)`` arrays such that f(b*) = offset + slope * b*."""
    if spec.kind is ObjectiveKind.F1:
        return pctr * pcvr * ppb, np.zeros_like(pctr)
    if spec.kind is ObjectiveKind.F2:
        return pctr * pcvr * ppb, spec.alpha * pctr
    if ctx is None:
        ctx = auction_context(pcvr, ppb, pasr)
    if spec.signal is Signal.GMV:
        own = pcvr * ppb
    elif spec.signal is Signal.CVR:
        own = pcvr
    else:
        if pasr is None or np.isnan(pasr).any():
            raise MissingAsr("ASR objective on candidates without pasr")
        own = pasr
    x = own / ctx.mean(spec.signal)
    return np.zeros_like(pctr), pctr * (1.0 + sigma_array(x, spec.w) * r_a)
