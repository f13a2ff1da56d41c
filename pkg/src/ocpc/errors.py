"""Exception classes raised across the engine."""

from __future__ import annotations


class OcpcError(Exception):
    """Base class for every error raised by this package."""


class ValidationError(OcpcError, ValueError):
    """An auction input violates a type invariant."""

    def __init__(self, message: str, campaign_id=None):
        super().__init__(message)
        self.campaign_id = campaign_id


class EmptyCandidates(ValidationError):
    pass


class NonPositiveBid(ValidationError):
    pass


class ProbabilityOutOfRange(ValidationError):
    pass


class NonPositiveExpectedCvr(ValidationError):
    pass


class InvalidAdjustRange(ValidationError):
    pass


class InvalidSlotCount(ValidationError):
    pass


# calibration
class NonPositiveThreshold(OcpcError, ValueError):
    pass


class EmptyHistory(OcpcError, ValueError):
    pass


class AllZeroAfterTrim(OcpcError, ValueError):
    pass


class EmptySamples(OcpcError, ValueError):
    pass


# bid optimization
class NegativeInput(OcpcError, ValueError):
    pass


class NonPositiveExponent(OcpcError, ValueError):
    pass


# objectives
class ZeroNormalizer(OcpcError, ValueError):
    pass


class MissingAsr(OcpcError, ValueError):
    pass


# auction
class NoEligibleWinner(OcpcError):
    pass


class UnrankedOutcome(OcpcError, ValueError):
    pass


# metrics
class DegenerateLabels(OcpcError, ValueError):
    pass


class NoValidGroups(OcpcError, ValueError):
    pass


class EmptyLedger(OcpcError, ValueError):
    pass


class EmptyRecords(OcpcError, ValueError):
    pass


# simulator / datagen / cli
class UnorderedLog(OcpcError):
    pass


class LogFormatError(OcpcError, ValueError):
    pass


class InvalidSpec(OcpcError, ValueError):
    pass


class ManifestMismatch(OcpcError):
    pass
