"""Exception hierarchy shared across the package."""

from __future__ import annotations


class RubricRLError(Exception):
    """Base class for all package errors."""


class InvariantViolation(RubricRLError):
    """A domain record violates one of its declared invariants."""

    def __init__(self, record_type: str, invariant: str):
        self.record_type = record_type
        self.invariant = invariant
        super().__init__(f"{record_type}: {invariant}")


class NoAnswerFound(RubricRLError):
    """No final-answer candidate could be extracted from a trajectory."""


class UnknownTemplate(RubricRLError):
    """Requested prompt template does not exist in the store."""


class MissingSlot(RubricRLError):
    """A template placeholder was left unfilled."""


class JudgeUnavailable(RubricRLError):
    """Judge transport failed and retries are exhausted."""


class UnparseableVerdict(RubricRLError):
    """Judge responded but its output did not match the expected grammar."""


class EmptyVerdicts(RubricRLError):
    """Rubric reward requested for an empty verdict list."""


class MissingRubricReward(RubricRLError):
    """Reward combination required a rubric reward that is absent."""


class GroupTooSmall(RubricRLError):
    """Advantage normalization needs at least two rewards."""


class SupportMismatch(RubricRLError):
    """KL divergence requested for distributions over different supports."""


class UnnormalizedDistribution(RubricRLError):
    """A categorical distribution does not sum to one within tolerance."""


class CriterionCountOutOfRange(RubricRLError):
    """Parsed rubric criterion count violates the configured bounds."""


class DivergenceDetected(RubricRLError):
    """A policy parameter became non-finite during training."""
