"""Exception types shared across the pipeline."""

from __future__ import annotations


class RoutinesigError(Exception):
    """Base class for all errors raised by this package."""


class SchemaError(RoutinesigError):
    """Malformed input file: wrong columns, unparseable cell, bad spec field."""


class MissingData(RoutinesigError):
    """A day's sensor stream is absent, so the derived features are null."""


class InsufficientData(RoutinesigError):
    """Not enough observations for the requested computation."""


class EmptySegment(RoutinesigError):
    """A signature was requested over zero days."""


class DomainError(RoutinesigError):
    """Numeric input outside the operation's domain (non-SPD matrix,
    negative probability mass, dimension mismatch, ...)."""


class SingularFit(RoutinesigError):
    """Mixture fit collapsed despite re-initialization attempts."""


class SweepFailed(RoutinesigError):
    """Every fit in a model sweep failed."""


class Incomparable(RoutinesigError):
    """Two transition matrices share no defined rows."""


class RankError(RoutinesigError):
    """Design matrix is rank deficient; names the collinear columns."""

    def __init__(self, columns: list[str]):
        self.columns = list(columns)
        super().__init__(f"design matrix is rank deficient; collinear columns: {self.columns}")
