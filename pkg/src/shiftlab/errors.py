"""Exception types raised across shiftlab."""

from __future__ import annotations


class ShiftlabError(Exception):
    """Base class for all library errors."""

    #: exit code used by the command-line interface
    exit_code = 1


class ValidationError(ShiftlabError):
    """Input data or configuration does not satisfy a contract."""


class NumericalError(ShiftlabError):
    """A numerical routine could not produce a result."""

    exit_code = 2


# --- ingest

class SchemaMismatch(ValidationError):
    pass


class MalformedRow(ValidationError):
    def __init__(self, line: int, column: str, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column!r}: {reason}")


class DuplicateDyad(ValidationError):
    pass


class EmptyOfcList(ValidationError):
    pass


# --- etr

class NoObservations(ValidationError):
    pass


class MissingMeta(ValidationError):
    pass


class InsufficientData(ValidationError):
    pass


# --- regress

class DegenerateColumn(NumericalError):
    pass


class RankDeficient(NumericalError):
    pass


class SingleCluster(NumericalError):
    pass


# --- shift / impute

class ZeroActivityTotal(NumericalError):
    pass


class MissingDenominator(ValidationError):
    pass


class ZeroEstimates(NumericalError):
    pass


class FeatureCountMismatch(ValidationError):
    pass


# --- boot

class PipelineFailure(NumericalError):
    pass
