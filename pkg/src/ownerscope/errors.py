"""Exception hierarchy.

Every error carries the CLI exit code it maps to: 2 for bad input, 3 for
network trouble, 4 for analyses that are degenerate on the given data.
"""

from __future__ import annotations


class OwnerscopeError(Exception):
    exit_code = 2

    def __init__(self, message: str, *, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)

    def as_dict(self) -> dict:
        payload = {"error": type(self).__name__, "message": str(self)}
        if self.line is not None:
            payload["line"] = self.line
        return payload


class ValidationError(OwnerscopeError, ValueError):
    exit_code = 2


# ingest
class EmptyInput(ValidationError):
    pass


class MalformedRecord(ValidationError):
    pass


class SchemaViolation(ValidationError):
    pass


class SeverityOutOfRange(SchemaViolation):
    pass


class DuplicateName(SchemaViolation):
    pass


class NetworkError(OwnerscopeError):
    exit_code = 3


class AuthError(NetworkError):
    pass


class RateLimited(NetworkError):
    pass


# metrics
class ComponentUnknown(ValidationError):
    pass


class NegativeSpan(ValidationError):
    pass


class InvalidThreshold(ValidationError):
    pass


# stats
class LengthMismatch(ValidationError):
    pass


class TooFewSamples(ValidationError):
    pass


class ShapeMismatch(ValidationError):
    pass


class NotSymmetric(ValidationError):
    pass


class ZeroVector(ValidationError):
    pass


class InvalidLambda(ValidationError):
    pass


class EmptySample(ValidationError):
    pass


class UnknownColumn(ValidationError):
    pass


class RankDeficient(ValidationError):
    def __init__(self, message: str, columns: list[str] | None = None) -> None:
        self.columns = list(columns or [])
        super().__init__(message)


class DegenerateRangeWarning(UserWarning):
    """All distances equal; min-max scores collapse to 1.0."""


# analysis
class AnalysisDegenerate(OwnerscopeError):
    exit_code = 4


class SingleClass(AnalysisDegenerate):
    pass


class NoSeverityRows(AnalysisDegenerate):
    pass


class SingleGroup(AnalysisDegenerate):
    pass


class PoolTooSmall(AnalysisDegenerate):
    pass
