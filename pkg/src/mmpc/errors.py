"""Exception hierarchy shared by every module of the package."""

from __future__ import annotations


class MmpcError(Exception):
    """Base class for all errors raised by this package."""


# --- field arithmetic -------------------------------------------------------


class FieldError(MmpcError):
    """Problems with the modulus or with field arithmetic."""


class ZeroInverse(FieldError):
    """Raised when the inverse of zero is requested."""


class NotPrime(FieldError):
    """Raised when the modulus is not prime."""


class EvenField(FieldError):
    """Raised when the modulus is 2; the protocol needs +1 != -1."""


class NotInSpan(FieldError):
    """A target row is not a combination of the basis rows.

    Attributes:
        row: position of the first target row that could not be represented.
    """

    def __init__(self, row: int):
        super().__init__(f"target row {row} is not in the row span of the basis")
        self.row = row


class SingularMatrix(FieldError):
    """Raised when a square system has no unique solution."""


# --- library / demand -------------------------------------------------------


class LibraryError(MmpcError):
    """Invalid message library or demand."""


class BadDimensions(LibraryError):
    pass


class ZeroRow(LibraryError):
    pass


class DuplicateRow(LibraryError):
    pass


class DependentDemand(LibraryError):
    pass


class LengthMismatch(LibraryError):
    pass


# --- planning ---------------------------------------------------------------


class PlanError(MmpcError):
    """The planner could not build or validate a query layout."""


class BadParams(PlanError):
    pass


class DonorExhausted(PlanError):
    pass


class IndexClash(PlanError):
    pass


# --- coding -----------------------------------------------------------------


class CodingError(MmpcError):
    pass


class FieldTooSmall(CodingError):
    pass


class DimensionMismatch(CodingError):
    pass


class RedundancyViolated(CodingError):
    pass


# --- protocol ---------------------------------------------------------------


class ProtocolError(MmpcError):
    pass


class IndexOutOfRange(ProtocolError):
    pass


class SingularSystem(ProtocolError):
    pass


class MissingDonor(ProtocolError):
    """A stage needs a value (donor query or demanded symbol) that the
    decoder has not obtained yet, or a stage is decoded a second time."""


# --- audit ------------------------------------------------------------------


class AuditError(MmpcError):
    pass


class NoMapping(AuditError):
    """No sign assignment makes one plan look like the other.

    Attributes:
        triple: (server, round, stage, subset) of the first query where the
            propagation became inconsistent.
    """

    def __init__(self, message: str, triple: tuple | None = None):
        super().__init__(message)
        self.triple = triple


class InsufficientSamples(AuditError):
    pass


class ConfigError(MmpcError):
    """Invalid command-line or JSON configuration."""
