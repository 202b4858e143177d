"""Exception types shared across the package."""


class FlownavError(Exception):
    """Base class for all errors raised by this package."""


class InvalidParameterError(FlownavError, ValueError):
    """An argument violates a documented precondition."""


class PgmParseError(FlownavError):
    """Malformed PGM stream. Carries the byte offset where parsing failed."""

    def __init__(self, message, offset):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class DegenerateDistributionError(FlownavError):
    """All samples are (numerically) identical; no threshold separates them."""


class InsufficientFlowError(FlownavError):
    """Not enough usable flow vectors to constrain an estimate."""


class DegenerateGeometryError(FlownavError):
    """Flow geometry is singular (e.g. near-parallel vectors)."""


class NoDirectionError(FlownavError):
    """Force vector too small to define a heading."""


class AlignmentError(FlownavError):
    """Frame sequence and recorded controls do not line up."""
