"""Exception types shared across the toolkit."""


class NPKitError(Exception):
    """Base class for all toolkit errors."""


class DimensionError(NPKitError, ValueError):
    """Tensor shapes or widths do not line up."""


class DomainError(NPKitError, ValueError):
    """An argument lies outside the domain of an operation (e.g. sigma <= 0)."""


class NumericError(NPKitError, ArithmeticError):
    """A non-finite value appeared during a computation."""


class DecompositionError(NPKitError, ArithmeticError):
    """A matrix could not be factorised even after jitter escalation."""


class FormatError(NPKitError, ValueError):
    """A file or byte buffer does not follow the expected binary layout."""
