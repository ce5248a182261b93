"""Exception types shared across the package."""


class WsbcError(Exception):
    """Base class for all package errors."""


class ValidationError(WsbcError):
    """Bad inputs, malformed files, or violated preconditions."""


class NumericError(WsbcError):
    """Non-finite values, divergence, or other numeric failures."""


class ConstraintViolation(WsbcError):
    """A particle left the weight box; indicates a search-driver bug."""
