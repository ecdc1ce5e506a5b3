"""
Exception types raised by orthogonal_cut.

Every error carries a message describing the offending argument, in the form
'C must be positive semidefinite (smallest eigenvalue -0.1).'
"""


class OrthoCutError(ValueError):
    """Base class of all errors raised by this package."""


class InputError(OrthoCutError):
    """Invalid argument value: non-finite entries, non-Hermitian or non-PSD input."""


class ShapeError(InputError):
    """Arguments have inconsistent or unsupported dimensions."""


class DomainError(InputError):
    """Argument outside the domain of a function, e.g. rho < 1 for phi_rho."""


class FeasibilityError(OrthoCutError):
    """A tuple violates X_i X_i^H = I beyond the accepted tolerance."""


class CapacityError(OrthoCutError):
    """Instance is too large for an exhaustive or grid search."""


class UnsupportedError(OrthoCutError):
    """Requested variant is not available, e.g. closed forms for d > 3."""
