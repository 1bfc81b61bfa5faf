"""Exception hierarchy shared by every module."""


class LagrError(Exception):
    """Base class for all errors raised by this package."""


class InputError(LagrError, ValueError):
    """Malformed or out-of-range input values."""


class ConfigurationError(LagrError, ValueError):
    """An option combination that cannot be honoured."""


class SchemaError(InputError):
    """A data file is missing a required column."""


class ParseError(InputError):
    """A data file cell could not be interpreted."""


class DegenerateNeighborhoodError(LagrError):
    """Too few observations carry positive kernel weight at a location."""


class SingularDesignError(LagrError):
    """The weighted Gram matrix is singular beyond the jitter tolerance.

    Attributes
    ----------
    groups : list of int
        Covariate groups participating in the near-null direction.
    """

    def __init__(self, message, groups=()):
        super().__init__(message)
        self.groups = list(groups)


class NumericalError(LagrError, ArithmeticError):
    """A numerical routine failed (indefinite block, bracket not found, ...)."""


class NonConvergenceError(NumericalError):
    """An iterative fit did not converge."""


class TuningError(LagrError):
    """Every candidate on a tuning grid failed."""
