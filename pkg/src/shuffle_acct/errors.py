"""Exception hierarchy shared by every module of the accountant."""


class AccountantError(Exception):
    """Base class for all errors raised by ``shuffle_acct``."""


class DomainError(AccountantError, ValueError):
    """An argument lies outside the mathematical domain of a function."""


class BracketError(AccountantError, ValueError):
    """A root-finding bracket does not enclose a sign change.

    The endpoint values are kept so callers can widen the bracket.
    """

    def __init__(self, message, a=None, b=None, fa=None, fb=None):
        super().__init__(message)
        self.a, self.b, self.fa, self.fb = a, b, fa, fb


class ConvergenceError(AccountantError, RuntimeError):
    """An iterative method ran out of its evaluation budget."""

    def __init__(self, message, best=None):
        super().__init__(message)
        self.best = best


class PieceDetectionError(AccountantError):
    """Monotone pieces of the privacy amplification map could not be resolved."""

    def __init__(self, message, suggested_grid=None):
        super().__init__(message)
        self.suggested_grid = suggested_grid


class NumericalError(AccountantError, RuntimeError):
    """Floating-point breakdown, e.g. large negative mass after an inverse FFT."""


class InfeasibleBudgetError(AccountantError):
    """The requested error budget needs a grid larger than the configured cap."""

    def __init__(self, message, required_grid=None, minimal_eta=None):
        super().__init__(message)
        self.required_grid = required_grid
        self.minimal_eta = minimal_eta
