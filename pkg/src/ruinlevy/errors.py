"""Exception hierarchy shared by every module."""


class RuinLevyError(Exception):
    """Base class for all library errors."""


class ConfigError(RuinLevyError, ValueError):
    """Malformed or incomplete model description."""


class AdmissibilityError(RuinLevyError):
    """The exponential moment condition psi(alpha) < 0 (or positive loading) fails."""


class NormalizationError(RuinLevyError):
    """Quadrature for the claim normalizing constant missed its tolerance."""


class DomainError(RuinLevyError, ValueError):
    """Argument outside the region where a quantity is defined."""


class ConvergenceError(RuinLevyError, ArithmeticError):
    """A root finder or fixed-point iteration did not converge."""


class UnsupportedModel(RuinLevyError):
    """The requested object is only implemented for sigma == 0."""


class GridError(RuinLevyError):
    """Evaluation point or required range lies outside a tabulated grid."""


class PolicyError(RuinLevyError):
    """A path never met its stopping rule within the event budget."""


class BudgetError(RuinLevyError):
    """Rejection sampling exhausted its attempt budget.

    Attributes:
        achieved: number of accepted samples before the budget ran out.
    """

    def __init__(self, message, achieved=0):
        super().__init__(message)
        self.achieved = achieved


class EmptyInput(RuinLevyError, ValueError):
    """A statistic was requested on an empty sample."""
