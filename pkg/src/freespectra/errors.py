"""Exception hierarchy shared by all freespectra modules."""


class FreeSpectraError(Exception):
    """Base class for every error raised by this package."""


class ContractError(FreeSpectraError, ValueError):
    """An operation was called outside its precondition (e.g. non-self-adjoint input)."""


class SizeError(FreeSpectraError, ValueError):
    """Matrix or list dimensions do not match."""


class StructureError(FreeSpectraError, ValueError):
    """A matrix lacks required structure (Hermitian, positive definite, ...)."""


class ConditioningError(FreeSpectraError, ArithmeticError):
    """A linear solve was numerically singular.

    Attributes
    ----------
    condition : float
        Estimated condition number of the offending matrix.
    """

    def __init__(self, message, condition=float("inf")):
        super().__init__(f"{message} (condition estimate {condition:.3e})")
        self.condition = condition


class SpectralPointError(ConditioningError):
    """The evaluation point lies on the spectrum, so the pencil is singular."""


class DivergenceError(FreeSpectraError, ArithmeticError):
    """The subordination iteration did not reach its tolerance."""

    def __init__(self, message, residual, iterations, state=None):
        super().__init__(f"{message} (residual {residual:.3e} after {iterations} iterations)")
        self.residual = residual
        self.iterations = iterations
        self.state = state


class SolverQualityError(FreeSpectraError, ArithmeticError):
    """A recovered density is negative beyond round-off."""


class ParameterError(FreeSpectraError, ValueError):
    """A numerical parameter is outside its admissible range."""
