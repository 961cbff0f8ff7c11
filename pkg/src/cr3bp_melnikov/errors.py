"""Exception types shared by all modules."""


class DomainError(ValueError):
    """Input outside the domain where a map or formula is defined."""


class SingularityError(ArithmeticError):
    """Evaluation at (or integration into) a singular point.

    Attributes
    ----------
    t_last : float or None
        Last time at which the state was still regular, when known.
    """

    def __init__(self, message, t_last=None):
        super().__init__(message)
        self.t_last = t_last


class CollisionError(SingularityError):
    """Distance to a primary fell below the collision threshold."""


class ConvergenceError(ArithmeticError):
    """An iterative solver failed to converge.

    ``info`` carries solver diagnostics (last iterate, residual, ...).
    """

    def __init__(self, message, info=None):
        super().__init__(message)
        self.info = dict(info or {})
