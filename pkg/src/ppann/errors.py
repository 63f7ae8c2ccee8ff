class DomainError(ValueError):
    """Input outside the admissible set (e.g. det F <= 0, t outside [0, 1])."""


class SolverError(RuntimeError):
    """A nonlinear load-case solve did not converge."""


class NumericalError(RuntimeError):
    """Training produced a non-finite loss or gradient."""
