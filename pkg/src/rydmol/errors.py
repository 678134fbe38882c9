class DomainError(ValueError):
    """Input outside the domain of an operation (bad quantum numbers, etc.)."""


class ConvergenceError(RuntimeError):
    """An iterative solver or finite-difference estimate did not converge."""

    def __init__(self, msg, last=None):
        super().__init__(msg)
        self.last = last


class DegeneracyError(RuntimeError):
    """A perturbative denominator fell below the degeneracy guard."""

    def __init__(self, msg, state=None):
        super().__init__(msg)
        self.state = state
