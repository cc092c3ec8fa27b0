"""Exception types shared across the package."""


class ContractViolation(ValueError):
    """An input broke a documented precondition (shape, range, unitarity)."""


class ConvergenceError(ArithmeticError):
    """An iterative numerical routine hit its iteration cap."""


class TrainingDivergence(RuntimeError):
    """The loss became non-finite during optimization."""

    def __init__(self, message, iteration=None, history=None):
        super().__init__(message)
        self.iteration = iteration
        self.history = list(history) if history is not None else []


class ReconstructionError(ValueError):
    """Interferometer readings admit no physical amplitude."""

    def __init__(self, message, residual=float("nan")):
        super().__init__(message)
        self.residual = residual
