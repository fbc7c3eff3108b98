"""Exception and warning types raised across the package."""


class ParameterError(ValueError):
    """Model constants violate positivity/nonnegativity requirements."""


class DomainError(ValueError):
    """An argument lies outside the domain of the function."""


class ContractError(TypeError):
    """A test function does not satisfy the interface an operation needs."""


class ConvergenceError(RuntimeError):
    pass


class StiffnessError(RuntimeError):
    """Adaptive step size fell below the floating point floor."""


class SimulationError(RuntimeError):
    """Internal inconsistency detected during a stochastic simulation."""


class AccuracyWarning(UserWarning):
    pass
