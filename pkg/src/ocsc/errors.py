"""Exception and warning types shared across the package."""


class ContractError(ValueError):
    """An input violates a documented precondition."""


class IntegrationDiverged(ArithmeticError):
    """A forward or backward sweep produced a non-finite value."""

    def __init__(self, time, message=None):
        self.time = float(time)
        super().__init__(message or f"non-finite state encountered at t={self.time:.12g}")


class AuditError(RuntimeError):
    """A problem function returned a non-finite value during an audit."""

    def __init__(self, sample, message):
        self.sample = sample
        super().__init__(f"{message} at sample {sample!r}")


class ControllabilityError(RuntimeError):
    """Neither extreme constant control brackets the requested endpoint."""


class SurgeryFailed(RuntimeError):
    def __init__(self, interval, message):
        self.interval = interval
        super().__init__(f"surgery failed on interval {interval}: {message}")


class BracketError(ValueError):
    """A scalar root equation does not change sign on the given interval."""


class InfeasibleProblem(RuntimeError):
    """No pair satisfying the discrete constraints was found."""


class AssumptionWarning(UserWarning):
    """A standing assumption appears violated on sampled data."""
