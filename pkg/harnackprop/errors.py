from __future__ import annotations


class HarnackPropError(RuntimeError):
    exit_code = 1


class ConfigError(HarnackPropError):
    exit_code = 2


class ParseError(ConfigError):
    def __init__(self, offset: int, message: str) -> None:
        super().__init__(f"{message} (at offset {offset})")
        self.offset = offset
        self.message = message


class PreconditionError(HarnackPropError):
    exit_code = 3


class H2Violation(PreconditionError):
    pass


class ResolutionError(PreconditionError):
    pass


class UnreachedStart(PreconditionError):
    pass


class OutOfGridError(PreconditionError):
    pass


class NotReachable(PreconditionError):
    pass


class PathDomainError(PreconditionError):
    pass


class NonDiagonalError(PreconditionError):
    pass


class DegeneracyError(PreconditionError):
    pass


class NumericalError(HarnackPropError):
    exit_code = 4


class EvaluationError(NumericalError):
    pass


class MonotonicityError(NumericalError):
    pass


class NonConvergence(NumericalError):
    def __init__(self, residual: float, iterations: int) -> None:
        super().__init__(f"no convergence after {iterations} sweeps, residual {residual:.3e}")
        self.residual = residual
        self.iterations = iterations
