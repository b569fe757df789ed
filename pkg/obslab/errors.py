"""Exception hierarchy.

The CLI maps ConfigError to exit status 1 and every other ObslabError to 2.
"""

from dataclasses import dataclass


class ObslabError(Exception):
    """Base class for all errors raised by obslab."""


@dataclass(frozen=True)
class Violation:
    """One config problem: where it is, which key, what constraint failed."""

    line: int | None
    key: str
    constraint: str

    def __str__(self) -> str:
        where = f"line {self.line}" if self.line is not None else "config"
        return f"{where}: {self.key}: {self.constraint}"


class ConfigError(ObslabError):
    """Invalid experiment configuration (exit status 1)."""

    def __init__(self, violations: list[Violation] | str):
        if isinstance(violations, str):
            violations = [Violation(None, "-", violations)]
        self.violations = list(violations)
        super().__init__("; ".join(str(v) for v in self.violations))


class OutputLockedError(ConfigError):
    """Another run holds the output directory lock."""


class DomainError(ObslabError, ValueError):
    """Argument outside the domain an operation accepts."""


class NumericalError(ObslabError):
    """Numerical failure (exit status 2)."""


class CFLViolation(NumericalError):
    pass


class InstabilityError(NumericalError):
    def __init__(self, message: str, time_index: int):
        self.time_index = time_index
        super().__init__(f"{message} (time index {time_index})")


class EigenSolverError(NumericalError):
    def __init__(self, message: str, residual: float):
        self.residual = residual
        super().__init__(f"{message} (residual {residual:.3e})")


class IllPosedKernelError(NumericalError):
    pass


class RankDeficientError(NumericalError):
    def __init__(self, condition: float):
        self.condition = condition
        super().__init__(f"dictionary is rank deficient (condition number {condition:.3e})")


class StagnationError(NumericalError):
    def __init__(self, message: str, history: list[dict]):
        self.history = history
        super().__init__(f"{message} after {len(history)} iterations")


class NoStableExponentError(NumericalError):
    pass


class ProbeFailure(NumericalError):
    def __init__(self, probe_id: str, cause: Exception):
        self.probe_id = probe_id
        super().__init__(f"probe {probe_id}: {cause}")
