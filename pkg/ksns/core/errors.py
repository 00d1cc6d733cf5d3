"""
Error hierarchy for the KSNS package

Every error carries an ``exit_code`` used by the command line contract:
1 for configuration/storage/diagnostics failures, 2 for PDE runtime failures.
"""

from typing import Optional


class KsnsError(Exception):
    """Base class for all package errors"""

    exit_code: int = 1


# ============================================================================
# CONFIGURATION
# ============================================================================

class ConfigError(KsnsError):
    exit_code = 1


class ParseError(ConfigError):
    def __init__(self, line: int, column: int, reason: str):
        self.line = line
        self.column = column
        self.reason = reason
        super().__init__(f"line {line}, column {column}: {reason}")


class ValidationError(ConfigError):
    def __init__(self, key: str, constraint: str):
        self.key = key
        self.constraint = constraint
        super().__init__(f"{key}: {constraint}")


class UnknownKey(ConfigError):
    def __init__(self, key: str, line: Optional[int] = None):
        self.key = key
        self.line = line
        where = f" (line {line})" if line is not None else ""
        super().__init__(f"unknown key '{key}'{where}")


class UsageError(KsnsError):
    exit_code = 64


# ============================================================================
# GRID AND FIELDS
# ============================================================================

class GridError(KsnsError):
    exit_code = 1


class DimensionMismatch(GridError):
    pass


class InvalidExtent(GridError):
    pass


class FieldError(KsnsError):
    exit_code = 2


class NonFiniteField(FieldError):
    pass


class NegativeBase(FieldError):
    pass


class NonPhysicalDensity(FieldError):
    pass


class NotDivergenceFree(FieldError):
    pass


# ============================================================================
# SOLVERS AND DYNAMICS
# ============================================================================

class SolverError(KsnsError):
    exit_code = 2


class IncompatibleRHS(SolverError):
    pass


class NoConvergence(SolverError):
    def __init__(self, iterations: int, residual: float, target: float):
        self.iterations = iterations
        self.residual = residual
        self.target = target
        super().__init__(
            f"no convergence after {iterations} iterations "
            f"(residual {residual:.3e}, target {target:.3e})"
        )


class DynamicsError(KsnsError):
    exit_code = 2


class PositivityViolation(DynamicsError):
    pass


class BlowUpSuspected(DynamicsError):
    pass


class StalledStep(DynamicsError):
    pass


class RunAborted(DynamicsError):
    """A step error annotated with where the run stopped"""

    def __init__(self, step_index: int, time: float, cause: KsnsError):
        self.step_index = step_index
        self.time = time
        self.cause = cause
        self.exit_code = cause.exit_code
        super().__init__(f"step {step_index} at t={time:.6g}: {type(cause).__name__}: {cause}")


class StudyRunError(KsnsError):
    """A run inside a study failed; ``label`` names the run (e.g. eps=0.01)"""

    def __init__(self, label: str, cause: KsnsError):
        self.label = label
        self.cause = cause
        self.exit_code = cause.exit_code
        super().__init__(f"{label}: {cause}")


# ============================================================================
# DIAGNOSTICS AND STORAGE
# ============================================================================

class DiagnosticsError(KsnsError):
    exit_code = 1


class EmptySeries(DiagnosticsError):
    pass


class IncompatibleTestFunction(DiagnosticsError):
    pass


class StorageError(KsnsError):
    exit_code = 1


class CorruptSnapshot(StorageError):
    pass


class IoFailure(StorageError):
    pass
