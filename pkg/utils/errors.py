"""
Exception hierarchy for the toolkit.

Every error carries the process exit code the CLI reports for it:
    0 success · 2 usage · 3 data/schema/I-O · 4 infeasible plan · 5 internal
"""

from typing import Optional


class FraudLabError(Exception):
    """Base class for all toolkit errors."""
    exit_code: int = 5


# ─── Usage (exit 2) ───

class UsageError(FraudLabError):
    """Raised for invalid flags, unknown names or conflicting options."""
    exit_code = 2


class ConfigError(UsageError, ValueError):
    """Raised when a config file has unknown keys or out-of-range values."""


class HyperparameterError(UsageError, ValueError):
    """Raised when a model hyperparameter is unknown or out of range."""


# ─── Data (exit 3) ───

class DataError(FraudLabError):
    """Raised for problems with input data or output locations."""
    exit_code = 3


class SchemaError(DataError, ValueError):
    """Raised when CSV columns do not match the expected schema."""


class ParseError(DataError, ValueError):
    """Raised when a cell is non-numeric or non-finite."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class DataValidationError(DataError, ValueError):
    """Raised when data violates a Dataset invariant (labels, shapes, sizes)."""

    def __init__(self, message: str, row: Optional[int] = None):
        super().__init__(message)
        self.row = row


class OutputError(DataError, OSError):
    """Raised when the output directory cannot be written."""


# ─── Infeasible plans (exit 4) ───

class InfeasiblePlanError(FraudLabError, ValueError):
    """Raised when a resampling target cannot be reached from the input."""
    exit_code = 4


class SelectionError(InfeasiblePlanError):
    """Raised when no sweep point satisfies a ratio-selection criterion."""


# ─── Internal (exit 5) ───

class LeakageError(FraudLabError, AssertionError):
    """Raised when an evaluation set shares rows or scaler fit data with training."""
    exit_code = 5


class TrainingDivergedError(FraudLabError, ArithmeticError):
    """Raised when a training loss becomes NaN or infinite."""
    exit_code = 5
