"""Exception hierarchy shared by all modules."""


class GustppError(Exception):
    """Base class for package errors."""


class ConfigError(GustppError, ValueError):
    """Invalid configuration (scenario, split years, hyperparameters)."""


class DataError(GustppError, ValueError):
    """Malformed or invalid input data.

    ``line`` and ``column`` are filled in when the error can be located in a
    file.
    """

    def __init__(self, message, line=None, column=None):
        loc = []
        if line is not None:
            loc.append(f"line {line}")
        if column is not None:
            loc.append(f"column {column!r}")
        if loc:
            message = f"{message} ({', '.join(loc)})"
        super().__init__(message)
        self.line = line
        self.column = column


class DomainError(GustppError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class OptimizationError(GustppError, RuntimeError):
    """Optimizer failed after its fallback; carries the best point found."""

    def __init__(self, message, best_x=None, best_fun=None):
        super().__init__(message)
        self.best_x = best_x
        self.best_fun = best_fun


class ModelKeyError(GustppError, KeyError):
    """Requested (station, lead time, month) key missing from a fitted model."""

    def __str__(self):
        return str(self.args[0]) if self.args else "missing key"
