"""Exception hierarchy shared by all modules."""


class VKError(Exception):
    """Base class for every error raised by :mod:`vkdelay`."""


class DataError(VKError, ValueError):
    """Invalid numerical input (non-finite values, bad parameters)."""


class GridMismatchError(VKError, ValueError):
    """Fields defined on different grids were combined."""


class SingularFlowError(DataError):
    """Flow speed U = 1 (Mach 1) is excluded from the model."""


class SequencingError(VKError, RuntimeError):
    """History or state used out of order (wrong time, history not full)."""


class ConvergenceError(VKError, RuntimeError):
    """An iterative solve hit its iteration cap.

    The final relative residual is kept on ``residual``.
    """

    def __init__(self, message, residual=float("nan"), iterations=0):
        super().__init__(message)
        self.residual = residual
        self.iterations = iterations


class ConfigError(VKError, ValueError):
    """Configuration file syntax error, unknown key or constraint violation."""

    def __init__(self, message, key=None, line=None):
        loc = []
        if key is not None:
            loc.append(key)
        if line is not None:
            loc.append(f"line {line}")
        if loc:
            message = f"{message} [{', '.join(loc)}]"
        super().__init__(message)
        self.key = key
        self.line = line
