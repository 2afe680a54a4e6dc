"""Exception hierarchy. Each category maps to a CLI exit code."""


class DGFError(Exception):
    exit_code = 1


class ConfigError(DGFError, ValueError):
    """Invalid configuration or parameter combination."""

    exit_code = 2


class ContractError(DGFError, ValueError):
    """Caller violated an operation precondition (shapes, ranges)."""

    exit_code = 2


class DGFIOError(DGFError, OSError):
    """Malformed, truncated or unwritable file."""

    exit_code = 3

    def __init__(self, message, offset=None):
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.offset = offset


class NumericalError(DGFError, ArithmeticError):
    """Non-finite values or divergence during optimization."""

    exit_code = 4

    def __init__(self, message, trace=None):
        super().__init__(message)
        self.trace = list(trace) if trace is not None else []
