from typing import Iterable, List


class ContinualError(Exception):
    """Base class for every error raised by the engine."""


class DimensionError(ContinualError, ValueError):
    pass


class InputError(ContinualError, ValueError):
    pass


class NumericError(ContinualError, ArithmeticError):
    pass


class StateError(ContinualError, RuntimeError):
    pass


class ConfigurationError(ContinualError, ValueError):
    pass


class DatasetParseError(ContinualError, ValueError):
    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class DatasetValidationError(ContinualError, ValueError):
    pass


class ConfigValidationError(ContinualError, ValueError):
    """Carries every violation found, not just the first one."""

    def __init__(self, errors: Iterable[str]):
        self.errors: List[str] = list(errors)
        super().__init__("; ".join(self.errors))


class ComparabilityError(ContinualError, ValueError):
    pass
