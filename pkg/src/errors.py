from typing import Any


class LdsError(Exception):
    """Base class for every error raised by this package."""


class ConfigError(LdsError, ValueError):
    pass


class UsageError(LdsError, ValueError):
    pass


class DataError(LdsError, ValueError):
    pass


class DimensionError(DataError):
    pass


class NumericalError(LdsError, RuntimeError):
    """Numerical breakdown; `state` holds whatever diagnostics were available."""

    def __init__(self, message: str, state: dict[str, Any] | None = None) -> None:
        super().__init__(message)
        self.state = state or {}
