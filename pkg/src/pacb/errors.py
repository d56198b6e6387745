"""Exception types raised by the library and mapped to CLI exit codes."""


class PacbError(Exception):
    """Base class for library errors."""


class ConfigError(PacbError, ValueError):
    """Invalid configuration or violated precondition (CLI exit code 1)."""


class DivergenceError(PacbError):
    """A complexity term is infinite for the requested configuration (CLI exit code 2)."""


class InstabilityError(PacbError, ValueError):
    """ARX model is not strictly stable, or a stationary solve failed to converge."""


class ResourceError(PacbError):
    """Requested matrix exceeds the configured size cap."""


class DatasetParseError(PacbError, ValueError):
    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
