"""Exception types shared across the package."""


class DomainError(ValueError):
    """An argument lies outside the domain of a physical formula."""


class ConfigError(ValueError):
    """A configuration record or file is incomplete or malformed."""

    def __init__(self, message, line=None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class SingularityError(DomainError):
    """A formula is evaluated exactly at one of its poles."""


class NoCancellationError(RuntimeError):
    """No sign change of the hybridisation coupling inside the search bracket."""


class IllConditionedError(ValueError):
    """A least-squares regression has (near) collinear regressors."""


class InstabilityError(RuntimeError):
    """A time-domain integration produced a non-finite state."""

    def __init__(self, step):
        self.step = step
        super().__init__(f"non-finite state at step {step}")


class TraceFormatError(IOError):
    """A binary trace file is truncated or has a bad header."""


class HashMismatchError(ValueError):
    """Two output files were produced from different configurations."""
