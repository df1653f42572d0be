"""Exception hierarchy shared by the toolkit and mapped to CLI exit codes."""


class IlsegError(Exception):
    """Base class for all toolkit errors."""


class ConfigError(IlsegError, ValueError):
    """Invalid configuration or parameters (CLI exit code 2)."""


class DataError(IlsegError, ValueError):
    """Malformed or inconsistent input data (CLI exit code 3)."""


class SvolMagicError(DataError):
    pass


class SvolSizeError(DataError):
    pass


class SvolDomainError(DataError):
    """Payload values violate the declared grid kind (non-finite, non-binary, out of [0, 1])."""


class NumericalError(IlsegError, ArithmeticError):
    """Non-finite loss or gradient during training (CLI exit code 4)."""

    def __init__(self, message, snapshot=None):
        super().__init__(message)
        self.snapshot = snapshot or {}
