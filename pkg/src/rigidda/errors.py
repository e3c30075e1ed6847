"""Exception hierarchy shared across the package.

Exit-code mapping used by the CLI: validation errors -> 2,
numerical failures -> 3, I/O failures -> 4.
"""


class RigiddaError(Exception):
    """Base class for all package errors."""

    exit_code = 1


class ValidationError(RigiddaError):
    """Invalid configuration, geometry, or argument values."""

    exit_code = 2


class NumericalError(RigiddaError):
    """Non-finite values or diverging optimization."""

    exit_code = 3


class VolumeIOError(RigiddaError):
    """File format problems. ``code`` is a stable machine-readable tag."""

    exit_code = 4

    def __init__(self, code: str, message: str):
        super().__init__(f"{code}: {message}")
        self.code = code
