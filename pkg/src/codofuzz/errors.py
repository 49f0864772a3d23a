"""Exception types shared across the engine."""


class CodofuzzError(Exception):
    """Base class for all engine errors."""


class ConfigurationError(CodofuzzError):
    """A run was configured with invalid dimensions, budgets, or ranges."""


class InputError(CodofuzzError):
    """A caller passed data that violates an operation's precondition."""


class DataError(CodofuzzError):
    """A dataset or suite is missing information an operation requires."""


class ParseError(CodofuzzError):
    """An on-disk artifact could not be decoded."""

    def __init__(self, message: str, path=None, offset=None):
        if path is not None:
            message = f"{path}: {message}"
        if offset is not None:
            message = f"{message} (at byte offset {offset})"
        super().__init__(message)
        self.path = path
        self.offset = offset


class CorruptionError(CodofuzzError):
    """A stored artifact does not match its recorded digest."""


class TransportError(CodofuzzError):
    """Communication with a remote oracle failed, including after retry.

    Carries how many attempts were made and the underlying cause so a run
    can be aborted with a resumable snapshot.
    """

    def __init__(self, message: str, attempts: int = 1, cause=None):
        super().__init__(message)
        self.attempts = attempts
        self.cause = cause


class ProtocolError(CodofuzzError):
    """A remote peer sent a message that violates the wire protocol."""
