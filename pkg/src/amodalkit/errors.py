"""Exception hierarchy.

Backend failures and pipeline-logic failures live on separate branches so
callers can tell a flaky model server from a bad input.
"""


class AmodalError(Exception):
    """Base class for every error raised by this package."""


class InvalidInputError(AmodalError, ValueError):
    """Input violates an operation's precondition."""


class MalformedGuidanceError(AmodalError):
    """A model response could not be parsed into the expected structure."""


class GenerationFailedError(AmodalError):
    """Synthetic scene generation could not meet its constraints."""


class CompletionFailedError(AmodalError):
    """Every scale of the completion loop failed."""


class BackendError(AmodalError):
    """Base class for failures originating in a model backend."""


class BackendUnavailableError(BackendError):
    def __init__(self, message: str, status: int | None = None):
        super().__init__(message)
        self.status = status


class MalformedResponseError(BackendError):
    """Backend answered, but not with usable text."""


class ScriptExhaustedError(BackendError):
    """A scripted backend had no entry matching the request."""
