class DvoteError(Exception):
    """Base class for every error raised by the dvote apps."""


class DomainError(DvoteError, ValueError):
    """An operation was called outside its precondition."""


class ConfigError(DomainError):
    """Invalid generation or consistency parameters."""


class SpecValidationError(DomainError):
    """A Markov chain definition is not stochastic."""


class InconsistentEvidenceError(DomainError):
    """The committed tokens have zero probability under the chain."""


class DenoiserError(DvoteError):
    """A denoiser could not produce distributions for a request."""


class RetryableDenoiserError(DenoiserError):
    """Transport failure talking to a remote denoiser."""


class ProtocolError(DenoiserError):
    """A denoiser answered with something that breaks the wire contract."""


class TaskError(DvoteError):
    """A task file or task record is unusable.

    ``lines`` holds the 1-based line numbers the error refers to.
    """

    def __init__(self, message, lines=()):
        super().__init__(message)
        self.lines = tuple(lines)


class RunError(DvoteError):
    """A run produced nothing to report."""
