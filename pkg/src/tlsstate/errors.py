"""Exception hierarchy shared by all subsystems.

The CLI maps the learning/harness failures onto distinct exit codes, so every
failure mode a user can hit has its own class here.
"""


class TlsStateError(Exception):
    """Base class for everything raised deliberately by this package."""


class ContractError(TlsStateError, ValueError):
    """A precondition of an operation was violated by the caller."""


class ModelFormatError(TlsStateError, ValueError):
    """A model file could not be parsed."""


class ConfigError(TlsStateError, ValueError):
    """Unsupported or inconsistent configuration."""


# -- learning ---------------------------------------------------------------

class QueryError(TlsStateError):
    """A membership query failed for a transient reason and may be retried."""


class SutUnavailable(TlsStateError):
    """The system under test could not be reached (connect/accept timeout)."""


class NondeterminismError(TlsStateError):
    """The SUT answered the same query differently across retries."""


class LearningDiverged(TlsStateError):
    """The learner exceeded its refinement-round cap."""


# -- tls codec --------------------------------------------------------------

class TLSError(TlsStateError):
    pass


class MalformedRecord(TLSError, ValueError):
    pass


class MalformedHandshake(TLSError, ValueError):
    pass


class IncompleteState(TLSError):
    """Session secrets are missing something the computation needs."""


class KeyExchangeError(TLSError):
    pass


class RecordAuthError(TLSError):
    """MAC or AEAD tag verification failed on an incoming record."""


# -- analysis ---------------------------------------------------------------

class NoValidHandshake(TlsStateError):
    """The model does not contain the expected handshake path."""

    def __init__(self, step, message):
        super().__init__(message)
        self.step = step


class GoldenMismatch(TlsStateError):
    pass
