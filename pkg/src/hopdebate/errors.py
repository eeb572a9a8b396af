"""Exception hierarchy shared across the package."""


class HopDebateError(Exception):
    """Base class for every error raised by this package."""


class InvalidConfig(HopDebateError, ValueError):
    pass


# -- gateway ---------------------------------------------------------------

class BackendError(HopDebateError):
    """Any failure while talking to a chat-completion backend."""


class TransportError(BackendError):
    pass


class RateLimitedError(BackendError):
    def __init__(self, message: str, retry_after: float | None = None):
        super().__init__(message)
        self.retry_after = retry_after


class MalformedResponseError(BackendError):
    pass


class ScriptMissError(BackendError):
    """The mock backend has no rule matching a request."""


# -- classification / planning ---------------------------------------------

class UnrecognizedLabel(HopDebateError, ValueError):
    pass


class PlanParseFailed(HopDebateError, ValueError):
    pass


# -- retrieval ---------------------------------------------------------------

class RetrievalError(HopDebateError):
    pass


class DuplicateIdError(RetrievalError, ValueError):
    pass


class EmptyCorpusError(RetrievalError, ValueError):
    pass


class EmptyQueryError(RetrievalError, ValueError):
    pass


# -- evaluation --------------------------------------------------------------

class NoGoldError(HopDebateError, ValueError):
    pass


class IdMismatchError(HopDebateError, KeyError):
    pass
