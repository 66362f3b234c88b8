"""Exception types shared across the engine."""


class GatedTraderError(Exception):
    """Base class for engine errors."""


class ConfigError(GatedTraderError):
    pass


class TransportError(GatedTraderError):
    """A network source or channel could not be reached."""


class ReplayExhausted(GatedTraderError):
    """The replay file has no more timestamps; the session ends cleanly."""


class NonMonotoneTimestamp(GatedTraderError):
    pass


class StorageError(GatedTraderError):
    pass


class CorruptRecord(StorageError):
    pass


class SchemaViolation(GatedTraderError):
    """Backend output did not match the agent's JSON contract."""


class BackendTimeout(GatedTraderError):
    pass


class BackendError(GatedTraderError):
    """Backend failed for a reason other than a timeout."""


class ForeignRelease(GatedTraderError):
    """A caller tried to release the inference lock it does not hold."""


class SafetyGateClosed(GatedTraderError):
    pass


class ChannelViolation(GatedTraderError):
    """A request was sent over the wrong network channel."""


class RouterError(GatedTraderError):
    pass


class MissingJournal(GatedTraderError):
    pass
