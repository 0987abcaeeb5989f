"""Exception types shared across the simulator."""


class QdbError(Exception):
    """Base class for all simulator errors."""


class AlreadyConsumed(QdbError):
    """A quantum handle was measured a second time."""


class UnknownHandle(QdbError):
    """A quantum handle does not refer to a live state in the registry."""


class ProtocolViolation(QdbError):
    """A party received a message that is illegal in its current phase."""


class NegativeElapsed(QdbError):
    """An RTT computation saw t_r < t_s + alpha."""


class DeadlockedTrial(QdbError):
    """The event loop drained with the verdict party still mid-protocol."""


class InsufficientTestRounds(QdbError):
    """Reflection detection was asked to flag with too few test rounds."""


class ConfigError(QdbError):
    """An experiment configuration is inconsistent or incomplete."""
