"""Exception hierarchy shared across the package."""


class TokenRepairError(Exception):
    """Base class for all errors raised by tokenrepair."""


class InsufficientLogprobDepth(TokenRepairError):
    """A step carries fewer than two alternatives, so the top-2 gap is undefined."""

    def __init__(self, message: str, position: int | None = None):
        super().__init__(message)
        self.position = position


class EmptyTrace(TokenRepairError):
    pass


class DegenerateUncertainty(TokenRepairError):
    """The predecessor uncertainty is zero and the log ratio is undefined."""


class InvalidDecayFactor(TokenRepairError):
    pass


class EmptyCandidatePool(TokenRepairError):
    pass


class EmptyDataset(TokenRepairError):
    pass


class BackendError(TokenRepairError):
    pass


class BackendUnavailable(BackendError):
    """Transient endpoint failure; callers may retry."""


class PrefixForcingUnsupported(BackendError):
    pass


class HarnessError(TokenRepairError):
    pass


class NoPatchInCompletion(TokenRepairError):
    pass


class ConfigError(TokenRepairError):
    pass


class InvalidConfig(ConfigError):
    """Configuration parsed but holds values the engine cannot run with."""


class TruncatedAlternatives(UserWarning):
    """Fewer replacement tokens were available than requested (non-fatal)."""
