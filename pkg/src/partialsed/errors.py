"""Exception types shared across the package."""


class PartialSedError(Exception):
    """Base class for all package errors."""


class AnnotationError(PartialSedError):
    """Malformed annotation text (bad line, bad numbers, unknown label)."""


class ConfigError(PartialSedError):
    """Inconsistent or incomplete configuration."""


class ContractError(PartialSedError):
    """An input violates a documented precondition."""


class DataError(PartialSedError):
    """Corpus or manifest contents are unusable."""


class IntegrityError(PartialSedError):
    """A persisted artifact fails its self-checks (hash, shape, truncation)."""


class LlmError(PartialSedError):
    """LLM candidate generation failed.

    ``retryable`` distinguishes transient network/auth failures from
    unparseable replies; the raw reply (when any) rides along for debugging.
    """

    def __init__(self, message, retryable=False, raw_reply=None):
        super().__init__(message)
        self.retryable = retryable
        self.raw_reply = raw_reply
