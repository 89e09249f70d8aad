"""Exception hierarchy shared across the engine."""

from __future__ import annotations


class ACRAGError(Exception):
    """Base class for every error raised by this package."""


class InvalidArgument(ACRAGError, ValueError):
    pass


class ConfigurationError(ACRAGError):
    pass


class TemplateError(ConfigurationError):
    """Missing, unknown, or malformed template variables."""

    def __init__(self, message: str, variable: str | None = None):
        super().__init__(message)
        self.variable = variable


class TransportError(ACRAGError):
    """Backend unreachable or timed out. Retryable."""


class ProtocolError(ACRAGError):
    """Backend replied with something we cannot interpret. Not retryable."""


class EmptyCompletionError(ACRAGError):
    pass


class IngestionError(ACRAGError):
    pass


class EmbedderError(ACRAGError):
    pass


class IndexBuildError(ACRAGError):
    pass


class QueryError(ACRAGError):
    pass


class DissectionError(ACRAGError):
    pass


class SessionError(ACRAGError):
    """A session could not finish. Carries whatever trace was recorded."""

    def __init__(self, message: str, trace=None):
        super().__init__(message)
        self.trace = trace


class LoadError(ACRAGError):
    def __init__(self, message: str, line: int | None = None):
        super().__init__(message)
        self.line = line


class SweepConfigError(ConfigurationError):
    pass
