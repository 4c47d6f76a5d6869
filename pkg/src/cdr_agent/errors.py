"""Exception hierarchy shared across the package."""

from __future__ import annotations


class CdrAgentError(Exception):
    """Base class for all package errors."""


class RegistryLoadError(CdrAgentError):
    """A definition directory could not be loaded (parse or validation failure)."""


class ProviderTransportError(CdrAgentError):
    """A remote provider call failed after the configured retries."""


class EmbeddingError(CdrAgentError):
    """An embedding request produced no usable vector (empty text, bad dims, NaN)."""


class MissingFieldError(CdrAgentError):
    """A predicate referenced a field absent from the evaluation scope."""

    def __init__(self, field: str, node_path: str):
        super().__init__(f"field '{field}' is not available at {node_path}")
        self.field = field
        self.node_path = node_path


class RuleExecutionError(CdrAgentError):
    """Rule interpretation failed; carries the path of the failing node."""

    def __init__(self, message: str, node_path: str):
        super().__init__(f"{message} (at {node_path})")
        self.node_path = node_path


class IncompleteAssignmentError(CdrAgentError):
    """execute_rule was called before every declared variable had a value."""

    def __init__(self, cdr_id: str, missing: list[str]):
        super().__init__(f"CDR '{cdr_id}' is missing values for: {', '.join(missing)}")
        self.cdr_id = cdr_id
        self.missing = missing


class SessionError(CdrAgentError):
    """Base class for interactive-session failures."""


class UnknownSessionError(SessionError):
    pass


class SessionStateError(SessionError):
    """Operation not valid for the session's current status."""


class VariableResolutionError(SessionError):
    """A supplied variable was unknown, not pending, or failed type coercion."""
