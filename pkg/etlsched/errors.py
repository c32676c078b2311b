"""
Exception hierarchy for etlsched.

Every error raised on purpose by the package derives from :class:`EtlSchedError`
and carries the process exit code the command-line interface maps it to:

- ``2``: the caller asked for something invalid (configuration, usage, workload)
- ``3``: the computation itself failed (numeric blow-up, shape bug, deadlock)
"""

from typing import Any, Dict, Optional, Tuple

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERIC = 3


class EtlSchedError(Exception):
    """Base class for all etlsched errors."""

    exit_code = EXIT_USAGE


class ConfigurationError(EtlSchedError):
    """
    Invalid or unreadable configuration.

    Args:
        message: Human readable description
        path: Dotted config path or file path the error refers to
        line: 1-based line number in the config file, when known
    """

    def __init__(self, message: str, path: Optional[str] = None, line: Optional[int] = None) -> None:
        self.message = message
        self.path = path
        self.line = line
        location = ""
        if path:
            location = f"{path}"
            if line is not None:
                location += f" (line {line})"
            location += ": "
        super().__init__(f"{location}{message}")

    def __reduce__(self) -> Tuple[Any, ...]:
        return type(self), (self.message, self.path, self.line)


class UsageError(EtlSchedError):
    """API used out of order, e.g. stepping a finished episode."""


class MalformedWorkloadError(EtlSchedError):
    """A task DAG violates its structural invariants."""


class AssignmentRejected(EtlSchedError):
    """A task cannot be placed on the requested node (no free slot or memory)."""


class DeadlockError(EtlSchedError):
    """Simulation cannot progress although tasks remain; always an internal bug."""

    exit_code = EXIT_NUMERIC


class ShapeError(EtlSchedError):
    """Array dimensions do not match the network layout."""

    exit_code = EXIT_NUMERIC


class NumericError(EtlSchedError):
    """
    A non-finite value appeared during training.

    Args:
        message: What went wrong
        diagnostics: Context such as step index and parameter name
    """

    exit_code = EXIT_NUMERIC

    def __init__(self, message: str, diagnostics: Optional[Dict[str, Any]] = None) -> None:
        self.message = message
        self.diagnostics: Dict[str, Any] = dict(diagnostics or {})
        if self.diagnostics:
            details = ", ".join(f"{k}={v}" for k, v in self.diagnostics.items())
            message = f"{message} [{details}]"
        super().__init__(message)

    def __reduce__(self) -> Tuple[Any, ...]:
        return type(self), (self.message, self.diagnostics)

    def with_context(self, **context: Any) -> "NumericError":
        """Same error with ``context`` added to the diagnostics; existing keys win."""
        return type(self)(self.message, {**context, **self.diagnostics})
