"""Exception hierarchy shared by every layer of the toolkit.

Each error carries a short machine-parsable class tag (``wire_class``) used by
the HTTP service as the ``error`` field of its JSON error body, and a process
exit code used by the command-line client.
"""
from __future__ import annotations


class ToolkitError(Exception):
    """Base class for all toolkit errors."""

    wire_class = "error"
    exit_code = 1

    def one_line(self) -> str:
        return f"{self.wire_class}: {self}"


class ParameterError(ToolkitError):
    """A caller-supplied value violates an operation's preconditions."""

    wire_class = "parameter"
    exit_code = 2


class UsageError(ToolkitError):
    """Malformed command invocation (bad flags, unreadable config)."""

    wire_class = "usage"
    exit_code = 2


class ParseError(ToolkitError):
    """Input file cannot be parsed; carries source name and line number."""

    wire_class = "parse"
    exit_code = 3

    def __init__(self, message: str, source: str | None = None, line: int | None = None):
        self.source = source
        self.line = line
        where = ""
        if source is not None:
            where = f" [{source}" + (f":{line}]" if line is not None else "]")
        super().__init__(message + where)


class RangeError(ToolkitError):
    """Topic time ranges do not overlap, or a requested window is empty."""

    wire_class = "range"
    exit_code = 3


class GapError(ToolkitError):
    """A topic has a recording gap too large to interpolate across."""

    wire_class = "gap"
    exit_code = 3


class NumericError(ToolkitError):
    """Numerical failure (non-positive-definite matrix, underflow)."""

    wire_class = "numeric"
    exit_code = 4


class NotFoundError(ToolkitError):
    """A referenced catalog entity does not exist."""

    wire_class = "not_found"
    exit_code = 5


class IntegrityError(ToolkitError):
    """A catalog write would violate referential or content integrity."""

    wire_class = "integrity"
    exit_code = 5


class CatalogLockedError(ToolkitError):
    """Another writer holds the catalog lock."""

    wire_class = "locked"
    exit_code = 5


# wire_class -> exit code, used by the CLI to translate service errors
EXIT_CODE_BY_CLASS = {
    cls.wire_class: cls.exit_code
    for cls in (
        ParameterError,
        UsageError,
        ParseError,
        RangeError,
        GapError,
        NumericError,
        NotFoundError,
        IntegrityError,
        CatalogLockedError,
    )
}
