"""Exception hierarchy shared across the toolkit.

Every error carries a stable upper-case ``code`` so callers (and the CLI exit
code mapping) can branch on it without string matching on messages.
"""

from __future__ import annotations

from dataclasses import dataclass


class CoilQAError(Exception):
    """Base class. ``code`` is a stable machine-readable identifier."""

    code = "ERROR"

    def __init__(self, message: str = "", *, code: str | None = None) -> None:
        if code is not None:
            self.code = code
        super().__init__(message or self.code)


class InputError(CoilQAError):
    """Bad input data or configuration (CLI exit code 2)."""

    code = "INVALID_INPUT"


@dataclass(frozen=True)
class Issue:
    """One validation violation; ``index`` is the offending sample/row, if any."""

    code: str
    field: str
    index: int | None = None
    detail: str = ""

    def __str__(self) -> str:
        where = self.field if self.index is None else f"{self.field}[{self.index}]"
        return f"{self.code} at {where}" + (f": {self.detail}" if self.detail else "")


class ValidationError(InputError):
    """Raised with the complete list of violations, never just the first."""

    code = "VALIDATION_FAILED"

    def __init__(self, issues: list[Issue]) -> None:
        self.issues = list(issues)
        super().__init__("; ".join(str(i) for i in self.issues))

    @property
    def codes(self) -> list[str]:
        return [i.code for i in self.issues]


class ProtocolError(CoilQAError):
    """Wire-level exchange failure (CLI exit code 3)."""

    code = "PROTOCOL_ERROR"
