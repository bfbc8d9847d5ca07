"""Exception hierarchy shared by every layer of the toolkit.

Each error carries a stable machine-readable ``kind`` string that the CLI
and HTTP service surface verbatim, so callers can dispatch on it without
parsing prose.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional


@dataclass(frozen=True)
class SourceSpan:
    """Half-open region of a source file, 1-based lines and columns."""

    file: str
    start_line: int
    start_col: int
    end_line: int
    end_col: int

    def __post_init__(self) -> None:
        if (self.end_line, self.end_col) < (self.start_line, self.start_col):
            raise ValueError("span end precedes start")

    def __str__(self) -> str:
        return f"{self.file}:{self.start_line}:{self.start_col}"


@dataclass(frozen=True)
class Diagnostic:
    """One validation or compilation finding. ``kind`` values are stable."""

    kind: str
    where: str
    message: str
    span: Optional[SourceSpan] = field(default=None, compare=False)

    def __str__(self) -> str:
        loc = f" at {self.span}" if self.span else ""
        return f"{self.kind} [{self.where}]{loc}: {self.message}"


class BartError(Exception):
    """Base class; ``kind`` is the machine-readable error tag."""

    kind = "error"

    def __init__(self, message: str, **details):
        super().__init__(message)
        self.details = details

    def to_json(self) -> dict:
        return {"kind": self.kind, "message": str(self), **self.details}


class BartSyntaxError(BartError):
    kind = "syntax-error"

    def __init__(self, message: str, span: SourceSpan, expected: frozenset[str] = frozenset()):
        super().__init__(message)
        self.span = span
        self.expected = expected

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "message": str(self),
            "span": vars(self.span) if self.span else None,
            "expected": sorted(self.expected),
        }


class BartSemanticError(BartError):
    kind = "semantic-error"

    def __init__(self, message: str, span: Optional[SourceSpan] = None):
        super().__init__(message)
        self.span = span


class DuplicateNameError(BartSemanticError):
    kind = "duplicate-name"


class UnresolvedReferenceError(BartSemanticError):
    kind = "unresolved-reference"


class TemplateCycleError(BartSemanticError):
    kind = "template-cycle"


class ArityMismatchError(BartSemanticError):
    kind = "arity-mismatch"


class UnnormalizedParameterError(BartSemanticError):
    kind = "unnormalized-parameter"


class CompileError(BartError):
    """Aggregate of all diagnostics found while compiling a model set."""

    kind = "compile-error"

    def __init__(self, diagnostics: list[Diagnostic]):
        super().__init__("; ".join(str(d) for d in diagnostics))
        self.diagnostics = diagnostics

    def to_json(self) -> dict:
        return {
            "kind": self.kind,
            "diagnostics": [
                {"kind": d.kind, "where": d.where, "message": d.message}
                for d in self.diagnostics
            ],
        }


class ClusterTooLargeError(BartError):
    kind = "cluster-too-large"


class BadMagicError(BartError):
    kind = "bad-magic"


class VersionMismatchError(BartError):
    kind = "version-mismatch"


class CorruptTensorError(BartError):
    kind = "corrupt-tensor"


class UnknownNetworkError(BartError):
    kind = "unknown-network"


class UnknownNodeError(BartError):
    kind = "unknown-node"


class UnknownValueError(BartError):
    kind = "unknown-value"


class InconsistentEvidenceError(BartError):
    kind = "inconsistent-evidence"


class ConflictingInstantiationError(BartError):
    kind = "conflicting-instantiation"


class NoSuchFindingError(BartError):
    kind = "no-such-finding"


class AllMassDestroyedError(BartError):
    kind = "all-mass-destroyed"


class DegenerateUtilityError(BartError):
    kind = "degenerate-utility"


class TooManyPathsError(BartError):
    kind = "too-many-paths"


class UnboundClassError(BartError):
    kind = "unbound-class"


class StepLimitExceededError(BartError):
    kind = "step-limit-exceeded"


class StaleRevisionError(BartError):
    kind = "stale-revision"
