"""Exception hierarchy shared by every layer of the engine.

Each class carries a stable ``code`` used verbatim in CLI output and log
lines, so callers can match on it without string-scraping messages.
"""

from __future__ import annotations

from typing import ClassVar


class BauplanError(Exception):
    """Base class for all errors raised by this package."""

    # Override when the stable public name differs from the class name.
    code: ClassVar[str | None] = None

    @property
    def name(self) -> str:
        return self.code or type(self).__name__


# --- object store ---------------------------------------------------------

class InvalidKey(BauplanError):
    pass


class ImmutableOverwrite(BauplanError):
    pass


class NotFound(BauplanError):
    pass


class IoFailure(BauplanError):
    pass


# --- table format ---------------------------------------------------------

class SchemaMismatch(BauplanError):
    def __init__(self, reason: str, row_index: int | None = None,
                 column: str | None = None):
        self.row_index = row_index
        self.column = column
        self.reason = reason
        where = ""
        if row_index is not None:
            where += f" at row {row_index}"
        if column is not None:
            where += f" column '{column}'"
        super().__init__(f"{reason}{where}")


class NonFiniteFloat(BauplanError):
    pass


class EncodingError(BauplanError):
    pass


class CorruptFile(BauplanError):
    pass


# --- catalog ---------------------------------------------------------------

class AlreadyInitialized(BauplanError):
    pass


class BranchExists(BauplanError):
    pass


class InvalidName(BauplanError):
    pass


class RefNotFound(BauplanError):
    pass


class TableNotFound(BauplanError):
    pass


class ConcurrentUpdate(BauplanError):
    pass


class WritePermissionDenied(BauplanError):
    pass


class InvalidUpdate(BauplanError):
    pass


class AmbiguousMergeBase(BauplanError):
    pass


class NoCommonAncestor(BauplanError):
    pass


class MergeConflict(BauplanError):
    def __init__(self, tables):
        self.tables = sorted(tables)
        super().__init__("conflicting tables: " + ", ".join(self.tables))


# --- sql engine -------------------------------------------------------------

class ParseError(BauplanError):
    def __init__(self, message: str, line: int = 0, col: int = 0,
                 expected: tuple[str, ...] = ()):
        self.line = line
        self.col = col
        self.expected = tuple(expected)
        text = f"line {line} col {col}: {message}"
        if expected:
            text += " (expected: " + ", ".join(expected) + ")"
        super().__init__(text)


class UnknownTable(BauplanError):
    pass


class UnknownColumn(BauplanError):
    pass


class AmbiguousColumn(BauplanError):
    pass


class QueryTypeError(BauplanError):
    code = "TypeError"


class IntegerOverflow(BauplanError):
    code = "OverflowError"


# --- pipeline ----------------------------------------------------------------

class DuplicateStep(BauplanError):
    pass


class ManifestError(BauplanError):
    pass


class CycleDetected(BauplanError):
    def __init__(self, cycle):
        self.cycle = list(cycle)
        super().__init__("cycle: " + " -> ".join(self.cycle))


# --- runtime -----------------------------------------------------------------

class MissingSource(BauplanError):
    pass


class EmptyPipeline(BauplanError):
    pass


class StepFailed(BauplanError):
    def __init__(self, message: str, stdout: bytes = b"", stderr: bytes = b""):
        self.stdout = stdout
        self.stderr = stderr
        super().__init__(message)


class ExpectationFailed(StepFailed):
    pass


class NonzeroExit(BauplanError):
    def __init__(self, exit_code: int, stdout: bytes = b"", stderr: bytes = b""):
        self.exit_code = exit_code
        self.stdout = stdout
        self.stderr = stderr
        super().__init__(f"exit code {exit_code}")


class OutputMissing(BauplanError):
    pass


# --- run store ----------------------------------------------------------------

class CorruptCodeSnapshot(BauplanError):
    pass
