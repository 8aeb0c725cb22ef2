"""Exception taxonomy and process exit codes.

Exit codes are a stable scripting contract: 0 success, 2 input error,
3 dependency error, 4 numerical abort.
"""

from __future__ import annotations

EXIT_OK = 0
EXIT_INPUT = 2
EXIT_DEPENDENCY = 3
EXIT_NUMERIC = 4


class ContractViolation(ValueError):
    """An operation was called with arguments that break its preconditions."""


class ParseError(ValueError):
    """Malformed serialized payload. Carries the byte offset of the defect."""

    def __init__(self, message: str, offset: int):
        super().__init__(f"{message} (byte offset {offset})")
        self.offset = offset


class ManifestError(ValueError):
    """Malformed manifest line. Carries the 1-based line number."""

    def __init__(self, message: str, line_number: int):
        super().__init__(f"line {line_number}: {message}")
        self.line_number = line_number


class InputError(ValueError):
    """User-supplied input (CLI argument, request field) is unusable."""


class ConfigurationError(RuntimeError):
    """A required model component is missing or not loaded."""


class DependencyError(RuntimeError):
    """A pipeline stage prerequisite is missing. Names the stage to run first."""

    def __init__(self, message: str, missing_stage: str | None = None):
        super().__init__(message)
        self.missing_stage = missing_stage


class NumericalAbort(RuntimeError):
    """Training diverged (NaN/Inf loss); aborted with diagnostics."""
