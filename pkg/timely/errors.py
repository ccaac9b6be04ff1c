"""
Timely Error Types

Exception hierarchy shared by every stage of the toolchain. All errors
raised on purpose derive from TimelyError so the CLI can map them onto
exit codes without catching unrelated failures.

Classes:
    TimelyError: Root of the hierarchy
    ParseError: Malformed source text
    ProgramError: Well-formed text describing an unacceptable program
    AnalysisError: Internal inconsistency found by an analysis
    ExecutionFault: A machine step cannot proceed
    FuelExhausted: A run exceeded its step budget
    BudgetExceeded: Exhaustive verification would exceed its step budget
"""

from typing import Optional


class TimelyError(Exception):
    """Base class for all toolchain errors."""


class ParseError(TimelyError):
    """
    Raised when source text cannot be parsed.

    Attributes:
        line (int): 1-based line of the offending token (0 if unknown)
        column (int): 1-based column of the offending token (0 if unknown)
        expected (Optional[str]): What the parser was looking for
    """

    def __init__(self, message: str, line: int = 0, column: int = 0,
                 expected: Optional[str] = None) -> None:
        self.line = line
        self.column = column
        self.expected = expected
        location = f"{line}:{column}: " if line else ""
        suffix = f" (expected {expected})" if expected else ""
        super().__init__(f"{location}{message}{suffix}")


class ProgramError(ParseError):
    """Raised for recursion, unresolved calls, misplaced annotations and similar."""


class AnalysisError(TimelyError):
    """Raised when summaries, policies or regions contradict each other."""


class ExecutionFault(TimelyError):
    """
    Raised when a machine cannot take a step.

    Attributes:
        site (Optional[tuple]): (function, label) of the faulting command
    """

    def __init__(self, message: str, site: Optional[tuple] = None) -> None:
        self.site = site
        where = f" at {site[0]}:{site[1]}" if site else ""
        super().__init__(f"{message}{where}")


class FuelExhausted(ExecutionFault):
    """Raised when a run takes more steps than its fuel allows."""


class BudgetExceeded(TimelyError):
    """Raised when an exhaustive failure sweep would exceed its step budget."""
