"""Exception hierarchy shared by every regenforge module."""

from __future__ import annotations


class RegenError(Exception):
    """Base class for all regenforge errors."""


# -- version control -------------------------------------------------------


class InvalidPath(RegenError, ValueError):
    pass


class UnknownCommit(RegenError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class UnknownParent(UnknownCommit):
    pass


class DuplicateBranch(RegenError):
    pass


class UnknownBranch(RegenError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class ChangeConflict(RegenError):
    """A change set does not apply cleanly to the area it was given."""


# -- templating ------------------------------------------------------------


class DataParseError(RegenError, ValueError):
    pass


class IllFormedTemplate(RegenError, ValueError):
    pass


class PathError(RegenError, LookupError):
    """Navigation through a data record failed at a named step."""


class NonScalarSubstitution(RegenError, TypeError):
    pass


class UnbalancedRegion(RegenError, ValueError):
    pass


class DuplicateRegion(RegenError, ValueError):
    pass


# -- patterns --------------------------------------------------------------


class RuleSyntaxError(RegenError, ValueError):
    def __init__(self, message: str, line: int | None = None) -> None:
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class BadGroupReference(RuleSyntaxError):
    pass


class DuplicateRuleName(RuleSyntaxError):
    pass


# -- cascade ---------------------------------------------------------------


class ManifestError(RegenError, ValueError):
    pass


class PrototypeRoundTripFailure(RegenError):
    def __init__(self, message: str, report=None, phase: str | None = None) -> None:
        super().__init__(message)
        self.report = report
        self.phase = phase


class CollectionNotAList(RegenError, TypeError):
    pass


class DuplicateOutputPath(RegenError):
    pass


# -- arbitration -----------------------------------------------------------


class SolutionBudgetExceeded(RegenError):
    def __init__(self, bound: int, found: int, component_sizes: list[int]) -> None:
        self.bound = bound
        self.found = found
        self.component_sizes = list(component_sizes)
        super().__init__(
            f"at least {found} distinct solutions exceed max_solutions={bound} "
            f"(conflict component sizes: {self.component_sizes})"
        )


class RoundBudgetExceeded(RegenError):
    pass


class ProposalError(RegenError):
    pass


# -- cli / persistence -----------------------------------------------------


class UnknownSolution(RegenError, KeyError):
    def __str__(self) -> str:
        return Exception.__str__(self)


class StoreCorrupt(RegenError):
    def __init__(self, message: str, path=None) -> None:
        super().__init__(message)
        self.path = path


class AlreadyInitialized(RegenError):
    pass
