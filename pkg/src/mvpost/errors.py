"""Exception hierarchy shared by all modules."""


class MvpostError(Exception):
    """Base class for all package errors."""


class DomainError(MvpostError, ValueError):
    """Argument outside the mathematical domain of an operation."""


class UsageError(MvpostError, ValueError):
    """Inconsistent shapes, kinds or arguments supplied by the caller."""


class ConfigurationError(MvpostError, ValueError):
    """Invalid experiment or scenario configuration."""


class EstimationError(MvpostError, RuntimeError):
    """A model could not be estimated or produced non-finite output."""


class NoModelError(EstimationError):
    """Training window is empty after removing missing data."""


class DegenerateClimateError(EstimationError):
    """Precipitation training window contains only zero observations."""


class UndefinedSkillError(MvpostError, ZeroDivisionError):
    """Skill score requested against a zero reference score."""


class DegenerateTestError(MvpostError, RuntimeError):
    """Score differences have zero variance but nonzero mean."""


class ArchiveParseError(MvpostError, ValueError):
    """Archive file violates the schema; carries line-numbered diagnostics."""

    def __init__(self, problems):
        self.problems = list(problems)
        head = "; ".join(self.problems[:5])
        more = f" (+{len(self.problems) - 5} more)" if len(self.problems) > 5 else ""
        super().__init__(f"{len(self.problems)} invalid row(s): {head}{more}")
