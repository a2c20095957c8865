"""Exception and warning types raised across the package."""


class NdiError(Exception):
    """Base class for every error raised by this package."""


class DataError(NdiError, ValueError):
    """Input data is malformed, missing or too short."""


class NumericalError(NdiError, ArithmeticError):
    """A numerical stage could not produce a valid result."""


class ConfigError(NdiError):
    """Run configuration is invalid or names a file that does not exist."""


# ingest
class MalformedDamage(DataError):
    pass


class MissingCpiYear(DataError, KeyError):
    pass


class EmptyWindow(DataError):
    pass


class NoRecords(DataError):
    pass


# index / garch
class TooFewPeriods(DataError):
    pass


class TooFewPoints(DataError):
    pass


# dist
class DomainError(NumericalError, ValueError):
    pass


class InvalidParams(NdiError, ValueError):
    pass


class OutsideDomain(DomainError):
    pass


# pricing
class NoRoot(NumericalError):
    pass


class DomainTooNarrow(NumericalError):
    pass


class EmptyPaths(DataError):
    pass


class OutOfBounds(NumericalError):
    pass


# riskbudget
class ZeroPortfolioVariance(NumericalError):
    pass


class TooFewTailScenarios(DataError):
    pass


class ZeroTotalRisk(NumericalError):
    pass


class OverlappingGroups(DataError):
    pass


class UncoveredTypes(DataError):
    pass


class PanelTooShort(DataError):
    pass


# stress
class TooFewConditionalScenarios(DataError):
    pass


class EmptyJointTail(DataError):
    pass


class DegenerateDispersion(NumericalError):
    pass


class StageError(NdiError):
    """Wraps a failure inside a multi-stage pipeline, naming the stage."""

    def __init__(self, stage: str, cause: Exception):
        self.stage = stage
        self.cause = cause
        super().__init__(f"[{stage}] {type(cause).__name__}: {cause}")


class NonConvergence(UserWarning):
    """Optimizer stopped before meeting its tolerance; best iterate returned."""


class NonStationaryFit(UserWarning):
    """Fitted GARCH persistence is at or above one."""
