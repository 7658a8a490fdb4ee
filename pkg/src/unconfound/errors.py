"""Exception hierarchy shared across the package."""


class UnconfoundError(Exception):
    """Base class for all package errors."""


class DomainError(UnconfoundError, ValueError):
    """An argument lies outside the domain of the operation."""


class EstimationError(UnconfoundError):
    """A dataset cannot support the requested estimate (e.g. a missing arm)."""


class ConvergenceError(EstimationError):
    """IRLS did not converge within ``max_iter`` iterations."""

    def __init__(self, message, coef=None, iterations=None):
        super().__init__(message)
        self.coef = coef
        self.iterations = iterations


class SeparationError(EstimationError):
    """The treatment is (quasi-)perfectly separated by the covariates."""


class RankDeficientError(EstimationError):
    """The design matrix does not have full column rank."""


class IngestionError(UnconfoundError):
    """A CSV input could not be read into a dataset."""


class RuleError(UnconfoundError):
    """A selection rule cannot be applied to the data."""


class TestExecutionError(UnconfoundError):
    """A hypothesis test could not be carried out."""

    __test__ = False  # keep pytest from collecting this class


class ConfigError(UnconfoundError):
    """An experiment configuration is invalid."""
