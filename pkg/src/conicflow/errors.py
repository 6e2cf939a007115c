"""Exception types shared across the package.

Every failure mode that callers are expected to branch on gets its own
class; anything else surfaces as a plain ValueError/RuntimeError.
"""

from __future__ import annotations


class DomainError(ValueError):
    """An argument lies outside the mathematical domain of an operation."""


class AmbiguousPositivity(ValueError):
    """Positivity of a class cannot be decided from the declared data.

    Raised in dimension >= 2 when no curve basis (intersection data) was
    supplied, so bigness/nefness tests have nothing to pair against.
    """


class QuadratureFailure(RuntimeError):
    """A quadrature did not reach its requested tolerance."""


class SingularityAt(ValueError):
    """A pointwise formula was evaluated at a point where it is singular."""

    def __init__(self, message, where=None):
        super().__init__(message)
        self.where = where


class NotPositive(ValueError):
    """A density or form that must be positive fails to be, with a witness."""

    def __init__(self, message, where=None, value=None):
        super().__init__(message)
        self.where = where
        self.value = value


class NonpositiveDensity(FloatingPointError):
    """The evolving metric density lost positivity during a trial step."""


class StepSizeUnderflow(RuntimeError):
    """The adaptive step fell below dt_min.

    For an unnormalized run this is how extinction at the maximal time
    announces itself; ``t`` carries the last accepted time.
    """

    def __init__(self, message, t=None, reason=""):
        super().__init__(message)
        self.t = t
        self.reason = reason


class ResolutionTooLow(ValueError):
    """Grid resolution below the supported minimum."""


class TruncationError(RuntimeError):
    """A discrete closure identity failed beyond the roundoff budget."""


class ConePointOffGrid(ValueError):
    """A cone point was requested at a location not on the grid lattice."""


class SpectralSolveFailure(RuntimeError):
    """The spectral Poisson solve produced a non-finite or non-zero-mean field."""


class NonCauchy(RuntimeError):
    """Successive epsilon-ladder differences fail to decrease."""


class UniformityViolation(RuntimeError):
    """A monitored constant drifts across the epsilon ladder beyond tolerance."""


class NotStationary(RuntimeError):
    """A diagnostic that requires a converged state was given a moving one."""


class ValidationError(ValueError):
    """Config validation failed; carries every offending field at once."""

    def __init__(self, problems):
        self.problems = list(problems)
        lines = "; ".join(f"{path}: {msg}" for path, msg in self.problems)
        super().__init__(f"invalid config: {lines}")
