"""Numerical laboratory for conical Kahler-Ricci flow on model Riemann surfaces.

The package follows the flow at three levels that are kept mutually
consistent by construction:

* cohomology classes evolve by exact (rational) linear algebra
  (:mod:`conicflow.classes`),
* cone singularities are smoothed by a one-parameter family of bounded
  potentials (:mod:`conicflow.smoothing`),
* the potential flow itself is integrated on discrete model geometries
  (:mod:`conicflow.geometry`, :mod:`conicflow.solver`) and audited by
  :mod:`conicflow.diagnostics`.

Command line entry points live in :mod:`conicflow.cli`.
"""

from conicflow.classes import (
    ClassFlowPath,
    CohomClass,
    DeltaInterval,
    IntersectionForm,
    is_big,
    is_nef,
    kodaira_delta_range,
    max_existence_time,
)
from conicflow.errors import (
    AmbiguousPositivity,
    ConePointOffGrid,
    DomainError,
    NonCauchy,
    NonpositiveDensity,
    NotPositive,
    NotStationary,
    QuadratureFailure,
    ResolutionTooLow,
    SingularityAt,
    SpectralSolveFailure,
    StepSizeUnderflow,
    TruncationError,
    UniformityViolation,
    ValidationError,
)
from conicflow.geometry import DiscreteGeometry, build_football, build_torus_cone
from conicflow.smoothing import SmoothingParams, chi, chi_field, chi_prime, ddbar_chi_density
from conicflow.solver import (
    FlowResult,
    FlowState,
    LadderResult,
    SolverConfig,
    epsilon_continuation,
    rhs_normalized,
    rhs_unnormalized,
    run_flow,
    step,
)

__all__ = [
    "AmbiguousPositivity",
    "ClassFlowPath",
    "CohomClass",
    "ConePointOffGrid",
    "DeltaInterval",
    "DiscreteGeometry",
    "DomainError",
    "FlowResult",
    "FlowState",
    "IntersectionForm",
    "LadderResult",
    "NonCauchy",
    "NonpositiveDensity",
    "NotPositive",
    "NotStationary",
    "QuadratureFailure",
    "ResolutionTooLow",
    "SingularityAt",
    "SmoothingParams",
    "SolverConfig",
    "SpectralSolveFailure",
    "StepSizeUnderflow",
    "TruncationError",
    "UniformityViolation",
    "ValidationError",
    "build_football",
    "build_torus_cone",
    "chi",
    "chi_field",
    "chi_prime",
    "ddbar_chi_density",
    "epsilon_continuation",
    "is_big",
    "is_nef",
    "kodaira_delta_range",
    "max_existence_time",
    "rhs_normalized",
    "rhs_unnormalized",
    "run_flow",
    "step",
]

__version__ = "0.1.0"
