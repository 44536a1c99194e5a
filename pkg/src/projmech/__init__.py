"""Constrained multibody dynamics with oblique projection operators.

Projector kernels live in :mod:`projmech.projection`, constrained system
assembly in :mod:`projmech.model`, impact maps and the restitution
certificate in :mod:`projmech.impact`, and the event-driven integrator in
:mod:`projmech.simulator`.
"""

from .errors import (
    ConfigError,
    DriftError,
    InconsistentRestitutionError,
    InternalConsistencyError,
    InvalidInputError,
    InvalidModelError,
    ProjmechError,
    StalledEventError,
)
from .impact import (
    ImpactProblem,
    ImpactRecord,
    check_consistency,
    resolve_impact,
    resolve_impact_global,
    resolve_impact_matrix,
)
from .projection import ProjectionBundle, build_bundle, orthogonal_projector, pseudo_inverse

__version__ = "0.1.0"

__all__ = [
    "ConfigError",
    "DriftError",
    "ImpactProblem",
    "ImpactRecord",
    "InconsistentRestitutionError",
    "InternalConsistencyError",
    "InvalidInputError",
    "InvalidModelError",
    "ProjectionBundle",
    "ProjmechError",
    "StalledEventError",
    "build_bundle",
    "check_consistency",
    "orthogonal_projector",
    "pseudo_inverse",
    "resolve_impact",
    "resolve_impact_global",
    "resolve_impact_matrix",
]
