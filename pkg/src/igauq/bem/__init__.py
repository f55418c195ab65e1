"""Galerkin boundary elements for sound-soft Helmholtz scattering."""

from .assembly import (
    MAX_DOFS,
    BemSystem,
    DensitySolution,
    QuadConfig,
    QuadratureFailure,
    SolverError,
    TooManyDofsError,
    assemble_cfie,
    cfie_rhs,
    solve,
    solve_density,
)
from .greens import (
    SingularityError,
    WaveContext,
    adjoint_dlp_kernel,
    dlp_kernel,
    helmholtz_kernel,
    incident_trace,
)
from .potential import NearBoundaryWarning, eval_potential, eval_potential_normal_derivative
from .space import BoundarySpace

__all__ = [
    "MAX_DOFS",
    "BemSystem",
    "BoundarySpace",
    "DensitySolution",
    "NearBoundaryWarning",
    "QuadConfig",
    "QuadratureFailure",
    "SingularityError",
    "SolverError",
    "TooManyDofsError",
    "WaveContext",
    "adjoint_dlp_kernel",
    "assemble_cfie",
    "cfie_rhs",
    "dlp_kernel",
    "eval_potential",
    "eval_potential_normal_derivative",
    "helmholtz_kernel",
    "incident_trace",
    "solve",
    "solve_density",
]
