"""grflab: a numerical lab for the generalized Ricci flow and the lambda functional."""

__version__ = "0.1.0"

from .errors import ConsistencyError, GrfError, InputError, PreconditionError, SolverError
from .geometry import (GeometryState, LieFrame, SphereHarmonicBasis, StructureConstants, Torus,
                       berger_state, biinvariant_geometry, round_sphere, su2, su2xsu2, su3,
                       torus_perturbation, torus_state)
from .curvature import bismut_pack, levi_civita_pack, soliton_residual
from .spectral import SpectralResult, compute_lambda
from .stability import (SecondVariation, StabilityReport, VariationPair, second_variation,
                        sphere_mode_analysis, stability_verdict)
from .flow import FlowConfig, FlowTrajectory, grf_rhs, gauged_rhs, integrate

__all__ = [
    "ConsistencyError", "GrfError", "InputError", "PreconditionError", "SolverError",
    "GeometryState", "LieFrame", "SphereHarmonicBasis", "StructureConstants", "Torus",
    "berger_state", "biinvariant_geometry", "round_sphere", "su2", "su2xsu2", "su3",
    "torus_perturbation", "torus_state",
    "bismut_pack", "levi_civita_pack", "soliton_residual",
    "SpectralResult", "compute_lambda",
    "SecondVariation", "StabilityReport", "VariationPair", "second_variation",
    "sphere_mode_analysis", "stability_verdict",
    "FlowConfig", "FlowTrajectory", "grf_rhs", "gauged_rhs", "integrate",
    "__version__",
]
