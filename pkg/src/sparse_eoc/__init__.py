"""Edge-of-chaos initialisation for networks with sparsifying activations."""
__version__ = "0.1.0"

from ._backend import BACKEND
from .activations import ActivationSpec, Kind, expected_sparsity, tau_for_sparsity
from .errors import (
    BadMagicError,
    CountMismatchError,
    DomainError,
    EocInfeasibleError,
    IdxFormatError,
    NoSolutionError,
    PreconditionError,
    ShapeError,
    TruncatedFileError,
)
from .meanfield import (
    EocSolution,
    FixedPoint,
    MeanFieldParams,
    Stability,
    chi1,
    correlation_map,
    eoc_solve,
    find_fixed_points,
    iterate_correlation,
    iterate_variance,
    solve_m_for_vprime,
    variance_map,
    variance_map_d1,
    variance_map_d2,
)
from .spectrum import SpectrumReport, jacobian_moments, mu_k, predicted_grad_profile

__all__ = [
    "BACKEND",
    "ActivationSpec",
    "Kind",
    "expected_sparsity",
    "tau_for_sparsity",
    "BadMagicError",
    "CountMismatchError",
    "DomainError",
    "EocInfeasibleError",
    "IdxFormatError",
    "NoSolutionError",
    "PreconditionError",
    "ShapeError",
    "TruncatedFileError",
    "EocSolution",
    "FixedPoint",
    "MeanFieldParams",
    "Stability",
    "chi1",
    "correlation_map",
    "eoc_solve",
    "find_fixed_points",
    "iterate_correlation",
    "iterate_variance",
    "solve_m_for_vprime",
    "variance_map",
    "variance_map_d1",
    "variance_map_d2",
    "SpectrumReport",
    "jacobian_moments",
    "mu_k",
    "predicted_grad_profile",
]
