"""Numerical laboratory for near-integrable Hamiltonian flows on T^2 x R^2."""

from .hamiltonians import (
    ConformalFactor,
    FourierPerturbation,
    FourierScalar,
    FourierTerm,
    GeodesicHamiltonian,
    MetricField,
    NearIntegrableHamiltonian,
    PhaseState,
    Poly2,
    QuadraticForm,
    Tangent,
    c5_normalize,
    energy,
    frequency,
    gaussian_curvature,
    geodesic_hamiltonian,
    hamiltonian_from_dict,
    vector_field,
)
from .flow import Trajectory, TangentFlowResult, integrate, integrate_batch, section_crossings, tangent_flow

__version__ = "0.1.0"
