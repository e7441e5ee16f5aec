"""Partial-wave RABBIT interferometry in bicircular XUV-IR fields.

Forward model, synthetic campaigns, Fourier extraction, global fitting and
Wigner / continuum-continuum phase separation for co- and counter-rotating
sideband interference patterns.
"""

__version__ = "0.1.0"

from .errors import (
    DependencyError,
    DomainError,
    GaugeError,
    InsufficientSamplingError,
    NonConvergenceError,
    UndefinedPhaseError,
)
from .model import Geometry, PartialWave, SidebandModel, intensity, rabbit_phase_analytic, sph_harm_theta

__all__ = [
    "__version__",
    "DependencyError",
    "DomainError",
    "GaugeError",
    "InsufficientSamplingError",
    "NonConvergenceError",
    "UndefinedPhaseError",
    "Geometry",
    "PartialWave",
    "SidebandModel",
    "intensity",
    "rabbit_phase_analytic",
    "sph_harm_theta",
]
