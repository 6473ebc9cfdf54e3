"""Zeroth-order diffusive proximal sampling with particle-based score estimation."""
from .core import Ensemble, NoiseSchedule, SeedSpec
from .potentials import GaussianLassoTarget, QuadraticPotential, ToriDomain, ToriPotential
from .sampler import ZodpsConfig, run

__version__ = "0.1.0"

__all__ = [
    "Ensemble",
    "GaussianLassoTarget",
    "NoiseSchedule",
    "QuadraticPotential",
    "SeedSpec",
    "ToriDomain",
    "ToriPotential",
    "ZodpsConfig",
    "run",
]
