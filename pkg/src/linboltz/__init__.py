"""Numerical toolkit for the linear Boltzmann operator with a Maxwellian background."""

from .core import (
    AngularPart,
    CollisionKernel,
    GaussianMixture,
    GridDensity,
    GridSpec,
    Maxwellian,
    ParticleEnsemble,
    gamma_b,
    make_rng,
    maxwellian_eval,
    post_collision,
    sample_maxwellian,
)

__all__ = [
    "AngularPart",
    "CollisionKernel",
    "GaussianMixture",
    "GridDensity",
    "GridSpec",
    "Maxwellian",
    "ParticleEnsemble",
    "gamma_b",
    "make_rng",
    "maxwellian_eval",
    "post_collision",
    "sample_maxwellian",
]

__version__ = "0.1.0"
