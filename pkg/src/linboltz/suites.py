"""Named density suites built from Gaussian mixtures around a Maxwellian."""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

from .core import GaussianMixture, Maxwellian

SHIFTS = (0.5, 1.0, 2.0)
TEMPERATURE_RATIOS = (0.5, 0.8, 1.5, 2.0)


def _e1(M: Maxwellian) -> np.ndarray:
    e = np.zeros(M.dim)
    e[0] = 1.0
    return e


def shifted_gaussians(M: Maxwellian) -> list:
    s = math.sqrt(M.theta)
    return [(f"shift-{c:g}", GaussianMixture.gaussian(M.center + c * s * _e1(M), M.theta, f"shift-{c:g}"))
            for c in SHIFTS]


def temperature_ratios(M: Maxwellian) -> list:
    return [(f"temp-{r:g}", GaussianMixture.gaussian(M.center, r * M.theta, f"temp-{r:g}"))
            for r in TEMPERATURE_RATIOS]


def bimodal_mixtures(M: Maxwellian) -> list:
    s = math.sqrt(M.theta)
    e = _e1(M)
    sym = GaussianMixture(np.array([0.5, 0.5]), np.stack([M.center + s * e, M.center - s * e]),
                          np.array([0.5, 0.5]) * M.theta, "bimodal-sym")
    asym = GaussianMixture(np.array([0.3, 0.7]), np.stack([M.center - 1.5 * s * e, M.center + 0.5 * s * e]),
                           np.array([0.8, 0.6]) * M.theta, "bimodal-asym")
    return [("bimodal-sym", sym), ("bimodal-asym", asym)]


def products(M: Maxwellian) -> list:
    s = math.sqrt(M.theta)
    e = _e1(M)
    combos = ((0.5, 0.8), (1.0, 1.5), (2.0, 0.5))
    return [(f"shift-{c:g}-temp-{r:g}",
             GaussianMixture.gaussian(M.center + c * s * e, r * M.theta, f"shift-{c:g}-temp-{r:g}"))
            for c, r in combos]


def default_suite(M: Maxwellian) -> list:
    """Twelve densities: three mean shifts, four temperature ratios, two bimodal mixtures and
    three shift/temperature combinations."""
    return shifted_gaussians(M) + temperature_ratios(M) + bimodal_mixtures(M) + products(M)


SUITES: dict[str, Callable[[Maxwellian], list]] = {
    "default": default_suite,
    "shifted-gaussian": shifted_gaussians,
    "temperature-ratio": temperature_ratios,
    "bimodal": bimodal_mixtures,
}


def get_suite(name: str, M: Maxwellian) -> list:
    try:
        return SUITES[name](M)
    except KeyError:
        raise KeyError(f"unknown suite {name!r}; choose from {sorted(SUITES)}") from None
