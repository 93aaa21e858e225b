"""Multispecies restricted-active-space SCF dynamics for bosonic mixtures on a 1D grid."""

from .eom import EomEvaluator, Mode, WaveFunction, assemble_derivatives
from .fockspace import (
    ConfigSpace,
    RasSpec,
    Scheme,
    count_fci,
    count_product_configs,
    count_species_configs,
    enumerate_species_configs,
    product_space,
)
from .grid import DvrGrid, build_sine_dvr
from .model import HamiltonianTerms, HimModel, build_him_terms, exact_him_energy
from .propagator import PropagationSettings, initial_guess, propagate_real, relax

__version__ = "0.1.0"

__all__ = [
    "ConfigSpace",
    "DvrGrid",
    "EomEvaluator",
    "HamiltonianTerms",
    "HimModel",
    "Mode",
    "PropagationSettings",
    "RasSpec",
    "Scheme",
    "WaveFunction",
    "assemble_derivatives",
    "build_him_terms",
    "build_sine_dvr",
    "count_fci",
    "count_product_configs",
    "count_species_configs",
    "enumerate_species_configs",
    "exact_him_energy",
    "initial_guess",
    "product_space",
    "propagate_real",
    "relax",
]
