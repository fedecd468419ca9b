"""Simulation and empirical verification of SDEs with affine-periodic coefficients."""

from .core import (
    AffineStructure,
    Ensemble,
    ModelSpec,
    NonOrthogonalWarning,
    TimeGrid,
    apply_affine,
    check_affine_periodicity,
)
from .integrator import (
    SimulationError,
    continue_ensemble,
    euler_maruyama,
    moment_curve,
    sectioned_states,
)
from .measures import EmpiricalMeasure, dbl_estimate, dbl_exact, msq_distance, wasserstein1_1d
from .models import build_model, build_Q, drift_control, e_of_t, example41, linear_oracle
from .rng import Gaussian, PointMass, Resample, StreamKey, gaussian_increments, sample_initial

__version__ = "0.1.0"

__all__ = [
    "AffineStructure", "Ensemble", "ModelSpec", "NonOrthogonalWarning", "TimeGrid",
    "apply_affine", "check_affine_periodicity", "SimulationError", "continue_ensemble",
    "euler_maruyama", "moment_curve", "sectioned_states", "EmpiricalMeasure", "dbl_estimate",
    "dbl_exact", "msq_distance", "wasserstein1_1d", "build_model", "build_Q", "drift_control",
    "e_of_t", "example41", "linear_oracle", "Gaussian", "PointMass", "Resample", "StreamKey",
    "gaussian_increments", "sample_initial",
]
