"""Bundled example models: discrete toys with exact enumeration, Gaussian
trees with closed-form normalizers, the hierarchical exam-score model, and
the time-varying chain model with its single-sweep variant."""

from .base import ModelSpec, NoOracle, Oracle, oracle_eval
from .discrete import PHI_NAMES, discrete_toy
from .gaussian import gaussian_tree
from .schools import DEFAULT_DATA, load_schools_csv, schools_model
from .timevarying import run_partial, simulate_data, theta_id, timevarying_model

__all__ = [
    "ModelSpec", "Oracle", "NoOracle", "oracle_eval",
    "PHI_NAMES", "discrete_toy",
    "gaussian_tree",
    "DEFAULT_DATA", "load_schools_csv", "schools_model",
    "run_partial", "simulate_data", "theta_id", "timevarying_model",
]
