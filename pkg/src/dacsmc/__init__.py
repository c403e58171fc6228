"""Divide-and-conquer sequential Monte Carlo on trees.

The engine runs one recursion over a rooted tree: independent particle
clouds for the children of a node are merged by importance correction,
resampled, and extended with the node's own coordinates.  Resampling
exploits the correction weight's structure when it has one (factorized,
mixture-of-products, or nested pivot/unit form), can run on a sparse
index subset instead of the full product grid, and can be skipped
adaptively while the merged weights stay healthy.  A lumped
single-sequence baseline, bundled example models with exact oracles, and
a replicated experiment harness round out the package.
"""

from .engine import (
    EngineOptions,
    NodeTrace,
    asmc_run,
    build_lumped_model,
    dac_smc,
    dac_smc_adaptive,
)
from .errors import DacError
from .harness import (
    ComparisonTable,
    EstimateReport,
    ExperimentConfig,
    gof_tests,
    paired_compare,
    run_experiment,
    slope_fit,
)
from .models import (
    ModelSpec,
    Oracle,
    discrete_toy,
    gaussian_tree,
    oracle_eval,
    run_partial,
    schools_model,
    simulate_data,
    timevarying_model,
)
from .particles import (
    ParticleCloud,
    TargetEstimates,
    TestFunction,
    WeightedAtoms,
    ess,
    target_estimates,
)
from .resampling import IndexSet, design_index_set
from .rng import stream, substream_seed
from .tree import NodeSpace, Tree, build_tree, path_layout, validate
from .weights import Factorized, General, MixtureOfProducts, Nested

__version__ = "0.1.0"

__all__ = [
    "EngineOptions", "NodeTrace", "asmc_run", "build_lumped_model",
    "dac_smc", "dac_smc_adaptive",
    "DacError",
    "ComparisonTable", "EstimateReport", "ExperimentConfig", "gof_tests",
    "paired_compare", "run_experiment", "slope_fit",
    "ModelSpec", "Oracle", "discrete_toy", "gaussian_tree", "oracle_eval",
    "run_partial", "schools_model", "simulate_data", "timevarying_model",
    "ParticleCloud", "TargetEstimates", "TestFunction", "WeightedAtoms",
    "ess", "target_estimates",
    "IndexSet", "design_index_set",
    "stream", "substream_seed",
    "NodeSpace", "Tree", "build_tree", "path_layout", "validate",
    "Factorized", "General", "MixtureOfProducts", "Nested",
    "__version__",
]
