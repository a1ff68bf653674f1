"""Adaptive Polya tree priors with optional stopping.

A library for Bayesian nonparametric density estimation on the unit cube
and on binary contingency tables: exact posterior computation through the
marginal-likelihood recursion, prior and posterior simulation, and three
piecewise-constant density estimators.
"""

from .geometry import (
    PartitionScheme,
    Region,
    binary_table,
    cycling,
    full_dyadic,
    root_region,
)
from .prior import (
    ConstantHalf,
    PriorSpec,
    QuadraticDepth,
    TauScaled,
    standard_polya_tree,
)
from .marginal import (
    DataIndex,
    NumericalFault,
    PhiTable,
    Posterior,
    RecursionLimits,
    compute_log_phi,
    default_limits,
    posterior_params,
)
from .estimator import (
    HutterDensity,
    PiecewiseDensity,
    TreeTopology,
    conditional_mean_density,
    hmap_tree,
    hutter_point_density,
    mean_density_dichotomous,
)
from .sampler import RandomMeasureDraw, sample_measure, unstopped_mass_curve
from .evalsuite import GeneratorSpec, brute_force_phi, generate, l1_distance, true_density

__version__ = "0.1.0"

__all__ = [
    "PartitionScheme",
    "Region",
    "binary_table",
    "cycling",
    "full_dyadic",
    "root_region",
    "ConstantHalf",
    "PriorSpec",
    "QuadraticDepth",
    "TauScaled",
    "standard_polya_tree",
    "DataIndex",
    "NumericalFault",
    "PhiTable",
    "Posterior",
    "RecursionLimits",
    "compute_log_phi",
    "default_limits",
    "posterior_params",
    "HutterDensity",
    "PiecewiseDensity",
    "TreeTopology",
    "conditional_mean_density",
    "hmap_tree",
    "hutter_point_density",
    "mean_density_dichotomous",
    "RandomMeasureDraw",
    "sample_measure",
    "unstopped_mass_curve",
    "GeneratorSpec",
    "brute_force_phi",
    "generate",
    "l1_distance",
    "true_density",
    "__version__",
]
