"""Density cluster trees from samples.

Hierarchies come from nested neighbourhood graphs over a kernel density
estimate, with split detection and pruning, level-set estimation inside
density gaps, and a synthetic bench of densities with known structure.
"""

__version__ = "0.1.0"

from .cluster_tree import (
    MergeTree,
    SplitRecord,
    delta_to_eps_sigma,
    extract_splits,
    merge_height,
    merge_tree,
    significant_splits,
    true_split_levels,
)
from .dbscan import (
    ClusterHierarchy,
    HierarchyLevel,
    dbscan_hierarchy,
    lambda_of_k,
    modified_dbscan_hierarchy,
    smallest_containing_cluster,
)
from .estimators import (
    DBSCANClusterTree,
    DevroyeWiseLevelSet,
    KernelDensityEstimator,
    ModifiedDBSCANClusterTree,
)
from .exceptions import TreeclustError
from .geometry import Dataset, UnionFind, epsilon_graph_components, radius_neighbors
from .kde import (
    SPHERICAL,
    DensityEstimate,
    ErrorBudget,
    Kernel,
    build_valid_kernel,
    error_budget,
    estimate_density,
    kde_at,
    optimal_bandwidth,
    spherical_kde_at,
    unit_ball_volume,
)
from .levelset import (
    GriddedDensity,
    LevelSetEstimate,
    devroye_wise,
    dilate_erode,
    gap_cluster_check,
    gap_inputs,
    grid_levelset_components,
    symmetric_difference_measure,
)
from .synthetic import DensitySpec, get_spec, registered_names, sample

__all__ = [
    "ClusterHierarchy",
    "DBSCANClusterTree",
    "Dataset",
    "DensityEstimate",
    "DensitySpec",
    "DevroyeWiseLevelSet",
    "ErrorBudget",
    "GriddedDensity",
    "HierarchyLevel",
    "Kernel",
    "KernelDensityEstimator",
    "LevelSetEstimate",
    "MergeTree",
    "ModifiedDBSCANClusterTree",
    "SPHERICAL",
    "SplitRecord",
    "TreeclustError",
    "UnionFind",
    "build_valid_kernel",
    "dbscan_hierarchy",
    "delta_to_eps_sigma",
    "devroye_wise",
    "dilate_erode",
    "epsilon_graph_components",
    "error_budget",
    "estimate_density",
    "extract_splits",
    "gap_cluster_check",
    "gap_inputs",
    "get_spec",
    "grid_levelset_components",
    "kde_at",
    "lambda_of_k",
    "merge_height",
    "merge_tree",
    "modified_dbscan_hierarchy",
    "optimal_bandwidth",
    "radius_neighbors",
    "registered_names",
    "sample",
    "significant_splits",
    "smallest_containing_cluster",
    "spherical_kde_at",
    "symmetric_difference_measure",
    "true_split_levels",
    "unit_ball_volume",
]
