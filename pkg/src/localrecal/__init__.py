"""Local recalibration of probabilistic regression predictions.

Library pieces: predictive distributions, a KD-tree with approximate
k-nearest-neighbor search, a small feedforward network, the recalibration
algorithms themselves, evaluation metrics, synthetic data generators, and a
CLI pipeline that ties them together.
"""

from .distributions import Empirical, Gamma, LogNormal, Normal, empirical_from_samples
from .knn import NeighborList, PointSet, build_index, query_knn, query_radius
from .metrics import (ExperimentReport, coverage, gaussian_kl, mse, pit_uniformity, rmse,
                      smis)
from .recalibration import (IsotonicMap, KernelSpec, KNearest, Radius, WeightedSampleSet,
                            apply_isotonic, build_recalibrator, compute_pits, fit_isotonic,
                            global_recalibrate, isotonic_quantile, point_estimate,
                            recalibrate_point, weighted_quantile)

__version__ = "0.1.0"

__all__ = [
    "Empirical", "Gamma", "LogNormal", "Normal", "empirical_from_samples",
    "NeighborList", "PointSet", "build_index", "query_knn", "query_radius",
    "ExperimentReport", "coverage", "gaussian_kl", "mse", "pit_uniformity", "rmse", "smis",
    "IsotonicMap", "KernelSpec", "KNearest", "Radius", "WeightedSampleSet",
    "apply_isotonic", "build_recalibrator", "compute_pits", "fit_isotonic",
    "global_recalibrate", "isotonic_quantile", "point_estimate", "recalibrate_point",
    "weighted_quantile",
]
