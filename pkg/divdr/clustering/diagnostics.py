"""
Route diversity diagnostics: inter/intra cluster distances, gate variance and
alignment of learned clusters with planted subset labels.
"""

import numpy as np
from itertools import permutations
from typing import Optional, Union
from scipy.spatial.distance import pdist
from divdr.clustering.kmeans import as_points, assign
from divdr.clustering.schemas import CenterRegistry, ClusterAssignment, DiversityReport

# Brute-force permutation search is K! assignments.
MAX_ALIGNMENT_K = 6


def inter_cluster_distance(registry: CenterRegistry) -> float:
    """
    Mean Euclidean distance over all pairs of centers.
    """
    if registry.K < 2:
        raise ValueError(f"inter_cluster_distance needs at least 2 centers, got {registry.K}")
    return float(pdist(registry.centers).mean())


def _labels(assignment: Union[ClusterAssignment, np.ndarray]) -> np.ndarray:
    if isinstance(assignment, ClusterAssignment):
        return assignment.index
    return np.asarray(assignment, dtype=np.int64).reshape(-1)


def intra_cluster_distance(points, assignment: Union[ClusterAssignment, np.ndarray]) -> float:
    """
    Mean pairwise member distance per cluster, averaged over the clusters with
    at least two members (singletons contribute nothing).
    """
    points = as_points(points)
    labels = _labels(assignment)
    if labels.shape[0] != points.shape[0]:
        raise ValueError(f"intra_cluster_distance: {labels.shape[0]} labels for {points.shape[0]} points")
    means = []
    for cluster in np.unique(labels):
        members = points[labels == cluster]
        if members.shape[0] >= 2:
            means.append(pdist(members).mean())
    return float(np.mean(means)) if means else 0.0


def gate_variance(points) -> float:
    """
    Mode-collapse diagnostic: the per-gate sample standard deviation across
    inputs, averaged over gates.
    """
    points = as_points(points)
    if points.shape[0] < 2:
        raise ValueError(f"gate_variance needs at least 2 samples, got {points.shape[0]}")
    return float(np.std(points, axis=0, ddof=1).mean())


def alignment(
    assignment: Union[ClusterAssignment, np.ndarray],
    true_labels,
    K: int,
) -> float:
    """
    Best agreement between cluster ids and true labels over all relabelings.
    """
    if K > MAX_ALIGNMENT_K:
        raise ValueError(f"alignment searches K! permutations, K={K} exceeds {MAX_ALIGNMENT_K}")
    if K < 1:
        raise ValueError(f"alignment: K must be positive, got {K}")
    labels = _labels(assignment)
    truth = np.asarray(true_labels, dtype=np.int64).reshape(-1)
    if labels.shape != truth.shape:
        raise ValueError(f"alignment: {labels.shape[0]} assignments for {truth.shape[0]} labels")
    if labels.size == 0:
        raise ValueError("alignment: empty assignment")
    if labels.min() < 0 or labels.max() >= K:
        raise ValueError(f"alignment: cluster ids must lie in [0, {K})")
    best = 0.0
    for permutation in permutations(range(K)):
        mapped = np.asarray(permutation)[labels]
        best = max(best, float(np.mean(mapped == truth)))
    return best


def diversity_report(
    points,
    registry: CenterRegistry,
    assignment: Optional[ClusterAssignment] = None,
) -> DiversityReport:
    points = as_points(points)
    assignment = assignment if assignment is not None else assign(points, registry)
    return DiversityReport(
        inter=inter_cluster_distance(registry) if registry.K >= 2 else 0.0,
        intra=intra_cluster_distance(points, assignment),
        gate_variance=gate_variance(points),
        per_cluster_sizes=assignment.sizes(registry.K),
    )
