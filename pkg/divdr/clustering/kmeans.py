"""
K-means over A-space (k-means++ seeding, Lloyd iterations) and nearest-center lookup.
"""

import numpy as np
from loguru import logger
from typing import NamedTuple, Optional, Union
from scipy.spatial.distance import cdist
from divdr.clustering.schemas import CenterRegistry, ClusterAssignment
from divdr.lattice.schemas import GateActivationMap

# Lloyd iteration cap.
MAX_ITERATIONS = 100

# Slack for float round-off when asserting the objective never increases.
OBJECTIVE_SLACK = 1e-9


class LloydResult(NamedTuple):
    centers: np.ndarray
    labels: np.ndarray
    objectives: list[float]
    iterations: int


def as_points(points) -> np.ndarray:
    if isinstance(points, GateActivationMap):
        points = [points.values]
    elif len(points) and isinstance(points[0], GateActivationMap):
        points = [item.values for item in points]
    array = np.asarray(points, dtype=np.float64)
    if array.ndim == 1:
        array = array.reshape(-1, 1)
    if array.ndim != 2:
        raise ValueError(f"Expected a (N, n) point matrix, got shape {array.shape}")
    return array


def _as_vector(activations: Union[GateActivationMap, np.ndarray]) -> np.ndarray:
    if isinstance(activations, GateActivationMap):
        return activations.values
    return np.asarray(activations, dtype=np.float64).reshape(-1)


def nearest_center(
    activations: Union[GateActivationMap, np.ndarray], registry: CenterRegistry
) -> tuple[int, float]:
    """
    Euclidean argmin over centers; ties resolve to the lowest index.
    """
    if not registry.initialized:
        raise ValueError("nearest_center: center registry is not initialized")
    vector = _as_vector(activations)
    if vector.shape[0] != registry.dim:
        raise ValueError(
            f"nearest_center: point has dimension {vector.shape[0]}, centers have {registry.dim}"
        )
    distances = np.linalg.norm(registry.centers - vector, axis=1)
    index = int(np.argmin(distances))
    return index, float(distances[index])


def assign(points, registry: CenterRegistry) -> ClusterAssignment:
    """
    Nearest center for every point.
    """
    if not registry.initialized:
        raise ValueError("assign: center registry is not initialized")
    points = as_points(points)
    if points.shape[1] != registry.dim:
        raise ValueError(f"assign: points have dimension {points.shape[1]}, centers have {registry.dim}")
    distances = cdist(points, registry.centers)
    index = np.argmin(distances, axis=1)
    return ClusterAssignment(index=index, distance=distances[np.arange(points.shape[0]), index])


def kmeanspp_init(points: np.ndarray, K: int, rng: np.random.Generator) -> np.ndarray:
    """
    k-means++: first center uniform, each next one drawn with probability
    proportional to the squared distance to the closest chosen center.
    """
    count = points.shape[0]
    chosen = [int(rng.integers(count))]
    closest = np.sum((points - points[chosen[0]]) ** 2, axis=1)
    for _ in range(1, K):
        mass = closest.sum()
        if mass <= 0.0:
            raise ValueError(f"k-means++ ran out of distinct points after {len(chosen)} centers")
        index = int(rng.choice(count, p=closest / mass))
        chosen.append(index)
        closest = np.minimum(closest, np.sum((points - points[index]) ** 2, axis=1))
    return points[chosen].copy()


def lloyd(points: np.ndarray, centers: np.ndarray, max_iterations: int = MAX_ITERATIONS) -> LloydResult:
    """
    Alternate assignment and mean updates until the assignment is a fixpoint.
    The squared-distance objective is asserted non-increasing at every
    iteration; empty clusters are reseeded to the point farthest from its
    assigned center.
    """
    centers = centers.copy()
    K = centers.shape[0]
    objectives: list[float] = []
    previous: Optional[np.ndarray] = None
    iterations = 0
    labels = np.zeros(points.shape[0], dtype=np.int64)
    for iterations in range(1, max_iterations + 1):
        squared = cdist(points, centers, "sqeuclidean")
        labels = np.argmin(squared, axis=1)
        own = squared[np.arange(points.shape[0]), labels]
        objective = float(own.sum())
        if objectives and objective > objectives[-1] + OBJECTIVE_SLACK * max(1.0, objectives[-1]):
            raise RuntimeError(
                f"K-means objective increased at iteration {iterations}: {objectives[-1]} -> {objective}"
            )
        objectives.append(objective)
        if previous is not None and np.array_equal(labels, previous):
            break
        previous = labels

        counts = np.bincount(labels, minlength=K)
        empty = [k for k in range(K) if counts[k] == 0]
        for k in range(K):
            if counts[k]:
                centers[k] = points[labels == k].mean(axis=0)
        if empty:
            farthest = np.argsort(-own, kind="stable")
            for k, index in zip(empty, farthest):
                centers[k] = points[index]
            logger.warning(f"Reseeded {len(empty)} empty cluster(s) at iteration {iterations}")
    return LloydResult(centers=centers, labels=labels, objectives=objectives, iterations=iterations)


def kmeans_fit(
    points,
    K: int,
    seed: int,
    step: int = -1,
    max_iterations: int = MAX_ITERATIONS,
) -> CenterRegistry:
    """
    Fit K centers over all given gate activations.
    """
    points = as_points(points)
    if K < 1:
        raise ValueError(f"kmeans_fit: K must be positive, got {K}")
    if points.shape[0] < K:
        raise ValueError(f"kmeans_fit: {points.shape[0]} points cannot form K={K} clusters")
    distinct = np.unique(points, axis=0).shape[0]
    if distinct < K:
        raise ValueError(f"kmeans_fit: only {distinct} distinct points for K={K} clusters")
    rng = np.random.default_rng(seed)
    result = lloyd(points, kmeanspp_init(points, K, rng), max_iterations)
    logger.info(
        f"K-means K={K} over {points.shape[0]} points: {result.iterations} iterations, "
        f"objective {result.objectives[-1]:.6g}"
    )
    return CenterRegistry(
        centers=result.centers,
        initialized=True,
        last_update_step=step,
        inertia=result.objectives[-1],
    )


def center_shift(previous: CenterRegistry, current: CenterRegistry) -> Optional[float]:
    """
    Mean distance from each new center to its closest previous center.
    """
    if not previous.initialized or not current.initialized or previous.dim != current.dim:
        return None
    return float(cdist(current.centers, previous.centers).min(axis=1).mean())
