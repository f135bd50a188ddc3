"""
Loss terms: per-pixel task loss, the normalised cost loss, the magnet-style
clustering loss over A-space and the combined training objective.
"""

import numpy as np
from typing import Optional, Union
from divdr.autodiff import Tensor
from divdr.autodiff.ops import l2_norm, log_sum_exp, relu, softmax_cross_entropy, stack
from divdr.clustering.kmeans import as_points, assign, nearest_center
from divdr.clustering.schemas import CenterRegistry
from divdr.lattice.network import expected_cost_tensor
from divdr.lattice.schemas import EdgeCostTable, GateActivationMap
from divdr.loss.schemas import SIGMA_FLOOR, BatchSigma, LossBreakdown, LossWeights

Scalar = Union[Tensor, float]


def _as_tensor(activations: Union[Tensor, GateActivationMap, np.ndarray]) -> Tensor:
    if isinstance(activations, Tensor):
        return activations
    if isinstance(activations, GateActivationMap):
        return Tensor(activations.values)
    return Tensor(np.asarray(activations, dtype=np.float64).reshape(-1))


def task_loss(prediction: Tensor, target: np.ndarray) -> Tensor:
    """
    Mean per-pixel softmax cross-entropy.
    """
    target = np.asarray(target)
    if target.size and not np.issubdtype(target.dtype, np.integer):
        if not np.all(target == np.round(target)):
            raise ValueError("task_loss: labels must be integers")
        target = target.astype(np.int64)
    return softmax_cross_entropy(prediction, target)


def compute_sigma_sq(points, centers: CenterRegistry, floor: float = SIGMA_FLOOR) -> BatchSigma:
    """
    sigma^2 = 1/(N-1) * sum_i ||A(x_i) - mu(x_i)||^2 over the batch, floored.
    Returned as a plain number: no gradient flows through it. A batch of one
    uses denominator 1.
    """
    points = as_points(points) if len(points) else np.zeros((0, 0))
    if points.shape[0] == 0:
        raise ValueError("compute_sigma_sq: empty batch")
    distances = assign(points, centers).distance
    sigma_sq = float(np.sum(distances**2)) / max(points.shape[0] - 1, 1)
    return BatchSigma(sigma_sq=max(sigma_sq, floor), sample_count=points.shape[0])


def clustering_loss(
    activations: Union[Tensor, GateActivationMap, np.ndarray],
    centers: CenterRegistry,
    sigma: BatchSigma,
    alpha: float,
    squared: bool = False,
) -> Tensor:
    """
    {alpha + ||A - mu(A)|| / 2s^2 + log sum_{k != nearest} exp(-||A - mu_k|| / 2s^2)}_+

    Pulls A towards its nearest center and pushes it away from the others.
    Distances are plain Euclidean norms unless squared is set.
    """
    gates = _as_tensor(activations)
    if centers.K < 2:
        raise ValueError(f"clustering_loss needs K >= 2 centers (push term is empty), got K={centers.K}")
    if np.isnan(gates.data).any() or np.isnan(centers.centers).any():
        raise ValueError("clustering_loss: NaN in activations or centers")
    if alpha < 0:
        raise ValueError(f"clustering_loss: alpha must be non-negative, got {alpha}")
    nearest, _ = nearest_center(gates.data, centers)
    scale = 1.0 / (2.0 * sigma.sigma_sq)

    def _distance(k: int) -> Tensor:
        distance = l2_norm(gates - Tensor(centers.centers[k]))
        return distance * distance if squared else distance

    pull = _distance(nearest) * scale
    push = log_sum_exp(stack(*(_distance(k) * -scale for k in range(centers.K) if k != nearest)))
    return relu(pull + push + alpha)


def combine_terms(task: Scalar, cost: Scalar, clustering: Scalar, weights: LossWeights) -> Scalar:
    return task + weights.lambda1 * cost + weights.lambda2 * clustering


def total_loss(
    prediction: Tensor,
    target: np.ndarray,
    gates: Tensor,
    centers: Optional[CenterRegistry],
    sigma: Optional[BatchSigma],
    weights: LossWeights,
    costs: EdgeCostTable,
    cluster_gates: Optional[Tensor] = None,
) -> LossBreakdown:
    """
    task + lambda1 * cost + lambda2 * clustering. The clustering term is skipped
    (recorded as 0) when lambda2 is 0 or there are no centers yet. cluster_gates
    selects a different A-space tap for the clustering term (pre-sigmoid logits).
    """
    task = task_loss(prediction, target)
    cost = expected_cost_tensor(gates, costs)
    clustering: Scalar = 0.0
    if weights.lambda2 > 0 and centers is not None and centers.initialized:
        if sigma is None:
            raise ValueError("total_loss: batch sigma must be computed before the clustering term")
        clustering = clustering_loss(
            cluster_gates if cluster_gates is not None else gates,
            centers,
            sigma,
            weights.alpha,
            squared=weights.squared,
        )
    total = combine_terms(task, cost, clustering, weights)
    return LossBreakdown(
        total=total,
        task=task.item(),
        cost=cost.item(),
        clustering=clustering.item() if isinstance(clustering, Tensor) else float(clustering),
    )
