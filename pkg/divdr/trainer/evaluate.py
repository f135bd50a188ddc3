"""
No-grad sweeps over a dataset and the evaluation record built from them.
"""

import numpy as np
from concurrent.futures import ThreadPoolExecutor
from loguru import logger
from typing import NamedTuple, Optional, Sequence
from divdr.autodiff import Tensor, no_grad
from divdr.clustering import CenterRegistry, alignment, assign, gate_variance, inter_cluster_distance
from divdr.clustering.diagnostics import MAX_ALIGNMENT_K, intra_cluster_distance
from divdr.config import settings
from divdr.data.schemas import SynthSample
from divdr.lattice import EdgeCostTable, LatticeConfig, build_cost_table, expected_cost, lattice_forward, pruned_cost
from divdr.trainer.schemas import EvalRecord


class Sweep(NamedTuple):
    gates: np.ndarray
    logits: np.ndarray
    predictions: np.ndarray

    def points(self, gate_tap: str) -> np.ndarray:
        return self.logits if gate_tap == "pre" else self.gates


def forward_sweep(
    params: dict[str, Tensor],
    dataset: Sequence[SynthSample],
    lattice_config: LatticeConfig,
    threads: Optional[int] = None,
) -> Sweep:
    """
    Run every sample through the lattice without recording. With threads > 1
    the samples are mapped over a thread pool; results keep dataset order.
    """
    if not dataset:
        raise ValueError("forward_sweep: empty dataset")
    threads = threads or settings.threads

    def _forward(sample: SynthSample):
        output = lattice_forward(Tensor(sample.image), params, lattice_config)
        return output.gates.data, output.gate_logits.data, np.argmax(output.prediction.data, axis=0)

    with no_grad():
        if threads > 1:
            with ThreadPoolExecutor(max_workers=threads) as executor:
                results = list(executor.map(_forward, dataset))
        else:
            results = [_forward(sample) for sample in dataset]
    gates, logits, predictions = zip(*results)
    return Sweep(gates=np.stack(gates), logits=np.stack(logits), predictions=np.stack(predictions))


def class_iou(predictions: np.ndarray, targets: np.ndarray, num_classes: int) -> np.ndarray:
    """
    Per-class intersection over union with counts pooled over every pixel of
    the set. Classes absent from both prediction and target get NaN.
    """
    predictions = np.asarray(predictions)
    targets = np.asarray(targets)
    if predictions.shape != targets.shape:
        raise ValueError(f"class_iou: predictions {predictions.shape} vs targets {targets.shape}")
    scores = np.full(num_classes, np.nan)
    for cls in range(num_classes):
        predicted, actual = predictions == cls, targets == cls
        union = np.count_nonzero(predicted | actual)
        if union:
            scores[cls] = np.count_nonzero(predicted & actual) / union
    return scores


def mean_iou(predictions: np.ndarray, targets: np.ndarray, num_classes: int) -> float:
    return float(np.nanmean(class_iou(predictions, targets, num_classes)))


def subset_labels(dataset: Sequence[SynthSample]) -> Optional[np.ndarray]:
    """
    Planted subset labels, or None when any sample is unlabeled.
    """
    labels = [sample.true_subset for sample in dataset]
    if not labels or any(label is None for label in labels):
        return None
    return np.asarray(labels, dtype=np.int64)


def evaluate(
    params: dict[str, Tensor],
    registry: Optional[CenterRegistry],
    dataset: Sequence[SynthSample],
    lattice_config: LatticeConfig,
    costs: Optional[EdgeCostTable] = None,
    gate_tap: str = "pre",
    step: int = -1,
    split: Optional[str] = None,
    threads: Optional[int] = None,
) -> EvalRecord:
    if not dataset:
        raise ValueError("evaluate: empty dataset")
    costs = costs or build_cost_table(lattice_config)
    sweep = forward_sweep(params, dataset, lattice_config, threads)
    targets = np.stack([sample.mask for sample in dataset])
    record = {
        "step": step,
        "split": split,
        "sample_count": len(dataset),
        "mIoU": mean_iou(sweep.predictions, targets, lattice_config.num_classes),
        "expected_cost": float(np.mean([expected_cost(gates, costs) for gates in sweep.gates])),
        "pruned_cost": float(np.mean([pruned_cost(gates, costs) for gates in sweep.gates])),
    }
    if len(dataset) >= 2:
        record["gate_variance"] = gate_variance(sweep.gates)
    if registry is not None and registry.initialized:
        points = sweep.points(gate_tap)
        assignment = assign(points, registry)
        record["inter"] = inter_cluster_distance(registry) if registry.K >= 2 else 0.0
        record["intra"] = intra_cluster_distance(points, assignment)
        record["per_cluster_sizes"] = assignment.sizes(registry.K)
        labels = subset_labels(dataset)
        if labels is not None and registry.K <= MAX_ALIGNMENT_K:
            record["alignment"] = alignment(assignment, labels, max(registry.K, int(labels.max()) + 1))
    result = EvalRecord(**record)
    logger.info(
        f"Eval {split or ''} at step {step}: mIoU={result.mIoU:.4f} cost={result.expected_cost:.4f} "
        f"pruned={result.pruned_cost:.4f} inter={result.inter} intra={result.intra} alignment={result.alignment}"
    )
    return result
