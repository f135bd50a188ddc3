"""
The alternating optimisation loop: SGD on the combined objective with frozen
centers, interleaved with K-means refits over fresh gate activations.
"""

import os
import numpy as np
from loguru import logger
from typing import NamedTuple, Optional, Sequence
from divdr.autodiff import Tensor, backward, get_tape
from divdr.clustering import CenterRegistry, alignment, assign, center_shift, inter_cluster_distance, kmeans_fit
from divdr.clustering.export import write_centers
from divdr.data.generator import random_flip
from divdr.data.schemas import SynthSample
from divdr.lattice import EdgeCostTable, LatticeConfig, build_cost_table, init_params, lattice_forward
from divdr.lattice.checkpoint import Checkpoint, load_checkpoint, save_checkpoint
from divdr.loss import compute_sigma_sq, total_loss
from divdr.trainer.evaluate import evaluate, forward_sweep, subset_labels
from divdr.trainer.optim import clip_grad_norm, lr_schedule, sgd_step
from divdr.trainer.schemas import RefitRecord, RunMetrics, StepRecord, TrainConfig
from divdr.util import atomic_write, restore_rng, rng_stream, rng_state

CHECKPOINT_FILE = "checkpoint.json"
METRICS_FILE = "metrics.jsonl"
CENTERS_FILE = "centers.csv"

# Post-refit clustering loss may exceed the pre-refit mean by this fraction.
ALTERNATION_SLACK = 0.10


class TrainResult(NamedTuple):
    params: dict[str, Tensor]
    registry: CenterRegistry
    metrics: RunMetrics


class _State:
    """
    Everything a checkpoint captures, owned by the loop.
    """

    def __init__(self, config: TrainConfig, lattice_config: LatticeConfig):
        self.step = 0
        self.params = init_params(lattice_config, rng_stream(config.seed, "init"))
        self.velocity: dict[str, np.ndarray] = {}
        self.registry = CenterRegistry()
        self.metrics = RunMetrics()
        self.shuffle = rng_stream(config.seed, "shuffle")
        self.kmeans = rng_stream(config.seed, "kmeans")
        self.mark()

    def mark(self):
        """
        Record the RNG states of a point where nothing is half done (before a
        refit, before a step's batch draw, after a step). Checkpoints carry
        the last mark, so an interrupt mid-refit, mid-step or mid-eval
        resumes from that point.
        """
        self.marked_rng = {"shuffle": rng_state(self.shuffle), "kmeans": rng_state(self.kmeans)}

    def checkpoint(self, config: TrainConfig, lattice_config: LatticeConfig) -> Checkpoint:
        return Checkpoint(
            step=self.step,
            lattice=lattice_config,
            params=self.params,
            velocity=self.velocity,
            registry=self.registry.to_payload() if self.registry.initialized else None,
            rng=self.marked_rng,
            extra={"train_config": config.model_dump(mode="json")},
        )

    def restore(self, checkpoint: Checkpoint, metrics: RunMetrics):
        # Checkpoints store entries sorted by name; keep the init order, which
        # fixes the summation order of the gradient norm.
        missing = set(self.params) ^ set(checkpoint.params)
        if missing:
            raise ValueError(f"Checkpoint parameters do not match the lattice: {sorted(missing)}")
        self.step = checkpoint.step
        self.params = {name: checkpoint.params[name] for name in self.params}
        self.velocity = {name: checkpoint.velocity[name] for name in self.params if name in checkpoint.velocity}
        if checkpoint.registry:
            self.registry = CenterRegistry.from_payload(checkpoint.registry)
        restore_rng(self.shuffle, checkpoint.rng["shuffle"])
        restore_rng(self.kmeans, checkpoint.rng["kmeans"])
        self.metrics = metrics.truncate(checkpoint.step)
        self.mark()


def is_refit_step(step: int, config: TrainConfig) -> bool:
    return step >= config.warmup_steps and (step - config.warmup_steps) % config.kmeans_interval == 0


def is_eval_step(step: int, config: TrainConfig) -> bool:
    return step > 0 and (step % config.eval_interval == 0 or step == config.total_steps)


def _flush(run_dir: str, state: _State, config: TrainConfig, lattice_config: LatticeConfig):
    atomic_write(os.path.join(run_dir, METRICS_FILE), state.metrics.to_jsonl())
    save_checkpoint(os.path.join(run_dir, CHECKPOINT_FILE), state.checkpoint(config, lattice_config))
    if state.registry.initialized:
        write_centers(os.path.join(run_dir, CENTERS_FILE), state.registry)


def _window_mean(metrics: RunMetrics, start: int, end: int) -> Optional[float]:
    values = [record.clustering_loss for record in metrics.steps if start <= record.step < end]
    return float(np.mean(values)) if values else None


def _refit(
    state: _State,
    dataset: Sequence[SynthSample],
    config: TrainConfig,
    lattice_config: LatticeConfig,
    threads: Optional[int],
):
    """
    Recompute A(x) over the whole training set with the current parameters
    and refit the centers.
    """
    step = state.step
    points = forward_sweep(state.params, dataset, lattice_config, threads).points(config.gate_tap)
    fresh = kmeans_fit(points, config.K, seed=int(state.kmeans.integers(2**31)), step=step)
    fresh = fresh.model_copy(update={"update_count": state.registry.update_count + 1})

    labels = subset_labels(dataset)
    aligned = None
    if labels is not None and config.K <= 6:
        aligned = alignment(assign(points, fresh), labels, max(config.K, int(labels.max()) + 1))

    previous_refits = state.metrics.refits
    pre_refit = None
    if previous_refits:
        pre_refit = _window_mean(state.metrics, previous_refits[-1].step, step)
        if len(previous_refits) >= 2 and config.weights.lambda2 > 0:
            before = previous_refits[-1].pre_refit_clustering
            if before is not None and pre_refit is not None and pre_refit > before * (1 + ALTERNATION_SLACK):
                logger.warning(
                    f"Clustering loss after the refit at step {previous_refits[-1].step} averaged "
                    f"{pre_refit:.6g}, more than {ALTERNATION_SLACK:.0%} above the pre-refit mean {before:.6g}"
                )

    record = RefitRecord(
        step=step,
        update_count=fresh.update_count,
        inertia=fresh.inertia,
        center_shift=center_shift(state.registry, fresh),
        inter=inter_cluster_distance(fresh) if fresh.K >= 2 else None,
        alignment=aligned,
        pre_refit_clustering=pre_refit,
    )
    state.metrics.append(record)
    state.registry = fresh
    logger.info(
        f"Refit #{record.update_count} at step {step}: inertia={record.inertia:.6g} "
        f"shift={record.center_shift} inter={record.inter} alignment={record.alignment}"
    )


def _train_step(
    state: _State,
    dataset: Sequence[SynthSample],
    config: TrainConfig,
    lattice_config: LatticeConfig,
    costs: EdgeCostTable,
) -> StepRecord:
    step = state.step
    get_tape().clear()
    for param in state.params.values():
        param.zero_grad()

    size = min(config.batch_size, len(dataset))
    batch = [dataset[int(index)] for index in state.shuffle.choice(len(dataset), size=size, replace=False)]
    if config.random_flip:
        batch = [random_flip(sample, state.shuffle) for sample in batch]

    outputs = [lattice_forward(Tensor(sample.image), state.params, lattice_config) for sample in batch]
    taps = [output.gate_logits if config.gate_tap == "pre" else output.gates for output in outputs]
    clustering_active = config.weights.lambda2 > 0 and state.registry.initialized
    sigma = compute_sigma_sq([tap.data for tap in taps], state.registry) if clustering_active else None
    breakdowns = [
        total_loss(
            output.prediction,
            sample.mask,
            output.gates,
            state.registry if clustering_active else None,
            sigma,
            config.weights,
            costs,
            cluster_gates=tap,
        )
        for output, sample, tap in zip(outputs, batch, taps)
    ]
    loss = breakdowns[0].total
    for breakdown in breakdowns[1:]:
        loss = loss + breakdown.total
    loss = loss * (1.0 / len(breakdowns))
    backward(loss)

    grads = {
        name: param.grad if param.grad is not None else np.zeros_like(param.data)
        for name, param in state.params.items()
    }
    grad_norm = float(np.sqrt(sum(float(np.sum(grad * grad)) for grad in grads.values())))
    if config.max_grad_norm is not None:
        grads, grad_norm = clip_grad_norm(grads, config.max_grad_norm)
    lr = lr_schedule(step, config)
    sgd_step(state.params, grads, state.velocity, lr, config.momentum, config.weight_decay)
    return StepRecord(
        step=step,
        task_loss=float(np.mean([b.task for b in breakdowns])),
        cost_loss=float(np.mean([b.cost for b in breakdowns])),
        clustering_loss=float(np.mean([b.clustering for b in breakdowns])),
        total=loss.item(),
        lr=lr,
        grad_norm=grad_norm,
    )


def train(
    dataset: Sequence[SynthSample],
    config: TrainConfig,
    lattice_config: LatticeConfig,
    val_dataset: Optional[Sequence[SynthSample]] = None,
    run_dir: Optional[str] = None,
    resume: bool = False,
    threads: Optional[int] = None,
    val_split: str = "val",
) -> TrainResult:
    """
    Train the routing lattice. Before warmup_steps the clustering term is off;
    at warmup_steps and every kmeans_interval after, the centers are refit and
    then held fixed. Evaluation, the metrics file and the checkpoint are
    written every eval_interval steps (and at the end). With resume, training
    continues from run_dir's checkpoint.
    """
    if not dataset:
        raise ValueError("train: empty dataset")
    if len(dataset) < config.K:
        raise ValueError(f"train: {len(dataset)} samples cannot form K={config.K} clusters")
    costs = build_cost_table(lattice_config)
    state = _State(config, lattice_config)

    checkpoint_path = os.path.join(run_dir, CHECKPOINT_FILE) if run_dir else None
    if resume and checkpoint_path and os.path.exists(checkpoint_path):
        checkpoint = load_checkpoint(checkpoint_path)
        if checkpoint.lattice != lattice_config:
            raise ValueError(f"Checkpoint lattice {checkpoint.lattice} does not match {lattice_config}")
        with open(os.path.join(run_dir, METRICS_FILE), "rb") as infile:
            metrics = RunMetrics.from_jsonl(infile.read())
        state.restore(checkpoint, metrics)
        logger.info(f"Resuming from step {state.step} of {config.total_steps}")

    def _evaluate_and_flush():
        state.metrics.append(
            evaluate(
                state.params,
                state.registry,
                val_dataset or dataset,
                lattice_config,
                costs,
                gate_tap=config.gate_tap,
                step=state.step,
                split=val_split if val_dataset else "train",
                threads=threads,
            )
        )
        if run_dir:
            _flush(run_dir, state, config, lattice_config)

    digest = state.registry.digest() if state.registry.initialized else None
    try:
        # An interrupt during an evaluation leaves the step done but the eval missing.
        evals = state.metrics.evals
        if is_eval_step(state.step, config) and not (evals and evals[-1].step == state.step):
            logger.info(f"Re-running the evaluation interrupted at step {state.step}")
            _evaluate_and_flush()

        while state.step < config.total_steps:
            refits = state.metrics.refits
            if is_refit_step(state.step, config) and not (refits and refits[-1].step == state.step):
                _refit(state, dataset, config, lattice_config, threads)
                digest = state.registry.digest()
                state.mark()
            if state.registry.initialized and state.registry.digest() != digest:
                raise RuntimeError(f"Centers changed outside a refit at step {state.step}")

            state.metrics.append(_train_step(state, dataset, config, lattice_config, costs))
            state.step += 1
            state.mark()

            if is_eval_step(state.step, config):
                _evaluate_and_flush()
    except BaseException as exc:
        logger.error(f"Training stopped at step {state.step}: {exc!r}")
        if run_dir:
            _flush(run_dir, state, config, lattice_config)
        raise
    finally:
        get_tape().clear()
    logger.success(f"Training finished after {state.step} steps")
    return TrainResult(params=state.params, registry=state.registry, metrics=state.metrics)
