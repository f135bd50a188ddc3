"""
Experiment recipes behind the CLI verbs: train, eval, sweep, export-aspace,
gen-data and the local-expert motivation study.
"""

import os
import pandas as pd
import orjson as json
from loguru import logger
from typing import Literal, Optional, Sequence
from pydantic import BaseModel, ConfigDict, Field, ValidationError
from divdr.clustering import CenterRegistry, assign
from divdr.clustering.export import export_aspace, export_pca, pca_project, write_frame
from divdr.config import settings
from divdr.data import generate
from divdr.data.cache import cached_split, save_split
from divdr.data.schemas import DatasetSpec, SynthSample
from divdr.lattice import LatticeConfig, enumerate_edges
from divdr.lattice.checkpoint import load_checkpoint
from divdr.loss import LossWeights
from divdr.trainer import EvalRecord, TrainConfig, evaluate, forward_sweep, train
from divdr.trainer.evaluate import subset_labels
from divdr.trainer.loop import CHECKPOINT_FILE
from divdr.util import read_json, write_json

CONFIG_ECHO = "config.json"
DATA_DIR = "data"
SPLITS = {
    "train": None,
    "val_s": ("S", "val"),
    "val_l": ("L", "val"),
    "val_x": ("X", "val"),
}
SWEEP_PARAMS = {"K": int, "alpha": float, "lambda2": float, "lambda1": float}


class ConfigError(ValueError):
    def __init__(self, message: str, fields: Sequence[str] = ()):
        self.fields = list(fields)
        super().__init__(message)

    @classmethod
    def from_validation(cls, source: str, exc: ValidationError) -> "ConfigError":
        fields, lines = [], []
        for error in exc.errors():
            name = ".".join(str(part) for part in error["loc"]) or "<root>"
            fields.append(name)
            lines.append(f"  {name}: {error['msg']}")
        return cls(f"Invalid config {source}:\n" + "\n".join(lines), fields)


class ExperimentConfig(BaseModel):
    """
    One flat record per run; the run directory's config.json echo of it
    reproduces the run.
    """

    model_config = ConfigDict(extra="forbid", frozen=True)

    name: str = Field("divdr", description="Run name, also the run directory name under the output root.")
    out: Optional[str] = Field(None, description="Output root (defaults to DIVDR_OUT, then 'runs').")

    # Lattice.
    num_layers: int = Field(4, ge=1, description="Lattice depth L.")
    num_scales: int = Field(3, ge=1, description="Resolutions per layer S.")
    channels: int = Field(8, ge=1, description="Feature channels per node.")
    num_classes: int = Field(2, ge=2, description="Segmentation classes.")
    gate_hidden: int = Field(8, ge=1, description="Hidden width of each gate MLP.")

    # Training.
    total_steps: int = Field(3000, ge=1, description="Number of SGD steps.")
    batch_size: int = Field(8, ge=1, description="Samples per step.")
    lr0: float = Field(0.05, ge=0.0, description="Initial learning rate.")
    lr_power: float = Field(0.9, gt=0.0, description="Poly power / exp decay factor.")
    lr_policy: Literal["poly", "exp"] = Field("poly", description="Learning rate schedule.")
    lr_decay_steps: int = Field(1000, ge=1, description="Decay period of the exp schedule.")
    momentum: float = Field(0.9, ge=0.0, lt=1.0, description="SGD momentum.")
    weight_decay: float = Field(1e-4, ge=0.0, description="L2 weight decay.")
    kmeans_interval: int = Field(50, ge=1, description="Steps between center refits.")
    warmup_steps: int = Field(50, ge=1, description="Steps before the first refit.")
    eval_interval: int = Field(200, ge=1, description="Steps between evaluations and checkpoints.")
    seed: int = Field(0, description="Run seed.")
    K: int = Field(..., ge=1, description="Number of route clusters (required).")
    random_flip: bool = Field(False, description="Horizontal flip augmentation.")
    max_grad_norm: Optional[float] = Field(None, gt=0.0, description="Global gradient norm clip (off by default).")
    gate_tap: Literal["post", "pre"] = Field("pre", description="Clustering tap: gate logits or activations.")

    # Loss.
    lambda1: float = Field(0.0, ge=0.0, description="Cost loss weight.")
    lambda2: float = Field(0.5, ge=0.0, description="Clustering loss weight (0 = baseline dynamic routing).")
    alpha: float = Field(0.5, ge=0.0, description="Clustering hinge margin.")
    squared: bool = Field(False, description="Squared distances in the clustering loss.")

    # Data.
    subset: Literal["S", "L", "X"] = Field("X", description="Training subset.")
    n_train: int = Field(1024, ge=1, description="Training samples per subset.")
    n_val: int = Field(256, ge=1, description="Validation samples per subset.")
    mix: float = Field(0.5, ge=0.0, le=1.0, description="Fraction of S-type samples in X.")
    radius_small: tuple[float, float] = Field((2.0, 4.0), description="Disc radius range of S.")
    radius_large: tuple[float, float] = Field((8.0, 12.0), description="Disc radius range of L.")
    noise_std: float = Field(0.1, ge=0.0, description="Pixel noise.")
    data_seed: Optional[int] = Field(None, description="Data seed (defaults to seed).")
    size: int = Field(32, ge=8, description="Image side in pixels.")

    def lattice_config(self) -> LatticeConfig:
        return LatticeConfig(
            num_layers=self.num_layers,
            num_scales=self.num_scales,
            channels=self.channels,
            num_classes=self.num_classes,
            input_size=(self.size, self.size),
            gate_hidden=self.gate_hidden,
        )

    def loss_weights(self) -> LossWeights:
        return LossWeights(lambda1=self.lambda1, lambda2=self.lambda2, alpha=self.alpha, squared=self.squared)

    def train_config(self) -> TrainConfig:
        fields = {name: getattr(self, name) for name in TrainConfig.model_fields if name != "weights"}
        return TrainConfig(weights=self.loss_weights(), **fields)

    def dataset_spec(self) -> DatasetSpec:
        return DatasetSpec(
            n_train=self.n_train,
            n_val=self.n_val,
            mix=self.mix,
            radius_small=self.radius_small,
            radius_large=self.radius_large,
            noise_std=self.noise_std,
            seed=self.seed if self.data_seed is None else self.data_seed,
            size=self.size,
        )

    def out_root(self) -> str:
        return self.out or settings.out_root

    def run_dir(self) -> str:
        return os.path.join(self.out_root(), self.name)


def build_config(payload: dict, source: str = "<config>") -> ExperimentConfig:
    """
    Validate a flat config record, including the derived sub-records, so every
    failure surfaces before anything is written.
    """
    try:
        config = ExperimentConfig(**payload)
        config.lattice_config()
        config.train_config()
        config.dataset_spec()
    except ValidationError as exc:
        raise ConfigError.from_validation(source, exc) from exc
    return config


def load_config(path: str, **overrides) -> ExperimentConfig:
    try:
        payload = read_json(path)
    except FileNotFoundError as exc:
        raise ConfigError(f"Config file not found: {path}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config file {path} is not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise ConfigError(f"Config file {path} must hold a JSON object")
    payload.update({key: value for key, value in overrides.items() if value is not None})
    return build_config(payload, path)


def load_dataset(config: ExperimentConfig, split: str) -> list[SynthSample]:
    """
    Samples of a named split ("train" is the configured training subset),
    from the gen-data cache when it matches the spec.
    """
    if split not in SPLITS:
        raise ConfigError(f"Unknown split {split!r}, expected one of {sorted(SPLITS)}", ["split"])
    subset, part = SPLITS[split] or (config.subset, "train")
    spec = config.dataset_spec()
    cached = cached_split(os.path.join(config.out_root(), DATA_DIR), f"{subset}_{part}", spec)
    if cached is not None:
        return cached
    return generate(spec, subset, part)


def _load_run(run_dir: str) -> tuple[ExperimentConfig, dict, CenterRegistry]:
    echo = os.path.join(run_dir, CONFIG_ECHO)
    if not os.path.exists(echo):
        raise FileNotFoundError(f"No config echo in {run_dir}")
    config = build_config(read_json(echo), echo)
    checkpoint = load_checkpoint(os.path.join(run_dir, CHECKPOINT_FILE))
    registry = CenterRegistry.from_payload(checkpoint.registry) if checkpoint.registry else CenterRegistry()
    return config, checkpoint.params, registry


def cmd_train(config: ExperimentConfig, threads: Optional[int] = None, resume: bool = False) -> str:
    run_dir = config.run_dir()
    os.makedirs(run_dir, exist_ok=True)
    write_json(os.path.join(run_dir, CONFIG_ECHO), config.model_dump(mode="json"))
    logger.info(f"Training {config.name} into {run_dir}")
    result = train(
        load_dataset(config, "train"),
        config.train_config(),
        config.lattice_config(),
        val_dataset=load_dataset(config, "val_x"),
        run_dir=run_dir,
        resume=resume,
        threads=threads,
        val_split="val_x",
    )
    write_json(os.path.join(run_dir, "eval_val_x.json"), result.metrics.evals[-1].model_dump(exclude_none=True))
    logger.success(f"Run {config.name} complete: {run_dir}")
    return run_dir


def cmd_eval(run_dir: str, split: str, threads: Optional[int] = None) -> EvalRecord:
    config, params, registry = _load_run(run_dir)
    record = evaluate(
        params,
        registry,
        load_dataset(config, split),
        config.lattice_config(),
        gate_tap=config.gate_tap,
        split=split,
        threads=threads,
    )
    payload = record.model_dump(exclude_none=True)
    write_json(os.path.join(run_dir, f"eval_{split}.json"), payload)
    print(json.dumps(payload, option=json.OPT_INDENT_2 | json.OPT_SORT_KEYS).decode())
    return record


def parse_values(param: str, values: str) -> list:
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"Cannot sweep {param!r}, expected one of {sorted(SWEEP_PARAMS)}", ["param"])
    items = [item.strip() for item in values.split(",") if item.strip()]
    if not items:
        raise ConfigError("Sweep needs at least one value", ["values"])
    try:
        return [SWEEP_PARAMS[param](item) for item in items]
    except ValueError as exc:
        raise ConfigError(f"Bad sweep value for {param}: {exc}", ["values"]) from exc


def cmd_sweep(config: ExperimentConfig, param: str, values: Sequence, threads: Optional[int] = None) -> str:
    """
    One full train + val_x evaluation per value; summary rows sorted by value.
    """
    if param not in SWEEP_PARAMS:
        raise ConfigError(f"Cannot sweep {param!r}, expected one of {sorted(SWEEP_PARAMS)}", ["param"])
    if not values:
        raise ConfigError("Sweep needs at least one value", ["values"])
    trials = []
    for value in values:
        payload = {**config.model_dump(mode="json"), param: value, "name": f"{config.name}_{param}_{value}"}
        trials.append(build_config(payload, f"sweep {param}={value}"))
    rows = []
    for value, trial in zip(values, trials):
        cmd_train(trial, threads=threads)
        record = EvalRecord(**read_json(os.path.join(trial.run_dir(), "eval_val_x.json")))
        rows.append(
            {
                param: value,
                "mIoU": record.mIoU,
                "expected_cost": record.expected_cost,
                "pruned_cost": record.pruned_cost,
                "inter": record.inter,
                "intra": record.intra,
                "gate_variance": record.gate_variance,
                "alignment": record.alignment,
            }
        )
    frame = pd.DataFrame(rows).sort_values(param, kind="stable")
    path = os.path.join(config.run_dir(), f"sweep_{param}.csv")
    write_frame(path, frame)
    logger.success(f"Sweep over {param}={list(values)} written to {path}")
    return path


def cmd_export_aspace(run_dir: str, split: str, threads: Optional[int] = None) -> tuple[str, str]:
    config, params, registry = _load_run(run_dir)
    if not registry.initialized:
        raise ValueError(f"Run {run_dir} has no fitted centers to assign against")
    dataset = load_dataset(config, split)
    lattice_config = config.lattice_config()
    sweep = forward_sweep(params, dataset, lattice_config, threads)
    points = sweep.points(config.gate_tap)
    assigned = assign(points, registry).index
    sample_ids = [sample.sample_id for sample in dataset]
    aspace_path = os.path.join(run_dir, f"aspace_{split}.csv")
    pca_path = os.path.join(run_dir, f"pca_{split}.csv")
    export_aspace(
        aspace_path,
        sweep.gates,
        sample_ids,
        assigned,
        enumerate_edges(lattice_config),
        subset_labels(dataset),
        cluster_space=config.gate_tap,
    )
    export_pca(pca_path, pca_project(points), sample_ids, assigned)
    logger.success(f"Exported {len(dataset)} A-space points to {aspace_path} and {pca_path}")
    return aspace_path, pca_path


def cmd_gen_data(config: ExperimentConfig) -> str:
    spec = config.dataset_spec()
    directory = os.path.join(config.out_root(), DATA_DIR)
    for subset in ("S", "L", "X"):
        for split in ("train", "val"):
            save_split(directory, f"{subset}_{split}", generate(spec, subset, split), spec)
    logger.success(f"Cached all splits under {directory}")
    return directory


def cmd_motivation(config: ExperimentConfig, threads: Optional[int] = None) -> str:
    """
    Local experts trained on S and on L against a global model trained on X,
    all plain dynamic routing (lambda2 = 0), each evaluated on val_S and
    val_L. When the config enables the clustering term, a DivDR model trained
    on X is added as a fourth row.
    """
    rows = []
    val_s, val_l = load_dataset(config, "val_s"), load_dataset(config, "val_l")
    lattice_config = config.lattice_config()
    trials = [(subset, subset, 0.0) for subset in ("S", "L", "X")]
    if config.lambda2 > 0:
        trials.append(("DivDR", "X", config.lambda2))
    for model, subset, lambda2 in trials:
        trial = build_config(
            {
                **config.model_dump(mode="json"),
                "subset": subset,
                "lambda2": lambda2,
                "name": f"{config.name}_train_{model}",
            },
            f"motivation {model}",
        )
        run_dir = cmd_train(trial, threads=threads)
        _, params, registry = _load_run(run_dir)
        on_s, on_l = (
            evaluate(params, registry, data, lattice_config, gate_tap=config.gate_tap, split=split, threads=threads)
            for split, data in (("val_s", val_s), ("val_l", val_l))
        )
        rows.append(
            {
                "model": model,
                "mIoU_val_s": on_s.mIoU,
                "mIoU_val_l": on_l.mIoU,
                "expected_cost": (on_s.expected_cost + on_l.expected_cost) / 2,
            }
        )
    path = os.path.join(config.run_dir(), "motivation.csv")
    write_frame(path, pd.DataFrame(rows))
    logger.success(f"Motivation table written to {path}")
    return path
