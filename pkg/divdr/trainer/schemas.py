"""
Training configuration and the append-only run metrics.
"""

import orjson as json
from typing import Annotated, Literal, Optional, Union
from pydantic import BaseModel, ConfigDict, Field, model_validator
from divdr.loss.schemas import LossWeights


class TrainConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    total_steps: int = Field(3000, ge=1, description="Number of SGD steps.")
    batch_size: int = Field(8, ge=1, description="Samples per step.")
    lr0: float = Field(0.05, ge=0.0, description="Initial learning rate.")
    lr_power: float = Field(0.9, gt=0.0, description="Poly power, or per-period decay factor for exp.")
    lr_policy: Literal["poly", "exp"] = Field("poly", description="Learning rate schedule.")
    lr_decay_steps: int = Field(1000, ge=1, description="Decay period of the exp schedule.")
    momentum: float = Field(0.9, ge=0.0, lt=1.0, description="SGD momentum.")
    weight_decay: float = Field(1e-4, ge=0.0, description="L2 weight decay.")
    kmeans_interval: int = Field(50, ge=1, description="Steps between center refits.")
    warmup_steps: int = Field(50, ge=1, description="Steps before the first refit (clustering term off).")
    eval_interval: int = Field(200, ge=1, description="Steps between evaluations and checkpoints.")
    seed: int = Field(0, description="Run seed (init, kmeans and shuffle substreams).")
    weights: LossWeights = Field(default_factory=LossWeights)
    K: int = Field(3, ge=1, description="Number of route clusters.")
    random_flip: bool = Field(False, description="Horizontal flip augmentation.")
    max_grad_norm: Optional[float] = Field(None, gt=0.0, description="Global gradient norm clip (None disables).")
    gate_tap: Literal["post", "pre"] = Field(
        "pre", description="Cluster gate activations before (pre) or after (post) the sigmoid."
    )

    @model_validator(mode="after")
    def validate_clusters(self):
        if self.weights.lambda2 > 0 and self.K < 2:
            raise ValueError(f"the clustering term needs K >= 2, got K={self.K} with lambda2={self.weights.lambda2}")
        return self


class StepRecord(BaseModel):
    kind: Literal["step"] = "step"
    step: int
    task_loss: float
    cost_loss: float
    clustering_loss: float
    total: float
    lr: float
    grad_norm: float


class EvalRecord(BaseModel):
    kind: Literal["eval"] = "eval"
    step: int
    split: Optional[str] = None
    sample_count: int
    mIoU: float
    expected_cost: float
    pruned_cost: float
    inter: Optional[float] = None
    intra: Optional[float] = None
    gate_variance: Optional[float] = None
    per_cluster_sizes: Optional[list[int]] = None
    alignment: Optional[float] = None


class RefitRecord(BaseModel):
    kind: Literal["refit"] = "refit"
    step: int
    update_count: int
    inertia: float
    center_shift: Optional[float] = None
    inter: Optional[float] = Field(None, description="Mean pairwise distance between the fresh centers.")
    alignment: Optional[float] = None
    pre_refit_clustering: Optional[float] = Field(
        None, description="Mean clustering loss over the steps since the previous refit."
    )


Record = Annotated[Union[StepRecord, EvalRecord, RefitRecord], Field(discriminator="kind")]
RECORD_TYPES = {"step": StepRecord, "eval": EvalRecord, "refit": RefitRecord}


class RunMetrics(BaseModel):
    """
    Chronological, append-only log of everything a run measures, one JSON
    object per line on disk.
    """

    records: list[Record] = Field(default_factory=list)

    def append(self, record: Record):
        if self.records and record.step < self.records[-1].step:
            raise ValueError(f"metrics are append-only: step {record.step} after {self.records[-1].step}")
        self.records.append(record)

    @property
    def steps(self) -> list[StepRecord]:
        return [record for record in self.records if record.kind == "step"]

    @property
    def evals(self) -> list[EvalRecord]:
        return [record for record in self.records if record.kind == "eval"]

    @property
    def refits(self) -> list[RefitRecord]:
        return [record for record in self.records if record.kind == "refit"]

    def truncate(self, step: int) -> "RunMetrics":
        """
        Records of the steps before `step`. Evals and refits logged at `step`
        happen before that step runs and are kept.
        """
        kept = [
            record
            for record in self.records
            if record.step < step or (record.kind != "step" and record.step == step)
        ]
        return RunMetrics(records=kept)

    def to_jsonl(self) -> bytes:
        return b"".join(
            json.dumps(record.model_dump(exclude_none=True), option=json.OPT_SORT_KEYS) + b"\n"
            for record in self.records
        )

    @staticmethod
    def from_jsonl(payload: bytes) -> "RunMetrics":
        metrics = RunMetrics()
        for line in payload.splitlines():
            if not line.strip():
                continue
            item = json.loads(line)
            metrics.append(RECORD_TYPES[item["kind"]](**item))
        return metrics
