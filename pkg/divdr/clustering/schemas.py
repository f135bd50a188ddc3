"""
Pydantic models for the route clustering state and its diagnostics.
"""

import numpy as np
from typing import Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator
from divdr.util import array_digest


class CenterRegistry(BaseModel):
    """
    The K prototypical architectures (cluster centers in A-space) used by the
    clustering loss, plus bookkeeping about when they were last refit.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    centers: np.ndarray = Field(default_factory=lambda: np.zeros((0, 0)))
    initialized: bool = False
    last_update_step: int = -1
    update_count: int = 0
    inertia: Optional[float] = None

    @field_validator("centers", mode="before")
    @classmethod
    def coerce_centers(cls, value):
        array = np.array(value, dtype=np.float64)
        if array.ndim == 1:
            array = array.reshape(-1, 1) if array.size else array.reshape(0, 0)
        return array

    @model_validator(mode="after")
    def validate_centers(self):
        if self.centers.ndim != 2:
            raise ValueError(f"centers must be (K, n), got shape {self.centers.shape}")
        if self.initialized:
            if self.K < 1:
                raise ValueError("An initialized registry needs at least one center")
            if not np.all(np.isfinite(self.centers)):
                raise ValueError("Center entries must be finite")
        return self

    @property
    def K(self) -> int:
        return self.centers.shape[0]

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    def digest(self) -> str:
        return array_digest(self.centers)

    def to_payload(self) -> dict:
        return {
            "centers": self.centers.tolist(),
            "initialized": self.initialized,
            "last_update_step": self.last_update_step,
            "update_count": self.update_count,
            "inertia": self.inertia,
        }

    @staticmethod
    def from_payload(payload: dict) -> "CenterRegistry":
        return CenterRegistry(**payload)


class ClusterAssignment(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    index: np.ndarray
    distance: np.ndarray

    @field_validator("index", mode="before")
    @classmethod
    def coerce_index(cls, value):
        return np.asarray(value, dtype=np.int64).reshape(-1)

    @field_validator("distance", mode="before")
    @classmethod
    def coerce_distance(cls, value):
        return np.asarray(value, dtype=np.float64).reshape(-1)

    @model_validator(mode="after")
    def validate_lengths(self):
        if self.index.shape != self.distance.shape:
            raise ValueError(
                f"assignment has {self.index.shape[0]} indices but {self.distance.shape[0]} distances"
            )
        return self

    def __len__(self):
        return self.index.shape[0]

    def sizes(self, K: int) -> list[int]:
        return np.bincount(self.index, minlength=K).tolist()


class DiversityReport(BaseModel):
    inter: float = Field(ge=0.0, description="Mean pairwise distance between centers.")
    intra: float = Field(
        ge=0.0, description="Mean within-cluster pairwise sample distance, averaged over clusters."
    )
    gate_variance: float = Field(ge=0.0, description="Mean per-gate sample standard deviation.")
    per_cluster_sizes: list[int]
