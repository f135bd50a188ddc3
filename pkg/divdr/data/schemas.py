"""
Synthetic scale-biased segmentation data: schemas.
"""

import numpy as np
from typing import Literal, Optional
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Subset = Literal["S", "L", "X"]
Split = Literal["train", "val"]

# Planted (hidden) subset labels.
SUBSET_LABEL = {"S": 0, "L": 1}
SUBSET_CODE = {"S": 0, "L": 1, "X": 2}
SPLIT_CODE = {"train": 0, "val": 1}


class DatasetSpec(BaseModel):
    model_config = ConfigDict(frozen=True)

    n_train: int = Field(1024, ge=1, description="Training samples per subset.")
    n_val: int = Field(256, ge=1, description="Validation samples per subset.")
    mix: float = Field(0.5, ge=0.0, le=1.0, description="Fraction of S-type samples in X.")
    radius_small: tuple[float, float] = Field((2.0, 4.0), description="Disc radius range of S (px).")
    radius_large: tuple[float, float] = Field((8.0, 12.0), description="Disc radius range of L (px).")
    noise_std: float = Field(0.1, ge=0.0, description="Additive Gaussian pixel noise.")
    seed: int = Field(0, description="Data seed.")
    size: int = Field(32, ge=8, description="Square image side (px).")

    @field_validator("radius_small", "radius_large")
    @classmethod
    def validate_range(cls, value):
        low, high = value
        if low <= 0 or high < low:
            raise ValueError(f"radius range must satisfy 0 < low <= high, got {value}")
        return value

    @model_validator(mode="after")
    def validate_ranges(self):
        small, large = self.radius_small, self.radius_large
        if not (small[1] < large[0] or large[1] < small[0]):
            raise ValueError(f"radius ranges must be disjoint, got {small} and {large}")
        if 2 * max(small[1], large[1]) > self.size:
            raise ValueError(f"discs of radius up to {max(small[1], large[1])} do not fit a {self.size}px image")
        return self

    def radius_range(self, subset: str) -> tuple[float, float]:
        return self.radius_small if subset == "S" else self.radius_large

    def count(self, split: str) -> int:
        return self.n_train if split == "train" else self.n_val


class SynthSample(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    image: np.ndarray
    mask: np.ndarray
    true_subset: Optional[int] = Field(None, description="0 = S, 1 = L; evaluation only.")
    sample_id: int

    @model_validator(mode="after")
    def validate_sample(self):
        if self.image.ndim != 3 or self.image.shape[1:] != self.mask.shape:
            raise ValueError(f"image {self.image.shape} and mask {self.mask.shape} disagree")
        if not np.any(self.mask):
            raise ValueError(f"sample {self.sample_id} has no foreground pixels")
        return self

    @property
    def foreground_fraction(self) -> float:
        return float(np.mean(self.mask > 0))


class SplitReport(BaseModel):
    count_s: int
    count_l: int
    foreground_s: Optional[float] = None
    foreground_l: Optional[float] = None

    @property
    def counts(self) -> tuple[int, int]:
        return self.count_s, self.count_l
