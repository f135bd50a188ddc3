"""
Schemas for loss weights, batch statistics and loss breakdowns.
"""

from pydantic import BaseModel, ConfigDict, Field
from divdr.autodiff import Tensor

# Floor on the batch variance estimate.
SIGMA_FLOOR = 1e-8


class LossWeights(BaseModel):
    model_config = ConfigDict(frozen=True)

    lambda1: float = Field(0.0, ge=0.0, description="Weight of the normalised cost loss.")
    lambda2: float = Field(0.5, ge=0.0, description="Weight of the clustering loss.")
    alpha: float = Field(0.5, ge=0.0, description="Hinge margin of the clustering loss.")
    squared: bool = Field(
        False,
        description="Use squared Euclidean distances in the clustering loss (canonical magnet form).",
    )


class BatchSigma(BaseModel):
    sigma_sq: float = Field(ge=SIGMA_FLOOR)
    sample_count: int = Field(ge=1)


class LossBreakdown(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    total: Tensor
    task: float
    cost: float
    clustering: float

    def weighted_sum(self, weights: LossWeights) -> float:
        return self.task + weights.lambda1 * self.cost + weights.lambda2 * self.clustering
