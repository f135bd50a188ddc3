"""
Pydantic models describing the routing lattice and its A-space.
"""

import numpy as np
from typing import Literal, NamedTuple
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

Direction = Literal["up", "keep", "down"]

# Scale offset of the destination node, per direction (scale 0 = full resolution).
DIRECTION_OFFSET = {"up": -1, "keep": 0, "down": 1}
DIRECTION_ORDER = ("up", "keep", "down")


def directions_for(scale: int, num_scales: int) -> tuple[str, ...]:
    """
    Directions leaving a node at the given scale, in up < keep < down order;
    boundary scales omit the out-of-range ones.
    """
    return tuple(
        direction
        for direction in DIRECTION_ORDER
        if 0 <= scale + DIRECTION_OFFSET[direction] < num_scales
    )


class Edge(NamedTuple):
    layer: int
    scale: int
    direction: str

    @property
    def target_scale(self) -> int:
        return self.scale + DIRECTION_OFFSET[self.direction]


class LatticeConfig(BaseModel):
    model_config = ConfigDict(frozen=True)

    num_layers: int = Field(4, ge=1, description="Sequential routing layers (L).")
    num_scales: int = Field(
        3, ge=1, description="Scales per layer, scale s is downsampled by 2^s."
    )
    channels: int = Field(8, ge=1, description="Feature channels per node.")
    num_classes: int = Field(2, ge=1, description="Per-pixel output classes.")
    input_size: tuple[int, int] = Field((32, 32), description="Input (height, width).")
    input_channels: int = Field(1, ge=1, description="Input image channels.")
    gate_hidden: int = Field(8, ge=1, description="Hidden width of each gate's perceptron.")

    @field_validator("input_size")
    @classmethod
    def validate_input_size(cls, value):
        if value[0] < 1 or value[1] < 1:
            raise ValueError(f"input_size must be positive, got {value}")
        return value

    @model_validator(mode="after")
    def validate_divisible(self):
        factor = 2 ** (self.num_scales - 1)
        height, width = self.input_size
        if height % factor or width % factor:
            raise ValueError(
                f"input_size {self.input_size} must be divisible by 2^(num_scales-1) = {factor}"
            )
        return self

    @property
    def gate_dim(self) -> int:
        per_layer = sum(len(directions_for(s, self.num_scales)) for s in range(self.num_scales))
        return self.num_layers * per_layer

    def spatial(self, scale: int) -> tuple[int, int]:
        height, width = self.input_size
        return height >> scale, width >> scale


class GateActivationMap(BaseModel):
    """
    One input's point in A-space: every gate value, in edge enumeration order.
    """

    model_config = ConfigDict(arbitrary_types_allowed=True)

    values: np.ndarray
    edge_index: list[Edge]

    @field_validator("values", mode="before")
    @classmethod
    def coerce_values(cls, value):
        return np.asarray(value, dtype=np.float64).reshape(-1)

    @model_validator(mode="after")
    def validate_values(self):
        if self.values.shape[0] != len(self.edge_index):
            raise ValueError(
                f"GateActivationMap has {self.values.shape[0]} values for {len(self.edge_index)} edges"
            )
        if np.any(~np.isfinite(self.values)) or np.any((self.values < 0) | (self.values > 1)):
            raise ValueError("GateActivationMap values must lie in [0, 1]")
        return self

    def __len__(self):
        return self.values.shape[0]


class EdgeCostTable(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    edges: list[Edge]
    costs: np.ndarray

    @field_validator("costs", mode="before")
    @classmethod
    def coerce_costs(cls, value):
        return np.asarray(value, dtype=np.float64).reshape(-1)

    @model_validator(mode="after")
    def validate_costs(self):
        if self.costs.shape[0] != len(self.edges):
            raise ValueError(f"{self.costs.shape[0]} costs for {len(self.edges)} edges")
        if np.any(self.costs <= 0):
            raise ValueError("Edge costs must be strictly positive")
        return self

    @property
    def normalized(self) -> np.ndarray:
        return self.costs / self.costs.sum()

    def __len__(self):
        return self.costs.shape[0]
