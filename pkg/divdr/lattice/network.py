"""
The multi-scale gated routing lattice: edge enumeration, parameters, gates,
the soft-routed forward pass and its cost model.
"""

import numpy as np
from typing import NamedTuple, Optional, Union
from divdr.autodiff import Tensor
from divdr.autodiff.ops import (
    concat,
    conv1x1,
    conv3x3,
    downsample2x,
    global_avg_pool,
    matmul,
    relu,
    sigmoid,
    total,
    upsample2x,
)
from divdr.config import settings
from divdr.lattice.schemas import (
    DIRECTION_OFFSET,
    Edge,
    EdgeCostTable,
    GateActivationMap,
    LatticeConfig,
    directions_for,
)

# 3x3 kernel.
KERNEL_AREA = 9


def enumerate_edges(config: LatticeConfig) -> list[Edge]:
    """
    The fixed ordering that defines A-space: layer-major, then scale ascending,
    then direction up < keep < down.
    """
    return [
        Edge(layer, scale, direction)
        for layer in range(config.num_layers)
        for scale in range(config.num_scales)
        for direction in directions_for(scale, config.num_scales)
    ]


def edge_position(config: LatticeConfig, layer: int, scale: int, direction: str) -> int:
    """
    Inverse of enumerate_edges.
    """
    if not 0 <= layer < config.num_layers or not 0 <= scale < config.num_scales:
        raise ValueError(f"No node at layer={layer} scale={scale}")
    available = directions_for(scale, config.num_scales)
    if direction not in available:
        raise ValueError(f"No {direction!r} edge leaves scale {scale}")
    per_layer = sum(len(directions_for(s, config.num_scales)) for s in range(config.num_scales))
    before = sum(len(directions_for(s, config.num_scales)) for s in range(scale))
    return layer * per_layer + before + available.index(direction)


def build_cost_table(config: LatticeConfig) -> EdgeCostTable:
    """
    Per-edge compute: the destination cell's 3x3 convolution plus the
    resampling the edge performs (nearest copy up, 2x2 average down).
    """
    channels = config.channels
    edges = enumerate_edges(config)
    costs = []
    for edge in edges:
        height, width = config.spatial(edge.target_scale)
        cost = height * width * channels * channels * KERNEL_AREA
        if edge.direction == "up":
            cost += height * width * channels
        elif edge.direction == "down":
            cost += 4 * height * width * channels
        costs.append(float(cost))
    return EdgeCostTable(edges=edges, costs=np.array(costs))


def init_params(config: LatticeConfig, rng: np.random.Generator) -> dict[str, Tensor]:
    """
    Fresh parameters under the stable naming scheme used by checkpoints.
    """
    channels = config.channels
    hidden = config.gate_hidden
    params: dict[str, Tensor] = {}

    def _add(name: str, shape: tuple[int, ...], std: float):
        data = rng.normal(0.0, std, size=shape) if std else np.zeros(shape)
        params[name] = Tensor(data, requires_grad=True, name=name)

    _add("stem.w", (channels, config.input_channels, 3, 3), np.sqrt(2.0 / (config.input_channels * 9)))
    _add("stem.b", (channels,), 0.0)
    for layer in range(config.num_layers):
        for scale in range(config.num_scales):
            prefix = f"node.{layer}.{scale}"
            directions = len(directions_for(scale, config.num_scales))
            _add(f"{prefix}.cell.w", (channels, channels, 3, 3), np.sqrt(2.0 / (channels * 9)))
            _add(f"{prefix}.cell.b", (channels,), 0.0)
            _add(f"{prefix}.gate.fc1.w", (channels, hidden), np.sqrt(2.0 / channels))
            _add(f"{prefix}.gate.fc1.b", (hidden,), 0.0)
            _add(f"{prefix}.gate.fc2.w", (hidden, directions), np.sqrt(1.0 / hidden))
            _add(f"{prefix}.gate.fc2.b", (directions,), 0.0)
    fused = channels * config.num_scales
    _add("head.w", (config.num_classes, fused), np.sqrt(1.0 / fused))
    _add("head.b", (config.num_classes,), 0.0)
    return params


class GateOutput(NamedTuple):
    values: Tensor
    logits: Tensor


class LatticeOutput(NamedTuple):
    prediction: Tensor
    gates: Tensor
    gate_logits: Tensor

    def activation_map(self, config: LatticeConfig) -> GateActivationMap:
        return GateActivationMap(values=self.gates.data.copy(), edge_index=enumerate_edges(config))


def gate_forward(node_features: Tensor, params: dict[str, Tensor], prefix: str) -> GateOutput:
    """
    GAP -> linear -> relu -> linear -> sigmoid. The A-space value of a gate is
    read after the final sigmoid; the logits are kept for the pre-sigmoid tap.
    """
    if node_features.data.ndim != 3:
        raise ValueError(f"gate_forward expects (C, H, W) features, got {node_features.shape}")
    pooled = global_avg_pool(node_features)
    hidden = relu(matmul(pooled, params[f"{prefix}.gate.fc1.w"]) + params[f"{prefix}.gate.fc1.b"])
    logits = matmul(hidden, params[f"{prefix}.gate.fc2.w"]) + params[f"{prefix}.gate.fc2.b"]
    return GateOutput(values=sigmoid(logits), logits=logits)


def _resample(features: Tensor, direction: str) -> Tensor:
    if direction == "up":
        return upsample2x(features)
    if direction == "down":
        return downsample2x(features)
    return features


def lattice_forward(x: Tensor, params: dict[str, Tensor], config: LatticeConfig) -> LatticeOutput:
    """
    Soft-routed forward pass. The input of node (l+1, s) is the gate-weighted
    sum of the resampled cell outputs of every node with an edge into it;
    layer 0 receives the stem output at each scale.
    """
    expected = (config.input_channels, *config.input_size)
    if x.shape != expected:
        raise ValueError(f"lattice_forward: input shape {x.shape} does not match config {expected}")
    num_scales = config.num_scales

    stem = conv3x3(x, params["stem.w"], params["stem.b"])
    inputs = [downsample2x(stem, scale) for scale in range(num_scales)]
    gate_values, gate_logits = [], []
    for layer in range(config.num_layers):
        incoming: list[Optional[Tensor]] = [None] * num_scales
        for scale in range(num_scales):
            prefix = f"node.{layer}.{scale}"
            features = relu(
                conv3x3(inputs[scale], params[f"{prefix}.cell.w"], params[f"{prefix}.cell.b"])
            )
            gates = gate_forward(features, params, prefix)
            gate_values.append(gates.values)
            gate_logits.append(gates.logits)
            for position, direction in enumerate(directions_for(scale, num_scales)):
                target = scale + DIRECTION_OFFSET[direction]
                routed = gates.values[position] * _resample(features, direction)
                incoming[target] = routed if incoming[target] is None else incoming[target] + routed
        inputs = incoming

    fused = concat(*(upsample2x(inputs[scale], scale) for scale in range(num_scales)))
    prediction = conv1x1(fused, params["head.w"], params["head.b"])
    return LatticeOutput(
        prediction=prediction,
        gates=concat(*gate_values),
        gate_logits=concat(*gate_logits),
    )


def _values(activations: Union[GateActivationMap, np.ndarray]) -> np.ndarray:
    if isinstance(activations, GateActivationMap):
        return activations.values
    return np.asarray(activations, dtype=np.float64).reshape(-1)


def expected_cost(activations: Union[GateActivationMap, np.ndarray], costs: EdgeCostTable) -> float:
    """
    Normalised expected compute: sum_e A_e * cost_e / sum_e cost_e.
    """
    values = _values(activations)
    if values.shape[0] != len(costs):
        raise ValueError(f"expected_cost: {values.shape[0]} gates for {len(costs)} edge costs")
    return float(values @ costs.costs / costs.costs.sum())


def expected_cost_tensor(gates: Tensor, costs: EdgeCostTable) -> Tensor:
    """
    Differentiable form of expected_cost, used inside the training objective.
    """
    if gates.shape != (len(costs),):
        raise ValueError(f"expected_cost: {gates.shape} gates for {len(costs)} edge costs")
    return total(gates * Tensor(costs.normalized))


def pruned_cost(
    activations: Union[GateActivationMap, np.ndarray],
    costs: EdgeCostTable,
    threshold: Optional[float] = None,
) -> float:
    """
    Inference-time cost when every edge whose gate falls below the threshold is skipped.
    """
    threshold = settings.prune_threshold if threshold is None else threshold
    values = _values(activations)
    if values.shape[0] != len(costs):
        raise ValueError(f"pruned_cost: {values.shape[0]} gates for {len(costs)} edge costs")
    return float(costs.costs[values >= threshold].sum() / costs.costs.sum())
