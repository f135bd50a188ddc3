"""
Versioned parameter checkpoints.

Layout (JSON, written atomically):

    {
      "format": "divdr-checkpoint",
      "version": 1,
      "step": <int, next training step to run>,
      "lattice": {<LatticeConfig fields>},
      "params":   {"<name>": {"shape": [...], "data": [... row-major floats ...]}},
      "velocity": {"<name>": {"shape": [...], "data": [...]}},
      "registry": {<CenterRegistry payload>} | null,
      "rng":      {"<stream>": <numpy bit generator state>},
      "extra":    {...}
    }

Parameter names follow "stem.w", "node.<layer>.<scale>.cell.w",
"node.<layer>.<scale>.gate.fc1.w", ..., "head.b". Floats are serialised with
shortest round-trip repr, so a save/load cycle is exact.
"""

import os
import numpy as np
from loguru import logger
from typing import Any, Optional
from pydantic import BaseModel, ConfigDict
from divdr.autodiff import Tensor
from divdr.lattice.schemas import LatticeConfig
from divdr.util import read_json, write_json

CHECKPOINT_FORMAT = "divdr-checkpoint"
CHECKPOINT_VERSION = 1


class Checkpoint(BaseModel):
    model_config = ConfigDict(arbitrary_types_allowed=True)

    step: int
    lattice: LatticeConfig
    params: dict[str, Tensor]
    velocity: dict[str, np.ndarray] = {}
    registry: Optional[dict[str, Any]] = None
    rng: dict[str, Any] = {}
    extra: dict[str, Any] = {}


def _pack(arrays: dict[str, np.ndarray]) -> dict:
    return {
        name: {"shape": list(array.shape), "data": np.asarray(array).reshape(-1).tolist()}
        for name, array in arrays.items()
    }


def _unpack(payload: dict) -> dict[str, np.ndarray]:
    arrays = {}
    for name, item in payload.items():
        data = np.asarray(item["data"], dtype=np.float64)
        shape = tuple(item["shape"])
        if int(np.prod(shape)) != data.size:
            raise ValueError(f"Checkpoint entry {name}: shape {shape} does not match {data.size} values")
        arrays[name] = data.reshape(shape)
    return arrays


def save_checkpoint(path: str, checkpoint: Checkpoint):
    payload = {
        "format": CHECKPOINT_FORMAT,
        "version": CHECKPOINT_VERSION,
        "step": checkpoint.step,
        "lattice": checkpoint.lattice.model_dump(mode="json"),
        "params": _pack({name: tensor.data for name, tensor in checkpoint.params.items()}),
        "velocity": _pack(checkpoint.velocity),
        "registry": checkpoint.registry,
        "rng": checkpoint.rng,
        "extra": checkpoint.extra,
    }
    write_json(path, payload, indent=False)
    logger.info(f"Saved checkpoint at step {checkpoint.step} to {path}")


def load_checkpoint(path: str) -> Checkpoint:
    if not os.path.exists(path):
        raise FileNotFoundError(f"Checkpoint not found: {path}")
    payload = read_json(path)
    if payload.get("format") != CHECKPOINT_FORMAT:
        raise ValueError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if payload.get("version") != CHECKPOINT_VERSION:
        raise ValueError(
            f"Unsupported checkpoint version {payload.get('version')} (expected {CHECKPOINT_VERSION})"
        )
    params = {
        name: Tensor(array, requires_grad=True, name=name)
        for name, array in _unpack(payload["params"]).items()
    }
    return Checkpoint(
        step=payload["step"],
        lattice=LatticeConfig(**payload["lattice"]),
        params=params,
        velocity=_unpack(payload.get("velocity") or {}),
        registry=payload.get("registry"),
        rng=payload.get("rng") or {},
        extra=payload.get("extra") or {},
    )
