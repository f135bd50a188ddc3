"""
Learning rate schedules, SGD with momentum and gradient clipping.
"""

import numpy as np
from loguru import logger
from divdr.autodiff import ShapeError, Tensor
from divdr.trainer.schemas import TrainConfig


class TrainingDivergedError(ValueError):
    def __init__(self, name: str, detail: str = "NaN gradient"):
        self.name = name
        super().__init__(f"Training diverged: {detail} in parameter {name}")


def lr_schedule(step: int, config: TrainConfig) -> float:
    """
    poly: lr0 * (1 - step / total_steps) ** power, reaching 0 at the last step.
    exp:  lr0 * power ** (step / lr_decay_steps).
    """
    if not 0 <= step <= config.total_steps:
        raise ValueError(f"lr_schedule: step {step} outside [0, {config.total_steps}]")
    if config.lr_policy == "exp":
        return config.lr0 * config.lr_power ** (step / config.lr_decay_steps)
    return config.lr0 * (1.0 - step / config.total_steps) ** config.lr_power


def clip_grad_norm(grads: dict[str, np.ndarray], max_norm: float) -> tuple[dict[str, np.ndarray], float]:
    """
    Rescale all gradients together so their global L2 norm is at most max_norm.
    Returns the (possibly rescaled) gradients and the norm before clipping.
    """
    norm = float(np.sqrt(sum(float(np.sum(grad * grad)) for grad in grads.values())))
    if not np.isfinite(norm) or norm <= max_norm:
        return grads, norm
    scale = max_norm / norm
    return {name: grad * scale for name, grad in grads.items()}, norm


def sgd_step(
    params: dict[str, Tensor],
    grads: dict[str, np.ndarray],
    velocity: dict[str, np.ndarray],
    lr: float,
    momentum: float,
    weight_decay: float,
) -> dict[str, Tensor]:
    """
    v <- momentum * v + grad + weight_decay * param; param <- param - lr * v.

    Every gradient is checked before anything is written, so a NaN leaves
    parameters and velocity untouched.
    """
    updates = {}
    for name, param in params.items():
        grad = grads.get(name)
        if grad is None:
            grad = np.zeros_like(param.data)
        if grad.shape != param.shape:
            raise ShapeError("sgd_step", param.shape, grad.shape, f"gradient of {name}")
        if np.isnan(grad).any():
            logger.error(f"NaN gradient in {name}")
            raise TrainingDivergedError(name)
        previous = velocity.get(name)
        if previous is None:
            previous = np.zeros_like(param.data)
        step = momentum * previous + grad + weight_decay * param.data
        updates[name] = (step, param.data - lr * step)
    for name, (step, data) in updates.items():
        velocity[name] = step
        params[name].data = data
    return params
