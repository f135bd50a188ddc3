"""
Central finite-difference gradient checks.
"""

import numpy as np
from loguru import logger
from pydantic import BaseModel
from typing import Callable
from divdr.autodiff.tensor import Tensor, backward, get_tape, no_grad


class NonDeterministicError(ValueError): ...


class GradCheckReport(BaseModel):
    max_rel_error: dict[str, float]
    worst: float
    tol: float
    passed: bool


def _evaluate(f: Callable[[], Tensor]) -> float:
    with no_grad():
        return f().item()


def relative_error(analytic: np.ndarray, numeric: np.ndarray, floor: float = 1e-6) -> np.ndarray:
    """
    |a - n| / max(|a|, |n|, floor); exactly 0 when both agree, including both 0.
    """
    scale = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), floor)
    return np.abs(analytic - numeric) / scale


def grad_check(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-5,
    tol: float = 1e-4,
    floor: float = 1e-6,
) -> GradCheckReport:
    """
    Compare the taped gradient of scalar program f w.r.t. each parameter against
    central differences (f(p+h) - f(p-h)) / 2h, element by element.
    """
    if not 0.0 < h <= 1e-2:
        raise ValueError(f"grad_check: step h must lie in (0, 1e-2], got {h}")
    first, second = _evaluate(f), _evaluate(f)
    if first != second and not (np.isnan(first) and np.isnan(second)):
        raise NonDeterministicError(
            f"grad_check: two forward passes disagree ({first!r} vs {second!r})"
        )

    tape = get_tape()
    tape.clear()
    for param in params.values():
        param.zero_grad()
        # Perturbations below write through a flat view.
        param.data = np.ascontiguousarray(param.data)
    loss = f()
    if len(tape):
        backward(loss)
    else:
        tape.clear()

    errors = {}
    for name, param in params.items():
        analytic = param.grad if param.grad is not None else np.zeros_like(param.data)
        numeric = np.zeros_like(param.data)
        flat = param.data.reshape(-1)
        numeric_flat = numeric.reshape(-1)
        for idx in range(flat.size):
            original = flat[idx]
            flat[idx] = original + h
            plus = _evaluate(f)
            flat[idx] = original - h
            minus = _evaluate(f)
            flat[idx] = original
            numeric_flat[idx] = (plus - minus) / (2.0 * h)
        errors[name] = float(np.max(relative_error(analytic, numeric, floor), initial=0.0))

    worst = max(errors.values(), default=0.0)
    passed = worst <= tol
    if not passed:
        logger.warning(f"Gradient check failed: {worst=} > {tol=}: {errors}")
    return GradCheckReport(max_rel_error=errors, worst=worst, tol=tol, passed=passed)
