"""
Dense float64 tensors and the gradient tape they record onto.
"""

import numpy as np
from contextlib import contextmanager
from dataclasses import dataclass
from typing import Any, Optional


class ShapeError(ValueError):
    def __init__(self, kind: str, left, right, detail: str = ""):
        self.kind = kind
        message = f"{kind}: incompatible shapes {tuple(left)} and {tuple(right)}"
        if detail:
            message += f" ({detail})"
        super().__init__(message)


@dataclass
class TapeEntry:
    kind: str
    op: Any
    input_ids: tuple[Optional[int], ...]
    output_id: int
    saved: Any


class Tape:
    """
    Ordered record of differentiable operations. Entries are appended as the
    forward pass runs, so every input node precedes its consumers.
    """

    def __init__(self):
        self.entries: list[TapeEntry] = []
        self.tensors: dict[int, "Tensor"] = {}
        self._next_id = 0

    def __len__(self):
        return len(self.entries)

    def track(self, tensor: "Tensor") -> int:
        if tensor._tape is not self or tensor.node_id is None:
            tensor.node_id = self._next_id
            tensor._tape = self
            self.tensors[self._next_id] = tensor
            self._next_id += 1
        return tensor.node_id

    def record(self, kind: str, op: Any, inputs: tuple["Tensor", ...], output: "Tensor", saved):
        input_ids = tuple(self.track(t) if t.requires_grad else None for t in inputs)
        output_id = self.track(output)
        self.entries.append(TapeEntry(kind, op, input_ids, output_id, saved))

    def clear(self):
        for tensor in self.tensors.values():
            tensor.node_id = None
            tensor._tape = None
        self.entries = []
        self.tensors = {}
        self._next_id = 0


_TAPE = Tape()
_GRAD_ENABLED = True


def get_tape() -> Tape:
    return _TAPE


def is_grad_enabled() -> bool:
    return _GRAD_ENABLED


@contextmanager
def no_grad():
    """
    Disable recording, process wide (worker threads of an evaluation sweep
    see the same flag).
    """
    global _GRAD_ENABLED
    previous = _GRAD_ENABLED
    _GRAD_ENABLED = False
    try:
        yield
    finally:
        _GRAD_ENABLED = previous


class Tensor:
    def __init__(self, data, requires_grad: bool = False, name: Optional[str] = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.name = name
        self.grad: Optional[np.ndarray] = None
        self.node_id: Optional[int] = None
        self._tape: Optional[Tape] = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    @property
    def size(self) -> int:
        return self.data.size

    def item(self) -> float:
        if self.data.size != 1:
            raise ValueError(f"item() requires a single element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def numpy(self) -> np.ndarray:
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" name={self.name}" if self.name else ""
        return f"Tensor(shape={self.shape}{label}, requires_grad={self.requires_grad})"

    # Operator sugar, all routed through forward_op so they are recorded.
    def __add__(self, other):
        from divdr.autodiff.ops import forward_op

        if not isinstance(other, Tensor):
            other = Tensor(np.full(self.shape, float(other)))
        return forward_op("add", self, other)

    __radd__ = __add__

    def __sub__(self, other):
        from divdr.autodiff.ops import forward_op

        if not isinstance(other, Tensor):
            other = Tensor(np.full(self.shape, float(other)))
        return forward_op("sub", self, other)

    def __mul__(self, other):
        from divdr.autodiff.ops import forward_op

        if isinstance(other, Tensor):
            return forward_op("mul", self, other)
        return forward_op("mul_scalar", self, scalar=float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return self * -1.0

    def __getitem__(self, position: int):
        from divdr.autodiff.ops import forward_op

        return forward_op("index", self, position=int(position))


def backward(loss: Tensor) -> dict[int, np.ndarray]:
    """
    Reverse sweep over the active tape, starting from a scalar loss.
    Gradients are accumulated into .grad of every tracked tensor (zeros for
    tracked tensors the loss does not depend on), then the tape is consumed.
    """
    if loss.size != 1:
        raise ValueError(f"backward requires a scalar loss, got shape {loss.shape}")
    tape = get_tape()
    if not tape.entries or loss._tape is not tape or loss.node_id is None:
        raise ValueError("backward called on an empty tape (loss was not recorded)")
    grads: dict[int, np.ndarray] = {loss.node_id: np.ones_like(loss.data)}
    for entry in reversed(tape.entries):
        grad_out = grads.get(entry.output_id)
        if grad_out is None:
            continue
        input_grads = entry.op.backward(grad_out, entry.saved)
        for node_id, grad in zip(entry.input_ids, input_grads):
            if node_id is None or grad is None:
                continue
            if node_id in grads:
                grads[node_id] = grads[node_id] + grad
            else:
                grads[node_id] = grad
    for node_id, tensor in tape.tensors.items():
        if not tensor.requires_grad:
            continue
        grad = grads.get(node_id)
        if grad is None:
            grad = np.zeros_like(tensor.data)
        grad = np.asarray(grad, dtype=np.float64).reshape(tensor.shape)
        tensor.grad = grad if tensor.grad is None else tensor.grad + grad
    tape.clear()
    return grads
