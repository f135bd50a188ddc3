"""
Differentiable operation kinds. Each op has a forward rule over plain arrays,
returning the output plus whatever the backward rule needs, and a backward rule
mapping the output gradient to one gradient per input.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view
from scipy.special import expit, logsumexp, log_softmax, softmax
from divdr.autodiff.tensor import Tensor, ShapeError, get_tape, is_grad_enabled


class Op:
    kind: str = ""

    def forward(self, *arrays, **attrs):
        raise NotImplementedError()

    def backward(self, grad, saved):
        raise NotImplementedError()


def _expect_same(kind: str, a: np.ndarray, b: np.ndarray):
    if a.shape != b.shape:
        raise ShapeError(kind, a.shape, b.shape)


def _expect_ndim(kind: str, array: np.ndarray, ndim: int, what: str):
    if array.ndim != ndim:
        raise ShapeError(kind, array.shape, (None,) * ndim, f"{what} must be {ndim}-d")


class MatMul(Op):
    kind = "matmul"

    def forward(self, a, b):
        if b.ndim != 2 or a.ndim not in (1, 2) or a.shape[-1] != b.shape[0]:
            raise ShapeError(self.kind, a.shape, b.shape)
        return a @ b, (a, b)

    def backward(self, grad, saved):
        a, b = saved
        grad_a = grad @ b.T
        grad_b = np.outer(a, grad) if a.ndim == 1 else a.T @ grad
        return grad_a, grad_b


def _im2col3x3(x: np.ndarray) -> np.ndarray:
    channels, height, width = x.shape
    padded = np.pad(x, ((0, 0), (1, 1), (1, 1)))
    windows = sliding_window_view(padded, (3, 3), axis=(1, 2))
    return windows.transpose(0, 3, 4, 1, 2).reshape(channels * 9, height * width)


class Conv3x3(Op):
    """
    3x3 convolution, stride 1, zero padding 1 (spatial shape preserved).
    x: (C_in, H, W), w: (C_out, C_in, 3, 3), b: (C_out,)
    """

    kind = "conv3x3"

    def forward(self, x, w, b):
        _expect_ndim(self.kind, x, 3, "input")
        if w.ndim != 4 or w.shape[2:] != (3, 3) or w.shape[1] != x.shape[0]:
            raise ShapeError(self.kind, x.shape, w.shape, "weight must be (C_out, C_in, 3, 3)")
        if b.shape != (w.shape[0],):
            raise ShapeError(self.kind, w.shape, b.shape, "bias must be (C_out,)")
        _, height, width = x.shape
        cols = _im2col3x3(x)
        out = (w.reshape(w.shape[0], -1) @ cols).reshape(w.shape[0], height, width)
        out += b[:, None, None]
        return out, (cols, w, x.shape)

    def backward(self, grad, saved):
        cols, w, x_shape = saved
        channels, height, width = x_shape
        grad2 = grad.reshape(w.shape[0], height * width)
        grad_w = (grad2 @ cols.T).reshape(w.shape)
        grad_b = grad2.sum(axis=1)
        dcols = (w.reshape(w.shape[0], -1).T @ grad2).reshape(channels, 3, 3, height, width)
        grad_padded = np.zeros((channels, height + 2, width + 2))
        for ky in range(3):
            for kx in range(3):
                grad_padded[:, ky : ky + height, kx : kx + width] += dcols[:, ky, kx]
        return grad_padded[:, 1:-1, 1:-1], grad_w, grad_b


class Conv1x1(Op):
    kind = "conv1x1"

    def forward(self, x, w, b):
        _expect_ndim(self.kind, x, 3, "input")
        if w.ndim != 2 or w.shape[1] != x.shape[0]:
            raise ShapeError(self.kind, x.shape, w.shape, "weight must be (C_out, C_in)")
        if b.shape != (w.shape[0],):
            raise ShapeError(self.kind, w.shape, b.shape, "bias must be (C_out,)")
        flat = x.reshape(x.shape[0], -1)
        out = (w @ flat).reshape(w.shape[0], *x.shape[1:]) + b[:, None, None]
        return out, (flat, w, x.shape)

    def backward(self, grad, saved):
        flat, w, x_shape = saved
        grad2 = grad.reshape(w.shape[0], -1)
        return (w.T @ grad2).reshape(x_shape), grad2 @ flat.T, grad2.sum(axis=1)


class Add(Op):
    kind = "add"

    def forward(self, a, b):
        _expect_same(self.kind, a, b)
        return a + b, None

    def backward(self, grad, saved):
        return grad, grad


class Sub(Op):
    kind = "sub"

    def forward(self, a, b):
        _expect_same(self.kind, a, b)
        return a - b, None

    def backward(self, grad, saved):
        return grad, -grad


class Mul(Op):
    """
    Elementwise product; one operand may be a single element (a gate scaling a
    feature map).
    """

    kind = "mul"

    def forward(self, a, b):
        if a.shape != b.shape and a.size != 1 and b.size != 1:
            raise ShapeError(self.kind, a.shape, b.shape)
        return a * b, (a, b)

    def backward(self, grad, saved):
        a, b = saved
        grad_a = grad * b
        grad_b = grad * a
        if a.shape != grad.shape:
            grad_a = np.sum(grad_a).reshape(a.shape)
        if b.shape != grad.shape:
            grad_b = np.sum(grad_b).reshape(b.shape)
        return grad_a, grad_b


class MulScalar(Op):
    kind = "mul_scalar"

    def forward(self, x, scalar: float = 1.0):
        return x * scalar, scalar

    def backward(self, grad, saved):
        return (grad * saved,)


class Relu(Op):
    kind = "relu"

    def forward(self, x):
        mask = x > 0
        return np.where(mask, x, 0.0), mask

    def backward(self, grad, saved):
        return (grad * saved,)


class Sigmoid(Op):
    kind = "sigmoid"

    def forward(self, x):
        out = expit(x)
        return out, out

    def backward(self, grad, saved):
        return (grad * saved * (1.0 - saved),)


class Mean(Op):
    kind = "mean"

    def forward(self, x):
        return np.asarray(np.mean(x)), x.shape

    def backward(self, grad, saved):
        size = int(np.prod(saved)) if saved else 1
        return (np.full(saved, float(grad) / size),)


class Sum(Op):
    kind = "sum"

    def forward(self, x):
        return np.asarray(np.sum(x)), x.shape

    def backward(self, grad, saved):
        return (np.full(saved, float(grad)),)


class GlobalAvgPool(Op):
    kind = "global_avg_pool"

    def forward(self, x):
        _expect_ndim(self.kind, x, 3, "input")
        return x.mean(axis=(1, 2)), x.shape

    def backward(self, grad, saved):
        _, height, width = saved
        return (np.broadcast_to(grad[:, None, None] / (height * width), saved).copy(),)


class Upsample2xNearest(Op):
    kind = "upsample2x_nearest"

    def forward(self, x):
        _expect_ndim(self.kind, x, 3, "input")
        return x.repeat(2, axis=1).repeat(2, axis=2), x.shape

    def backward(self, grad, saved):
        channels, height, width = saved
        return (grad.reshape(channels, height, 2, width, 2).sum(axis=(2, 4)),)


class Downsample2xAvg(Op):
    kind = "downsample2x_avg"

    def forward(self, x):
        _expect_ndim(self.kind, x, 3, "input")
        channels, height, width = x.shape
        if height % 2 or width % 2:
            raise ShapeError(self.kind, x.shape, (channels, height / 2, width / 2), "odd spatial size")
        return x.reshape(channels, height // 2, 2, width // 2, 2).mean(axis=(2, 4)), None

    def backward(self, grad, saved):
        return (grad.repeat(2, axis=1).repeat(2, axis=2) / 4.0,)


class ConcatChannels(Op):
    kind = "concat_channels"

    def forward(self, *xs):
        first = xs[0]
        for x in xs[1:]:
            if x.ndim != first.ndim or x.shape[1:] != first.shape[1:]:
                raise ShapeError(self.kind, first.shape, x.shape)
        sizes = [x.shape[0] for x in xs]
        return np.concatenate(xs, axis=0), np.cumsum(sizes)[:-1]

    def backward(self, grad, saved):
        return tuple(np.split(grad, saved, axis=0))


class Stack(Op):
    kind = "stack"

    def forward(self, *xs):
        for x in xs:
            if x.size != 1:
                raise ShapeError(self.kind, (), x.shape, "stack takes single element tensors")
        return np.array([float(x.reshape(-1)[0]) for x in xs]), tuple(x.shape for x in xs)

    def backward(self, grad, saved):
        return tuple(np.asarray(grad[i]).reshape(shape) for i, shape in enumerate(saved))


class Index(Op):
    kind = "index"

    def forward(self, x, position: int = 0):
        _expect_ndim(self.kind, x, 1, "input")
        if not -x.shape[0] <= position < x.shape[0]:
            raise ShapeError(self.kind, x.shape, (position,), "index out of range")
        return np.asarray(x[position]), (x.shape, position)

    def backward(self, grad, saved):
        shape, position = saved
        out = np.zeros(shape)
        out[position] = float(grad)
        return (out,)


class SoftmaxCrossEntropy(Op):
    """
    Mean per-pixel cross-entropy of logits (K, H, W) against integer labels (H, W).
    """

    kind = "softmax_cross_entropy"

    def forward(self, logits, target=None):
        _expect_ndim(self.kind, logits, 3, "logits")
        labels = np.asarray(target)
        if labels.shape != logits.shape[1:]:
            raise ShapeError(self.kind, logits.shape, labels.shape, "target must be (H, W)")
        if labels.size and (labels.min() < 0 or labels.max() >= logits.shape[0]):
            raise ValueError(
                f"{self.kind}: labels must lie in [0, {logits.shape[0]}), "
                f"got range [{labels.min()}, {labels.max()}]"
            )
        labels = labels.astype(np.int64)
        log_probs = log_softmax(logits, axis=0)
        picked = np.take_along_axis(log_probs, labels[None], axis=0)
        return np.asarray(-picked.mean()), (log_probs, labels)

    def backward(self, grad, saved):
        log_probs, labels = saved
        probs = np.exp(log_probs)
        np.put_along_axis(
            probs, labels[None], np.take_along_axis(probs, labels[None], axis=0) - 1.0, axis=0
        )
        return (probs * (float(grad) / labels.size),)


class L2Norm(Op):
    kind = "l2_norm"

    def forward(self, x):
        norm = np.sqrt(np.sum(x * x))
        return np.asarray(norm), (x, norm)

    def backward(self, grad, saved):
        x, norm = saved
        if norm == 0.0:
            return (np.zeros_like(x),)
        return (x * (float(grad) / norm),)


class LogSumExp(Op):
    kind = "log_sum_exp"

    def forward(self, x):
        _expect_ndim(self.kind, x, 1, "input")
        if x.shape[0] == 0:
            raise ShapeError(self.kind, x.shape, (1,), "empty input")
        return np.asarray(logsumexp(x)), x

    def backward(self, grad, saved):
        return (softmax(saved) * float(grad),)


OPS: dict[str, Op] = {
    op.kind: op
    for op in (
        MatMul(),
        Conv3x3(),
        Conv1x1(),
        Add(),
        Sub(),
        Mul(),
        MulScalar(),
        Relu(),
        Sigmoid(),
        Mean(),
        Sum(),
        GlobalAvgPool(),
        Upsample2xNearest(),
        Downsample2xAvg(),
        ConcatChannels(),
        Stack(),
        Index(),
        SoftmaxCrossEntropy(),
        L2Norm(),
        LogSumExp(),
    )
}


def forward_op(kind: str, *inputs: Tensor, **attrs) -> Tensor:
    """
    Evaluate one op and record it on the active tape when any input requires grad.
    """
    op = OPS.get(kind)
    if op is None:
        raise ValueError(f"Unknown op kind: {kind}")
    if not inputs:
        raise ValueError(f"{kind}: at least one input is required")
    out, saved = op.forward(*(t.data for t in inputs), **attrs)
    requires_grad = is_grad_enabled() and any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=requires_grad)
    if requires_grad:
        get_tape().record(kind, op, inputs, result, saved)
    return result


# Thin named wrappers, used by the lattice and the loss terms.
def matmul(a: Tensor, b: Tensor) -> Tensor:
    return forward_op("matmul", a, b)


def conv3x3(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return forward_op("conv3x3", x, w, b)


def conv1x1(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    return forward_op("conv1x1", x, w, b)


def relu(x: Tensor) -> Tensor:
    return forward_op("relu", x)


def sigmoid(x: Tensor) -> Tensor:
    return forward_op("sigmoid", x)


def mean(x: Tensor) -> Tensor:
    return forward_op("mean", x)


def total(x: Tensor) -> Tensor:
    return forward_op("sum", x)


def global_avg_pool(x: Tensor) -> Tensor:
    return forward_op("global_avg_pool", x)


def upsample2x(x: Tensor, times: int = 1) -> Tensor:
    for _ in range(times):
        x = forward_op("upsample2x_nearest", x)
    return x


def downsample2x(x: Tensor, times: int = 1) -> Tensor:
    for _ in range(times):
        x = forward_op("downsample2x_avg", x)
    return x


def concat(*xs: Tensor) -> Tensor:
    return forward_op("concat_channels", *xs)


def stack(*xs: Tensor) -> Tensor:
    return forward_op("stack", *xs)


def softmax_cross_entropy(logits: Tensor, target: np.ndarray) -> Tensor:
    return forward_op("softmax_cross_entropy", logits, target=target)


def l2_norm(x: Tensor) -> Tensor:
    return forward_op("l2_norm", x)


def log_sum_exp(x: Tensor) -> Tensor:
    return forward_op("log_sum_exp", x)
