import pytest
import numpy as np
from divdr.autodiff import (
    NonDeterministicError,
    ShapeError,
    Tensor,
    backward,
    forward_op,
    get_tape,
    grad_check,
    no_grad,
)
from divdr.autodiff.gradcheck import relative_error
from divdr.autodiff.ops import (
    concat,
    conv1x1,
    conv3x3,
    downsample2x,
    global_avg_pool,
    l2_norm,
    log_sum_exp,
    matmul,
    mean,
    relu,
    sigmoid,
    softmax_cross_entropy,
    stack,
    total,
    upsample2x,
)


def _param(rng, *shape, away_from_zero=False):
    data = rng.normal(size=shape)
    if away_from_zero:
        data = np.sign(data) * (0.2 + np.abs(data))
    return Tensor(data, requires_grad=True)


def _weighted(out: Tensor, rng) -> Tensor:
    """
    Reduce to a scalar through fixed random weights, so every output element
    contributes a distinct gradient.
    """
    return total(out * Tensor(rng.normal(size=out.shape)))


def _case_matmul(rng):
    a, b = _param(rng, 3, 4), _param(rng, 4, 2)
    weights = rng.normal(size=(3, 2))
    return (lambda: total(matmul(a, b) * Tensor(weights))), {"a": a, "b": b}


def _case_matvec(rng):
    a, b = _param(rng, 4), _param(rng, 4, 3)
    weights = rng.normal(size=3)
    return (lambda: total(matmul(a, b) * Tensor(weights))), {"a": a, "b": b}


def _case_conv3x3(rng):
    x, w, b = _param(rng, 2, 4, 4), _param(rng, 2, 2, 3, 3), _param(rng, 2)
    weights = rng.normal(size=(2, 4, 4))
    return (lambda: total(conv3x3(x, w, b) * Tensor(weights))), {"x": x, "w": w, "b": b}


def _case_conv1x1(rng):
    x, w, b = _param(rng, 3, 4, 4), _param(rng, 2, 3), _param(rng, 2)
    weights = rng.normal(size=(2, 4, 4))
    return (lambda: total(conv1x1(x, w, b) * Tensor(weights))), {"x": x, "w": w, "b": b}


def _case_add_sub(rng):
    a, b = _param(rng, 5), _param(rng, 5)
    weights = rng.normal(size=5)
    return (lambda: total((a + b - b * 0.5 - a * b) * Tensor(weights))), {"a": a, "b": b}


def _case_mul_single(rng):
    gate, features = _param(rng, 3), _param(rng, 2, 2, 2)
    weights = rng.normal(size=(2, 2, 2))
    return (lambda: total(gate[1] * features * Tensor(weights))), {"gate": gate, "features": features}


def _case_relu(rng):
    x = _param(rng, 6, away_from_zero=True)
    weights = rng.normal(size=6)
    return (lambda: total(relu(x) * Tensor(weights))), {"x": x}


def _case_sigmoid(rng):
    x = _param(rng, 6)
    weights = rng.normal(size=6)
    return (lambda: total(sigmoid(x) * Tensor(weights))), {"x": x}


def _case_mean(rng):
    x = _param(rng, 2, 3, 3)
    weights = rng.normal(size=(2, 3, 3))
    return (lambda: mean(x * Tensor(weights))), {"x": x}


def _case_pooling(rng):
    x = _param(rng, 2, 4, 4)
    weights = rng.normal(size=2)
    return (lambda: total(global_avg_pool(x) * Tensor(weights))), {"x": x}


def _case_resample(rng):
    x, y = _param(rng, 2, 2, 2), _param(rng, 2, 4, 4)
    up_weights, down_weights = rng.normal(size=(2, 4, 4)), rng.normal(size=(2, 2, 2))
    return (
        lambda: total(upsample2x(x) * Tensor(up_weights)) + total(downsample2x(y) * Tensor(down_weights))
    ), {"x": x, "y": y}


def _case_concat(rng):
    a, b = _param(rng, 1, 3, 3), _param(rng, 2, 3, 3)
    weights = rng.normal(size=(3, 3, 3))
    return (lambda: total(concat(a, b) * Tensor(weights))), {"a": a, "b": b}


def _case_stack_index(rng):
    x = _param(rng, 4)
    weights = rng.normal(size=3)
    return (lambda: total(stack(x[0], x[2], x[3]) * Tensor(weights))), {"x": x}


def _case_cross_entropy(rng):
    logits = _param(rng, 3, 3, 3)
    target = rng.integers(0, 3, size=(3, 3))
    return (lambda: softmax_cross_entropy(logits, target)), {"logits": logits}


def _case_l2_norm(rng):
    x = _param(rng, 5)
    return (lambda: l2_norm(x)), {"x": x}


def _case_log_sum_exp(rng):
    x = _param(rng, 4)
    return (lambda: log_sum_exp(x)), {"x": x}


CASES = [
    _case_matmul,
    _case_matvec,
    _case_conv3x3,
    _case_conv1x1,
    _case_add_sub,
    _case_mul_single,
    _case_relu,
    _case_sigmoid,
    _case_mean,
    _case_pooling,
    _case_resample,
    _case_concat,
    _case_stack_index,
    _case_cross_entropy,
    _case_l2_norm,
    _case_log_sum_exp,
]


@pytest.mark.parametrize("case", CASES, ids=lambda case: case.__name__[6:])
@pytest.mark.parametrize("seed", range(20))
def test_gradients_match_finite_differences(case, seed):
    f, params = case(np.random.default_rng(seed))
    report = grad_check(f, params, h=1e-5, tol=1e-4)
    assert report.passed, report.max_rel_error


def test_forward_values():
    assert relu(Tensor(2.0)).item() == 2.0
    assert relu(Tensor(-3.0)).item() == 0.0
    assert sigmoid(Tensor(0.0)).item() == 0.5
    a = Tensor([[1.0, 2.0], [3.0, 4.0]])
    np.testing.assert_array_equal(matmul(a, Tensor(np.eye(2))).data, a.data)


@pytest.mark.parametrize("value,expected", [(2.0, 1.0), (-1.0, 0.0)])
def test_relu_gradient(value, expected):
    x = Tensor(np.array([value]), requires_grad=True)
    backward(total(relu(x)))
    assert x.grad[0] == expected


def test_sigmoid_gradient_at_zero():
    x = Tensor(np.array([0.0]), requires_grad=True)
    backward(total(sigmoid(x)))
    assert x.grad[0] == pytest.approx(0.25)


def test_fan_out_accumulates():
    a = Tensor(np.array([1.0, -2.0, 3.0]), requires_grad=True)
    backward(total(a + a))
    np.testing.assert_array_equal(a.grad, [2.0, 2.0, 2.0])


def test_two_layer_perceptron(rng):
    x = Tensor(rng.normal(size=5))
    w1, b1 = _param(rng, 5, 6), _param(rng, 6)
    w2, b2 = _param(rng, 6, 1), _param(rng, 1)
    params = {"w1": w1, "b1": b1, "w2": w2, "b2": b2}
    report = grad_check(lambda: total(matmul(sigmoid(matmul(x, w1) + b1), w2) + b2), params)
    assert report.passed


def test_square_is_exact():
    x = Tensor(np.array(3.0), requires_grad=True)
    report = grad_check(lambda: x * x, {"x": x})
    assert report.worst < 1e-8
    assert x.grad == pytest.approx(6.0)


def test_dead_relu_gives_exact_zero():
    x = Tensor(-np.ones(4), requires_grad=True)
    report = grad_check(lambda: total(relu(x)), {"x": x})
    assert report.worst == 0.0
    np.testing.assert_array_equal(x.grad, np.zeros(4))


def test_untouched_tensor_gets_zero_gradient():
    a = Tensor(np.ones(2), requires_grad=True)
    b = Tensor(np.ones(2), requires_grad=True)
    get_tape().track(b)
    backward(total(a * 2.0))
    np.testing.assert_array_equal(b.grad, np.zeros(2))


def test_backward_rejects_non_scalar():
    a = Tensor(np.ones(3), requires_grad=True)
    with pytest.raises(ValueError, match="scalar"):
        backward(a * 2.0)


def test_backward_rejects_empty_tape():
    with pytest.raises(ValueError, match="empty tape"):
        backward(Tensor(1.0))


def test_shape_error_names_op():
    with pytest.raises(ShapeError, match="add.*\\(2,\\).*\\(3,\\)"):
        Tensor(np.ones(2)) + Tensor(np.ones(3))
    with pytest.raises(ShapeError, match="matmul"):
        matmul(Tensor(np.ones((2, 3))), Tensor(np.ones((2, 3))))
    with pytest.raises(ShapeError, match="downsample2x_avg"):
        downsample2x(Tensor(np.ones((1, 3, 3))))


def test_cross_entropy_rejects_out_of_range_labels():
    with pytest.raises(ValueError, match="labels"):
        softmax_cross_entropy(Tensor(np.zeros((2, 1, 1))), np.array([[2]]))


def test_unknown_op():
    with pytest.raises(ValueError, match="Unknown op"):
        forward_op("conv5x5", Tensor(1.0))


def test_no_grad_skips_recording():
    x = Tensor(np.ones(3), requires_grad=True)
    with no_grad():
        y = total(x * 2.0)
    assert len(get_tape()) == 0
    assert not y.requires_grad
    y = total(x * 2.0)
    assert len(get_tape()) == 2


def test_tape_is_consumed():
    x = Tensor(np.ones(3), requires_grad=True)
    backward(total(x * 2.0))
    assert len(get_tape()) == 0
    assert x.node_id is None


def test_grad_check_step_bounds():
    x = Tensor(np.array(1.0), requires_grad=True)
    for h in (0.0, -1e-5, 0.1):
        with pytest.raises(ValueError, match="step h"):
            grad_check(lambda: x * x, {"x": x}, h=h)


def test_grad_check_detects_nondeterminism():
    noise = np.random.default_rng(1)
    x = Tensor(np.array(1.0), requires_grad=True)
    with pytest.raises(NonDeterministicError):
        grad_check(lambda: x * float(noise.normal()), {"x": x})


def test_relative_error_floor():
    np.testing.assert_array_equal(relative_error(np.zeros(2), np.zeros(2)), [0.0, 0.0])
    assert relative_error(np.array([1e-9]), np.array([0.0]))[0] == pytest.approx(1e-3)


def test_deterministic_forward(rng):
    x, w, b = _param(rng, 2, 4, 4), _param(rng, 3, 2, 3, 3), _param(rng, 3)
    first = conv3x3(x, w, b).data
    second = conv3x3(x, w, b).data
    assert first.tobytes() == second.tobytes()
