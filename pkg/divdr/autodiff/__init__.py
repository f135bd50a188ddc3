from divdr.autodiff.tensor import (  # noqa: F401
    Tensor,
    Tape,
    ShapeError,
    backward,
    get_tape,
    is_grad_enabled,
    no_grad,
)
from divdr.autodiff.ops import OPS, forward_op  # noqa: F401
from divdr.autodiff.gradcheck import (  # noqa: F401
    GradCheckReport,
    NonDeterministicError,
    grad_check,
)
