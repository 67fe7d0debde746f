"""Small reverse-mode autodiff on numpy arrays, sized for the rendering pipeline."""

from .conv import conv2d, conv3d, conv_transpose2d, conv_transpose3d
from .gradcheck import check_gradients, numerical_gradient, relative_error
from .nn import Conv, Linear, Module, parameter
from .ops import (
    abs, add, broadcast_to, concat, cos, cumsum, div, exp, index, linear, log, matmul,
    maximum, mean, mul, neg, relu, reshape, sigmoid, sin, softmax, softplus, square, stack,
    sub, sum, transpose, upsample2x,
)
from .optim import Adam, AdamState, TrainingDivergence, adam_step
from .sample import trilinear_sample
from .tensor import (
    ContractError, ShapeError, Tensor, as_tensor, get_default_dtype, is_grad_enabled,
    no_grad, precision, set_default_dtype,
)


def backward(loss):
    """Populate ``.grad`` on every leaf reachable from scalar ``loss``."""
    loss.backward()
