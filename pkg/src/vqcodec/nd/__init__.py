"""Deterministic tensor core: autodiff, convolutions, LSTM, grad checking."""

from vqcodec.nd.conv import conv1d, conv2d, conv_transpose1d
from vqcodec.nd.gradcheck import GradCheckReport, grad_check, numerical_gradient
from vqcodec.nd.recurrent import lstm_forward
from vqcodec.nd.tensor import (
    Parameter,
    Tape,
    Tensor,
    absolute,
    add,
    backward,
    div,
    exp,
    frame,
    gather_rows,
    l2_normalize,
    leaky_relu,
    log,
    matmul,
    maximum_scalar,
    mean,
    mul,
    narrow,
    no_grad,
    override_value,
    pad_reflect1d,
    power,
    reshape,
    safe_sqrt,
    set_check_finite,
    set_strict_domain,
    sigmoid,
    sin,
    snake,
    stop_gradient,
    sub,
    sum,
    tanh,
    transpose,
)

__all__ = [
    "GradCheckReport",
    "Parameter",
    "Tape",
    "Tensor",
    "absolute",
    "add",
    "backward",
    "conv1d",
    "conv2d",
    "conv_transpose1d",
    "div",
    "exp",
    "frame",
    "gather_rows",
    "grad_check",
    "l2_normalize",
    "leaky_relu",
    "log",
    "lstm_forward",
    "matmul",
    "maximum_scalar",
    "mean",
    "mul",
    "narrow",
    "no_grad",
    "numerical_gradient",
    "override_value",
    "pad_reflect1d",
    "power",
    "reshape",
    "safe_sqrt",
    "set_check_finite",
    "set_strict_domain",
    "sigmoid",
    "sin",
    "snake",
    "stop_gradient",
    "sub",
    "sum",
    "tanh",
    "transpose",
]
