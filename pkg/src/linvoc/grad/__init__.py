from .check import grad_check
from .checkpoint import load_arrays, save_arrays
from .tensor import (
    GradError,
    Tensor,
    add,
    avg_pool1d,
    backward,
    concat,
    conv1d,
    conv2d,
    default_dtype,
    detach,
    exp,
    gelu,
    layer_norm,
    leaky_relu,
    log,
    matmul,
    mean,
    mul,
    neg,
    no_grad,
    pad1d,
    precision,
    reciprocal,
    reshape,
    slice_,
    softmax,
    sqrt,
    square,
    stack,
    sum_,
    swapaxes,
    tensor,
    track_kinks,
    transpose,
)

__all__ = [name for name in dir() if not name.startswith("_")]
