"""Numerical core: tensors, reverse-mode autodiff, layers, verification."""

from .tensor import (
    Tensor,
    add,
    as_tensor,
    backward,
    bilinear_resize,
    bilinear_resize_raw,
    bilinear_upsample,
    clamp,
    clamp_min,
    concat,
    conv2d,
    default_dtype,
    div,
    exp,
    flip,
    log,
    make_op,
    matmul,
    max_pool2d,
    mul,
    narrow,
    neg,
    no_grad,
    ones,
    parameter,
    pointwise,
    pow_const,
    precision,
    profile_macs_start,
    profile_macs_stop,
    randn,
    relu,
    reshape,
    set_default_dtype,
    sigmoid,
    softplus,
    sqrt,
    sub,
    tmean,
    topo_order,
    transpose,
    tsum,
    zeros,
)
from .fdcheck import finite_diff_check
from .io import FormatError, TENSOR_MAGIC, load_tensor_file, read_tensor, save_tensor_file, write_tensor
from . import nn

__all__ = [name for name in dir() if not name.startswith("_")]
