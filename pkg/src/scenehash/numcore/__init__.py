"""Minimal dense-tensor engine: float64 forward ops, reverse-mode gradients."""

from .tensor import ComputeGraph, ShapeError, Tensor, as_tensor, backward, constant
from .ops import (
    DegenerateMaskError,
    absolute,
    add,
    add_bias,
    add_scalar,
    bmm,
    concat,
    exp,
    gather_rows,
    im2col,
    l2_normalize_rows,
    layer_norm,
    log,
    matmul,
    mean_all,
    mean_axis,
    mul,
    neg,
    relu,
    reshape,
    scale,
    sigmoid,
    sign_st,
    slice_axis,
    softmax_rows,
    sub,
    sum_all,
    sum_axis,
    tanh,
    transpose,
)
from .checkpoint import CheckpointError, load_params, save_params
from .gradcheck import check_all_ops, grad_check

__all__ = [
    "ComputeGraph", "ShapeError", "Tensor", "as_tensor", "backward", "constant",
    "DegenerateMaskError", "absolute", "add", "add_bias", "add_scalar", "bmm",
    "concat", "exp", "gather_rows", "im2col", "l2_normalize_rows", "layer_norm",
    "log", "matmul", "mean_all", "mean_axis", "mul", "neg", "relu", "reshape",
    "scale", "sigmoid", "sign_st", "slice_axis", "softmax_rows", "sub",
    "sum_all", "sum_axis", "tanh", "transpose",
    "CheckpointError", "load_params", "save_params",
    "check_all_ops", "grad_check",
]
