"""Dense tensor arithmetic with reverse-mode differentiation."""

from .gradcheck import FDReport, finite_difference_check, finite_difference_spot_check
from .ops import (
    add,
    concat,
    exp,
    gather_rows,
    gelu,
    l2_normalize,
    layernorm,
    log,
    masked_fill,
    matmul,
    mul,
    reshape,
    sigmoid,
    smul,
    softmax,
    sub,
    tmean,
    transpose,
    tsum,
)
from .tape import Gradients, Tape, Tensor, constant

__all__ = [
    "FDReport", "finite_difference_check", "finite_difference_spot_check",
    "Tape", "Tensor", "Gradients", "constant",
    "matmul", "add", "sub", "mul", "smul", "exp", "log", "sigmoid", "gelu",
    "softmax", "layernorm", "tsum", "tmean", "reshape", "transpose",
    "concat", "gather_rows", "masked_fill", "l2_normalize",
]
