from .core import (
    BackwardError,
    ComputeTape,
    NonFiniteError,
    ShapeError,
    Tensor,
    as_tensor,
    backward,
    no_grad,
)
from .gradcheck import GradCheckReport, NonDeterministicError, grad_check, relative_error
from .ops import (
    ACTIVATIONS,
    activation,
    add,
    concat,
    conv_channels,
    cosine_similarity_rows,
    inject_fault,
    linear,
    matmul,
    matmul_batch,
    moveaxis,
    mul,
    reduce_mean,
    reduce_sum,
    reshape,
    row_norm,
    sigmoid,
    slice_axis,
    softmax_rows,
    sub,
    swapaxes,
    transpose,
)

__all__ = [
    "ACTIVATIONS",
    "BackwardError",
    "ComputeTape",
    "GradCheckReport",
    "NonDeterministicError",
    "NonFiniteError",
    "ShapeError",
    "Tensor",
    "activation",
    "add",
    "as_tensor",
    "backward",
    "concat",
    "conv_channels",
    "cosine_similarity_rows",
    "grad_check",
    "inject_fault",
    "linear",
    "matmul",
    "matmul_batch",
    "moveaxis",
    "mul",
    "no_grad",
    "reduce_mean",
    "reduce_sum",
    "relative_error",
    "reshape",
    "row_norm",
    "sigmoid",
    "slice_axis",
    "softmax_rows",
    "sub",
    "swapaxes",
    "transpose",
]
