"""framecast: video frame prediction with factorized attention on a
self-contained numpy autodiff engine."""

from .tensor import (
    ShapeError,
    Tensor,
    add,
    concat,
    expand,
    gelu,
    layer_norm,
    masked_fill,
    matmul,
    mul,
    narrow,
    neg,
    no_grad,
    permute,
    reshape,
    scale,
    sigmoid,
    softmax,
    sub,
    take,
)
from .conv import conv2d, conv_transpose2d, pad2d

__version__ = "0.1.0"

__all__ = [
    "ShapeError",
    "Tensor",
    "no_grad",
    "add",
    "sub",
    "mul",
    "scale",
    "neg",
    "matmul",
    "permute",
    "reshape",
    "expand",
    "concat",
    "narrow",
    "take",
    "softmax",
    "masked_fill",
    "layer_norm",
    "gelu",
    "sigmoid",
    "conv2d",
    "conv_transpose2d",
    "pad2d",
    "__version__",
]
