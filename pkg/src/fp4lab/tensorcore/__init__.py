"""Dense tensors with reverse-mode autodiff and quantization-aware GEMMs."""

from .gradcheck import grad_check
from .ops import (
    GemmTap,
    absval,
    add,
    as_tensor,
    bmm,
    causal_softmax,
    concat,
    cross_entropy,
    embedding,
    gelu,
    matmul,
    mul,
    narrow,
    neg,
    quant_matmul,
    reshape,
    rmsnorm,
    row_normalize,
    silu,
    softmax,
    sub,
    transpose,
    tsum,
)
from .tensor import (
    Tape,
    Tensor,
    _register_operators,
    active_tape,
    default_dtype,
    ensure_finite,
    set_default_dtype,
)

_register_operators()

__all__ = [
    "GemmTap",
    "Tape",
    "Tensor",
    "active_tape",
    "absval",
    "add",
    "as_tensor",
    "bmm",
    "causal_softmax",
    "concat",
    "cross_entropy",
    "default_dtype",
    "embedding",
    "ensure_finite",
    "gelu",
    "grad_check",
    "matmul",
    "mul",
    "narrow",
    "neg",
    "quant_matmul",
    "reshape",
    "rmsnorm",
    "row_normalize",
    "set_default_dtype",
    "silu",
    "softmax",
    "sub",
    "transpose",
    "tsum",
]
