from .tensor import (
    Matrix,
    Precision,
    RopeConfig,
    Vector,
    as_precision,
    attend,
    causal_mask,
    ensure_finite,
    matmul,
    rope_apply,
    softmax_rows,
)

__all__ = (
    "Matrix",
    "Precision",
    "RopeConfig",
    "Vector",
    "as_precision",
    "attend",
    "causal_mask",
    "ensure_finite",
    "matmul",
    "rope_apply",
    "softmax_rows",
)
