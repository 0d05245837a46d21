"""Dense numeric kernel shared by the attention paths.

Matrices are plain row-major ``numpy`` arrays. Every public operation returns a
fresh array and checks that the result is finite.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from typing import Any, Optional, Sequence

import numpy as np
from numpy.typing import NDArray

from ..errors import ConfigError, NumericError, ShapeError

Matrix = NDArray[np.floating[Any]]
Vector = NDArray[np.floating[Any]]


class Precision(str, Enum):
    F64 = "f64"
    F32 = "f32"

    @property
    def dtype(self) -> np.dtype:
        return np.dtype(np.float64) if self is Precision.F64 else np.dtype(np.float32)

    @property
    def itemsize(self) -> int:
        return self.dtype.itemsize


def as_precision(array: Any, precision: Precision = Precision.F64) -> Matrix:
    """Cast an array-like to the floating dtype of ``precision``."""
    return np.asarray(array, dtype=precision.dtype)


def ensure_finite(m: Matrix) -> Matrix:
    """Raise NumericError if ``m`` holds NaN or Inf entries.

    Returns:
        Matrix: ``m`` itself, so the call can wrap a return value.
    """
    if not np.all(np.isfinite(m)):
        raise NumericError(f"non-finite entries in {m.shape} result")
    return m


def _require_matrix(m: Matrix, name: str) -> None:
    if np.ndim(m) != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {np.shape(m)}")


def matmul(a: Matrix, b: Matrix) -> Matrix:
    """Standard matrix product.

    Args:
        a (Matrix): Left operand, shape (n, k).
        b (Matrix): Right operand, shape (k, p).

    Raises:
        ShapeError: If the inner dimensions disagree.

    Returns:
        Matrix: The (n, p) product.
    """
    _require_matrix(a, "a")
    _require_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape} by {b.shape}")
    return ensure_finite(a @ b)


def softmax_rows(m: Matrix) -> Matrix:
    """Row-wise softmax, stabilised by subtracting each row's maximum.

    Args:
        m (Matrix): Finite logits, at least one row and one column.

    Returns:
        Matrix: Nonnegative rows that sum to one.
    """
    _require_matrix(m, "m")
    if m.size == 0:
        raise ShapeError("softmax_rows needs a nonempty matrix")
    shifted = m - m.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return ensure_finite(e / e.sum(axis=1, keepdims=True))


@dataclass(frozen=True)
class RopeConfig:
    """Rotary embedding parameters: rotary width and frequency base."""

    dim: int
    base: float = 10000.0

    def __post_init__(self) -> None:
        if self.dim <= 0 or self.dim % 2:
            raise ConfigError(
                f"rotary dim must be a positive even number, got {self.dim}"
            )
        if not self.base > 1:
            raise ConfigError(f"rotary base must be > 1, got {self.base}")

    def inv_freq(self) -> NDArray[np.float64]:
        pairs = np.arange(self.dim // 2, dtype=np.float64)
        return self.base ** (-2.0 * pairs / self.dim)


def rope_apply(v: Matrix, positions: Sequence[int], cfg: RopeConfig) -> Matrix:
    """Rotate coordinate pairs (2p, 2p+1) of every row by position × base^(-2p/dim).

    Args:
        v (Matrix): Rows to rotate, shape (L, cfg.dim).
        positions (Sequence[int]): One token index per row.
        cfg (RopeConfig): Rotary parameters.

    Returns:
        Matrix: The rotated rows, same dtype as ``v``.
    """
    _require_matrix(v, "v")
    if v.shape[1] != cfg.dim:
        raise ShapeError(f"rope expects {cfg.dim} columns, got {v.shape[1]}")
    pos = np.asarray(positions, dtype=np.float64).reshape(-1)
    if pos.shape[0] != v.shape[0]:
        raise ShapeError(f"{pos.shape[0]} positions for {v.shape[0]} rows")

    angles = pos[:, None] * cfg.inv_freq()[None, :]
    cos = np.cos(angles).astype(v.dtype)
    sin = np.sin(angles).astype(v.dtype)
    x0 = v[:, 0::2]
    x1 = v[:, 1::2]
    out = np.empty_like(v)
    out[:, 0::2] = x0 * cos - x1 * sin
    out[:, 1::2] = x0 * sin + x1 * cos
    return ensure_finite(out)


def attend(
    q: Matrix,
    k: Matrix,
    v: Matrix,
    scale_dim: int,
    visible: Optional[NDArray[np.bool_]] = None,
) -> Matrix:
    """Scaled dot-product attention of every query row over the key rows.

    Args:
        q (Matrix): Queries, shape (n, d_k).
        k (Matrix): Keys, shape (s, d_k).
        v (Matrix): Values, shape (s, d_v).
        scale_dim (int): Logits are divided by sqrt(scale_dim).
        visible (NDArray[bool], optional): (n, s) mask, True where query i may
            see key j. Defaults to None (everything visible).

    Returns:
        Matrix: Attention output, shape (n, d_v). A query with no visible key
        gets a zero row.
    """
    if k.shape[0] != v.shape[0]:
        raise ShapeError(f"{k.shape[0]} keys but {v.shape[0]} values")
    logits = matmul(q, k.T) / math.sqrt(scale_dim)
    if visible is None:
        return matmul(softmax_rows(logits), v)

    if visible.shape != logits.shape:
        raise ShapeError(f"mask {visible.shape} does not match logits {logits.shape}")
    any_visible = visible.any(axis=1, keepdims=True)
    row_max = np.where(visible, logits, -np.inf).max(axis=1, keepdims=True)
    row_max = np.where(any_visible, row_max, 0.0)
    e = np.where(visible, np.exp(np.where(visible, logits - row_max, 0.0)), 0.0)
    denom = e.sum(axis=1, keepdims=True)
    weights = e / np.where(denom > 0, denom, 1.0)
    return matmul(weights.astype(v.dtype), v)


def causal_mask(n_queries: int, n_keys: Optional[int] = None) -> NDArray[np.bool_]:
    """Lower-triangular visibility: key j visible to query i iff j <= i."""
    n_keys = n_queries if n_keys is None else n_keys
    return np.tril(np.ones((n_queries, n_keys), dtype=bool))
