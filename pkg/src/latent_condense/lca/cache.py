from __future__ import annotations

from dataclasses import dataclass
from typing import Tuple

import numpy as np
from numpy.typing import NDArray

from ..core import Matrix
from ..mla import ModelConfig
from .condense import GroupSummary


@dataclass(frozen=True)
class LatentCache:
    """Decode-time state: condensed representatives plus a full-fidelity buffer.

    A cache is a value. Every engine operation returns a successor and leaves its
    input untouched.

    Attributes:
        reps (Tuple[GroupSummary, ...]): Condensed groups, oldest first.
        buffer_c (Matrix): Recent C^KV rows.
        buffer_kr (Matrix): Matching rotated K^R rows.
        buffer_positions (NDArray[np.int64]): Token positions of the buffer rows.
        buffer_queries (Tuple[Matrix, ...]): Per head, the most recent full query rows.
        total_tokens (int): Tokens absorbed so far.
    """

    reps: Tuple[GroupSummary, ...]
    buffer_c: Matrix
    buffer_kr: Matrix
    buffer_positions: NDArray[np.int64]
    buffer_queries: Tuple[Matrix, ...]
    total_tokens: int

    @classmethod
    def empty(
        cls, cfg: ModelConfig, dtype: np.dtype = np.dtype(np.float64)
    ) -> "LatentCache":
        return cls(
            reps=(),
            buffer_c=np.zeros((0, cfg.d_c), dtype=dtype),
            buffer_kr=np.zeros((0, cfg.d_r), dtype=dtype),
            buffer_positions=np.zeros(0, dtype=np.int64),
            buffer_queries=tuple(
                np.zeros((0, cfg.d_k), dtype=dtype) for _ in range(cfg.n_heads)
            ),
            total_tokens=0,
        )

    @property
    def buffer_len(self) -> int:
        return int(self.buffer_c.shape[0])

    @property
    def m(self) -> int:
        return len(self.reps)

    @property
    def next_position(self) -> int:
        return self.total_tokens

    def rep_latents(self) -> Matrix:
        """Representative latents stacked as an (m, d_c) matrix."""
        if not self.reps:
            return self.buffer_c[:0]
        return np.stack([rep.c_rep for rep in self.reps])

    def rep_rotary(self) -> Matrix:
        """Representative rotary keys stacked as an (m, d_r) matrix."""
        if not self.reps:
            return self.buffer_kr[:0]
        return np.stack([rep.k_r_rep for rep in self.reps])


def fused_key_count(cache: LatentCache) -> int:
    """Keys a query sees against this cache: every representative and buffered token."""
    return cache.m + cache.buffer_len
