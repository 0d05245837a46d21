"""Dual-path condensation for grouped-query attention.

Without a latent space the two paths act on the per-kv-head keys and values:
the whole rotated key of the highest-weight member is selected, the values are
pooled with the importance weights.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, replace
from typing import Iterator, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from ..core import (
    Matrix,
    RopeConfig,
    Vector,
    attend,
    causal_mask,
    matmul,
    rope_apply,
    softmax_rows,
)
from ..errors import ConfigError, ShapeError
from ..lca import Fallback, LcaConfig, MaskPolicy, fused_visibility, partition

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class GqaConfig:
    """GQA layer dimensions plus the condensation hyperparameters."""

    d: int
    n_q_heads: int
    n_kv_heads: int
    d_head: int
    g: int = 16
    w: int = 1024
    n_summary_queries: int = 16
    mask_policy: MaskPolicy = MaskPolicy.REP_CAUSAL
    rope: Optional[RopeConfig] = None

    def __post_init__(self) -> None:
        for name in ("d", "n_q_heads", "n_kv_heads", "d_head"):
            if getattr(self, name) <= 0:
                raise ConfigError(f"{name} must be positive, got {getattr(self, name)}")
        if self.n_q_heads % self.n_kv_heads:
            raise ConfigError(
                f"{self.n_q_heads} query heads do not split"
                f" over {self.n_kv_heads} kv heads"
            )
        if self.rope is None:
            object.__setattr__(self, "rope", RopeConfig(dim=self.d_head))
        elif self.rope.dim != self.d_head:
            raise ConfigError(
                f"rope dim {self.rope.dim} differs from d_head={self.d_head}"
            )
        # validates g, w, n_summary_queries and the mask policy
        object.__setattr__(self, "mask_policy", self.lca.mask_policy)

    @property
    def lca(self) -> LcaConfig:
        return LcaConfig(
            g=self.g,
            w=self.w,
            n_summary_queries=self.n_summary_queries,
            mask_policy=self.mask_policy,
        )

    @property
    def heads_per_kv(self) -> int:
        return self.n_q_heads // self.n_kv_heads

    @property
    def rotary(self) -> RopeConfig:
        assert self.rope is not None
        return self.rope


@dataclass(frozen=True)
class GqaWeights:
    w_q: Matrix
    w_k: Matrix
    w_v: Matrix

    @staticmethod
    def shapes(cfg: GqaConfig) -> Tuple[Tuple[int, int], ...]:
        return (
            (cfg.d, cfg.n_q_heads * cfg.d_head),
            (cfg.d, cfg.n_kv_heads * cfg.d_head),
            (cfg.d, cfg.n_kv_heads * cfg.d_head),
        )

    def matrices(self) -> Iterator[Matrix]:
        yield from (self.w_q, self.w_k, self.w_v)

    def validate(self, cfg: GqaConfig) -> None:
        names = ("w_q", "w_k", "w_v")
        for name, matrix, expected in zip(names, self.matrices(), self.shapes(cfg)):
            if matrix.shape != expected:
                raise ShapeError(
                    f"{name} has shape {matrix.shape}, expected {expected}"
                )

    @classmethod
    def from_matrices(cls, cfg: GqaConfig, matrices: Sequence[Matrix]) -> "GqaWeights":
        if len(matrices) != 3:
            raise ShapeError(f"expected 3 matrices, got {len(matrices)}")
        weights = cls(*matrices)
        weights.validate(cfg)
        return weights


@dataclass(frozen=True)
class GqaCache:
    """Per-kv-head condensed keys/values plus a rolling full-fidelity buffer.

    Arrays are head-major: rep_keys is (n_kv_heads, m, d_head), buffer_keys is
    (n_kv_heads, buffer_len, d_head), buffer_queries is (n_q_heads, <= n, d_head).
    """

    rep_keys: NDArray[np.floating]
    rep_values: NDArray[np.floating]
    anchor_positions: NDArray[np.int64]
    buffer_keys: NDArray[np.floating]
    buffer_values: NDArray[np.floating]
    buffer_positions: NDArray[np.int64]
    buffer_queries: NDArray[np.floating]
    total_tokens: int

    @property
    def m(self) -> int:
        return int(self.rep_keys.shape[1])

    @property
    def buffer_len(self) -> int:
        return int(self.buffer_keys.shape[1])

    @property
    def entries(self) -> int:
        """Cached key/value rows per kv head."""
        return self.m + self.buffer_len


def _project(
    x: Matrix, weights: GqaWeights, cfg: GqaConfig, positions: Sequence[int]
) -> Tuple[NDArray[np.floating], NDArray[np.floating], NDArray[np.floating]]:
    """Head-major rotated queries, rotated keys and values."""
    if x.ndim != 2 or x.shape[1] != cfg.d:
        raise ShapeError(f"expected tokens of width {cfg.d}, got shape {x.shape}")
    length = x.shape[0]

    def split(m: Matrix, heads: int) -> NDArray[np.floating]:
        return m.reshape(length, heads, cfg.d_head).transpose(1, 0, 2)

    q = split(matmul(x, weights.w_q), cfg.n_q_heads)
    k = split(matmul(x, weights.w_k), cfg.n_kv_heads)
    v = split(matmul(x, weights.w_v), cfg.n_kv_heads)
    q = np.stack([rope_apply(head, positions, cfg.rotary) for head in q])
    k = np.stack([rope_apply(head, positions, cfg.rotary) for head in k])
    return q, k, v


def gqa_dense_attention(
    x: Matrix, weights: GqaWeights, cfg: GqaConfig, causal: bool = True
) -> Matrix:
    """Uncondensed GQA; query head h reads kv head h // heads_per_kv."""
    q, k, v = _project(x, weights, cfg, np.arange(x.shape[0]))
    mask = causal_mask(x.shape[0]) if causal else None
    per_kv = cfg.heads_per_kv
    outputs = [
        attend(q[h], k[h // per_kv], v[h // per_kv], cfg.d_head, mask)
        for h in range(cfg.n_q_heads)
    ]
    return np.concatenate(outputs, axis=1)


def kv_summary_queries(
    queries: NDArray[np.floating], n: int, cfg: GqaConfig
) -> NDArray[np.floating]:
    """Per kv head, the mean over its query heads' last ``n`` query rows."""
    recent = queries[:, -n:, :]
    grouped = recent.reshape(
        cfg.n_kv_heads, cfg.heads_per_kv, recent.shape[1], cfg.d_head
    )
    return grouped.mean(axis=(1, 2))


def gqa_condense_group(
    q_bar_kv: Vector, keys: Matrix, values: Matrix
) -> Tuple[Vector, Vector, int]:
    """Condense one group of one kv head.

    Returns:
        Tuple[Vector, Vector, int]: The key of the argmax member (copied whole),
        the importance-weighted value, and the argmax index.
    """
    if keys.shape[0] != values.shape[0]:
        raise ShapeError(f"{keys.shape[0]} keys but {values.shape[0]} values")
    logits = (keys @ q_bar_kv) / math.sqrt(keys.shape[1])
    alpha = softmax_rows(logits[None, :])[0]
    anchor = int(np.argmax(alpha))
    return keys[anchor].copy(), alpha.astype(values.dtype) @ values, anchor


def _condense_kv_heads(
    q_bar: NDArray[np.floating],
    keys: NDArray[np.floating],
    values: NDArray[np.floating],
    positions: NDArray[np.int64],
) -> Tuple[NDArray[np.floating], NDArray[np.floating], NDArray[np.int64]]:
    """Condense one group (the full second axis of keys/values) for every kv head."""
    k_reps, v_reps, anchors = [], [], []
    for kv in range(keys.shape[0]):
        k_rep, v_rep, anchor = gqa_condense_group(q_bar[kv], keys[kv], values[kv])
        k_reps.append(k_rep)
        v_reps.append(v_rep)
        anchors.append(positions[anchor])
    return np.stack(k_reps), np.stack(v_reps), np.asarray(anchors, dtype=np.int64)


def gqa_prefill(
    x: Matrix, weights: GqaWeights, cfg: GqaConfig
) -> Tuple[Matrix, GqaCache]:
    """Condensed GQA prefill with the MLA engine's fallback, partition and masking."""
    length = x.shape[0]
    positions = np.arange(length, dtype=np.int64)
    q, k, v = _project(x, weights, cfg, positions)
    part = partition(length, cfg.lca)
    recent = q[:, -cfg.n_summary_queries :, :]

    if isinstance(part, Fallback):
        log.info("Fallback to dense GQA: %d tokens < %d", part.length, part.threshold)
        cache = GqaCache(
            rep_keys=k[:, :0],
            rep_values=v[:, :0],
            anchor_positions=np.zeros((cfg.n_kv_heads, 0), dtype=np.int64),
            buffer_keys=k,
            buffer_values=v,
            buffer_positions=positions,
            buffer_queries=recent,
            total_tokens=length,
        )
        return gqa_dense_attention(x, weights, cfg, causal=True), cache

    q_bar = kv_summary_queries(q, min(cfg.n_summary_queries, length), cfg)
    groups = [
        _condense_kv_heads(
            q_bar, k[:, start:stop], v[:, start:stop], positions[start:stop]
        )
        for start, stop in part.group_bounds
    ]
    rep_keys = np.stack([grp[0] for grp in groups], axis=1)
    rep_values = np.stack([grp[1] for grp in groups], axis=1)
    anchors = np.stack([grp[2] for grp in groups], axis=1)

    mask = None
    if cfg.mask_policy is not MaskPolicy.NONE:
        mask = fused_visibility(part, cfg.mask_policy)
    local = part.local_start
    outputs = []
    for h in range(cfg.n_q_heads):
        kv = h // cfg.heads_per_kv
        k_fused = np.concatenate([rep_keys[kv], k[kv, local:]])
        v_fused = np.concatenate([rep_values[kv], v[kv, local:]])
        outputs.append(attend(q[h], k_fused, v_fused, cfg.d_head, mask))

    cache = GqaCache(
        rep_keys=rep_keys,
        rep_values=rep_values,
        anchor_positions=anchors,
        buffer_keys=k[:, local:],
        buffer_values=v[:, local:],
        buffer_positions=positions[local:],
        buffer_queries=recent,
        total_tokens=length,
    )
    return np.concatenate(outputs, axis=1), cache


def gqa_decode_step(
    cache: GqaCache, x_new: Vector, weights: GqaWeights, cfg: GqaConfig
) -> Tuple[Vector, GqaCache]:
    """Decode one token over every representative and buffered row, then condense."""
    position = [cache.total_tokens]
    q, k, v = _project(np.asarray(x_new).reshape(1, -1), weights, cfg, position)
    grown = replace(
        cache,
        buffer_keys=np.concatenate([cache.buffer_keys, k], axis=1),
        buffer_values=np.concatenate([cache.buffer_values, v], axis=1),
        buffer_positions=np.concatenate(
            [cache.buffer_positions, np.asarray(position, dtype=np.int64)]
        ),
        buffer_queries=np.concatenate([cache.buffer_queries, q], axis=1)[
            :, -cfg.n_summary_queries :
        ],
        total_tokens=cache.total_tokens + 1,
    )
    outputs = []
    for h in range(cfg.n_q_heads):
        kv = h // cfg.heads_per_kv
        keys = np.concatenate([grown.rep_keys[kv], grown.buffer_keys[kv]])
        values = np.concatenate([grown.rep_values[kv], grown.buffer_values[kv]])
        outputs.append(attend(q[h], keys, values, cfg.d_head))
    return np.concatenate(outputs, axis=1)[0], gqa_maybe_condense(grown, cfg)


def gqa_maybe_condense(cache: GqaCache, cfg: GqaConfig) -> GqaCache:
    """Condense the earliest g buffered tokens per kv head while w + g are buffered."""
    g = cfg.g
    while cache.buffer_len >= cfg.lca.threshold:
        n = min(cfg.n_summary_queries, cache.buffer_queries.shape[1])
        q_bar = kv_summary_queries(cache.buffer_queries, n, cfg)
        k_rep, v_rep, anchors = _condense_kv_heads(
            q_bar,
            cache.buffer_keys[:, :g],
            cache.buffer_values[:, :g],
            cache.buffer_positions[:g],
        )
        cache = replace(
            cache,
            rep_keys=np.concatenate([cache.rep_keys, k_rep[:, None, :]], axis=1),
            rep_values=np.concatenate([cache.rep_values, v_rep[:, None, :]], axis=1),
            anchor_positions=np.concatenate(
                [cache.anchor_positions, anchors[:, None]], axis=1
            ),
            buffer_keys=cache.buffer_keys[:, g:],
            buffer_values=cache.buffer_values[:, g:],
            buffer_positions=cache.buffer_positions[g:],
        )
    return cache


def gqa_empty_cache(cfg: GqaConfig, dtype: np.dtype = np.dtype(np.float64)) -> GqaCache:
    return GqaCache(
        rep_keys=np.zeros((cfg.n_kv_heads, 0, cfg.d_head), dtype=dtype),
        rep_values=np.zeros((cfg.n_kv_heads, 0, cfg.d_head), dtype=dtype),
        anchor_positions=np.zeros((cfg.n_kv_heads, 0), dtype=np.int64),
        buffer_keys=np.zeros((cfg.n_kv_heads, 0, cfg.d_head), dtype=dtype),
        buffer_values=np.zeros((cfg.n_kv_heads, 0, cfg.d_head), dtype=dtype),
        buffer_positions=np.zeros(0, dtype=np.int64),
        buffer_queries=np.zeros((cfg.n_q_heads, 0, cfg.d_head), dtype=dtype),
        total_tokens=0,
    )
