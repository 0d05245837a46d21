"""Group-wise condensation in the latent space.

A group of g tokens is scored against a summary query, then its latents are
pooled into one representative latent while one member's rotary key is kept as
the positional anchor.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from typing import List, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from ..core import Matrix, Vector, ensure_finite, softmax_rows
from ..errors import PreconditionError, ShapeError
from ..mla import MlaWeights, head_keys_values
from .partition import PoolMode


@dataclass(frozen=True)
class GroupSummary:
    """The condensed form of one group.

    Attributes:
        alpha (Vector): Importance weights over the g members, sums to 1.
        anchor_index (int): Member index I_j inside the group.
        c_rep (Vector): Representative latent, length d_c.
        k_r_rep (Vector): Representative rotary key, length d_r.
        anchor_position (int): Token position of the anchor member.
    """

    alpha: Vector
    anchor_index: int
    c_rep: Vector
    k_r_rep: Vector
    anchor_position: int


def summary_query(q_heads: Sequence[Matrix], n: int) -> List[Vector]:
    """Per head, the mean of the final ``n`` query rows.

    Raises:
        PreconditionError: If a head has fewer than ``n`` rows.
    """
    if n < 1:
        raise PreconditionError(f"summary query needs n >= 1, got {n}")
    means = []
    for h, q in enumerate(q_heads):
        if q.shape[0] < n:
            raise PreconditionError(f"head {h} has {q.shape[0]} queries, {n} needed")
        means.append(q[-n:].mean(axis=0))
    return means


def importance(q_bar: Sequence[Vector], keys: Sequence[Matrix], d_k: int) -> Vector:
    """Group-wise softmax of the head-averaged logits q̄·k_i / sqrt(d_k).

    One weighting is shared by all heads because the representative latent is
    shared by all heads.

    Args:
        q_bar (Sequence[Vector]): Summary query per head.
        keys (Sequence[Matrix]): Full keys (content and rotary) of the group, per head.
        d_k (int): Key width used for scaling.

    Returns:
        Vector: alpha, one probability per group member.
    """
    if len(q_bar) != len(keys) or not keys:
        raise ShapeError(f"{len(q_bar)} summary queries for {len(keys)} key heads")
    sizes = {k.shape[0] for k in keys}
    if len(sizes) != 1 or 0 in sizes:
        raise ShapeError(f"group key heads disagree on size: {sorted(sizes)}")
    logits = np.mean([k @ q for q, k in zip(q_bar, keys)], axis=0) / math.sqrt(d_k)
    return softmax_rows(logits[None, :])[0]


def _pool(alpha: Vector, rows: Matrix, mode: PoolMode) -> Vector:
    if rows.shape[0] != alpha.shape[0]:
        raise ShapeError(f"{alpha.shape[0]} weights for {rows.shape[0]} rows")
    if mode is PoolMode.WEIGHTED:
        return ensure_finite(alpha.astype(rows.dtype) @ rows)
    if mode is PoolMode.MEAN:
        return rows.mean(axis=0)
    if mode is PoolMode.MAX_POOL:
        return rows.max(axis=0)
    return rows[int(np.argmax(alpha))].copy()


def pool_semantic(
    alpha: Vector, group_latents: Matrix, mode: PoolMode = PoolMode.WEIGHTED
) -> Vector:
    """Representative latent of a group.

    ``weighted`` is the convex combination sum_i alpha_i c_i, ``mean`` the plain
    average, ``max_pool`` the coordinatewise maximum and ``max_select`` the row at
    argmax(alpha).
    """
    return _pool(alpha, group_latents, PoolMode(mode))


def select_anchor(
    alpha: Vector, group_kr: Matrix, mode: PoolMode = PoolMode.MAX_SELECT
) -> Tuple[int, Vector]:
    """Positional anchor of a group.

    Under ``max_select`` the rotary key of the highest-weight member is copied
    verbatim; ties go to the lowest index. The other modes pool the rotary keys
    the way ``pool_semantic`` pools latents and still report argmax(alpha) as
    the anchor index.
    """
    anchor = int(np.argmax(alpha))
    return anchor, _pool(alpha, group_kr, PoolMode(mode))


def build_rep_kv(
    c_rep: Vector, k_r_rep: Vector, w: MlaWeights, h: int
) -> Tuple[Vector, Vector]:
    """k_rep = [c_rep W_UK[h], k_R_rep] and v_rep = c_rep W_UV[h]."""
    k, v = head_keys_values(c_rep[None, :], k_r_rep[None, :], w, h)
    return k[0], v[0]


def rep_keys_values(
    c_reps: Matrix, k_r_reps: Matrix, w: MlaWeights, h: int
) -> Tuple[Matrix, Matrix]:
    """Stacked build_rep_kv for m representatives at once."""
    return head_keys_values(c_reps, k_r_reps, w, h)


def condense_group(
    q_bar: Sequence[Vector],
    group_keys: Sequence[Matrix],
    group_latents: Matrix,
    group_kr: Matrix,
    group_positions: NDArray[np.int64],
    d_k: int,
    semantic_pool: PoolMode = PoolMode.WEIGHTED,
    positional_pool: PoolMode = PoolMode.MAX_SELECT,
) -> GroupSummary:
    """Score one group and condense it into a GroupSummary."""
    alpha = importance(q_bar, group_keys, d_k)
    anchor, k_r_rep = select_anchor(alpha, group_kr, positional_pool)
    return GroupSummary(
        alpha=alpha,
        anchor_index=anchor,
        c_rep=pool_semantic(alpha, group_latents, semantic_pool),
        k_r_rep=k_r_rep,
        anchor_position=int(group_positions[anchor]),
    )
