"""Prefill with a fused context and decoding with online cache condensation."""
from __future__ import annotations

import logging
from dataclasses import replace
from typing import List, Sequence, Tuple

import numpy as np

from ..core import Matrix, Vector, attend
from ..errors import ShapeError
from ..mla import (
    LatentState,
    MlaWeights,
    ModelConfig,
    dense_attention,
    head_keys_values,
    head_queries,
    project_latents,
    reconstruct_head,
)
from .cache import LatentCache
from .condense import GroupSummary, condense_group, rep_keys_values, summary_query
from .partition import (
    Fallback,
    LcaConfig,
    MaskPolicy,
    Partition,
    fused_visibility,
    partition,
)

log = logging.getLogger(__name__)


def condense_prefix(
    state: LatentState,
    queries: Sequence[Matrix],
    keys: Sequence[Matrix],
    part: Partition,
    d_k: int,
    lcfg: LcaConfig,
) -> Tuple[GroupSummary, ...]:
    """Condense the m leading groups of a prefill with one global summary query."""
    q_bar = summary_query(queries, min(lcfg.n_summary_queries, state.length))
    reps = []
    for start, stop in part.group_bounds:
        reps.append(
            condense_group(
                q_bar,
                [k[start:stop] for k in keys],
                state.c_kv[start:stop],
                state.k_r[start:stop],
                state.positions[start:stop],
                d_k,
                lcfg.semantic_pool,
                lcfg.positional_pool,
            )
        )
    return tuple(reps)


def prefill(
    x: Matrix, w: MlaWeights, mcfg: ModelConfig, lcfg: LcaConfig
) -> Tuple[Matrix, LatentCache]:
    """Latent-condensed attention over a whole prompt.

    Inputs shorter than w + g fall back to dense causal MLA and keep every token in
    the buffer. Longer inputs are split into m groups and a local window of
    k = w + r tokens; every query attends over [m representatives; k local tokens].

    Args:
        x (Matrix): Prompt activations, shape (L, d).
        w (MlaWeights): Layer weights.
        mcfg (ModelConfig): Layer dimensions.
        lcfg (LcaConfig): Condensation hyperparameters.

    Returns:
        Tuple[Matrix, LatentCache]: Output of shape (L, n_heads * d_v) and the cache
        ready for decoding.
    """
    state = project_latents(x, w, mcfg)
    part = partition(state.length, lcfg)
    heads = [reconstruct_head(state, w, mcfg, h) for h in range(mcfg.n_heads)]
    queries = [q for q, _, _ in heads]
    recent = tuple(q[-lcfg.n_summary_queries :] for q in queries)

    if isinstance(part, Fallback):
        log.info(
            "Fallback to dense attention: %d tokens < %d", part.length, part.threshold
        )
        cache = LatentCache(
            reps=(),
            buffer_c=state.c_kv,
            buffer_kr=state.k_r,
            buffer_positions=state.positions,
            buffer_queries=recent,
            total_tokens=state.length,
        )
        return dense_attention(state, w, mcfg, causal=True), cache

    log.info("Condensing %d groups of %d, local window %d", part.m, part.g, part.k)
    keys = [k for _, k, _ in heads]
    reps = condense_prefix(state, queries, keys, part, mcfg.d_k, lcfg)
    c_reps = np.stack([rep.c_rep for rep in reps])
    kr_reps = np.stack([rep.k_r_rep for rep in reps])
    mask = None
    if lcfg.mask_policy is not MaskPolicy.NONE:
        mask = fused_visibility(part, lcfg.mask_policy)

    outputs = []
    for h, (q, k, v) in enumerate(heads):
        k_rep, v_rep = rep_keys_values(c_reps, kr_reps, w, h)
        k_fused = np.concatenate([k_rep, k[part.local_start :]], axis=0)
        v_fused = np.concatenate([v_rep, v[part.local_start :]], axis=0)
        outputs.append(attend(q, k_fused, v_fused, mcfg.d_k, mask))

    cache = LatentCache(
        reps=reps,
        buffer_c=state.c_kv[part.local_start :],
        buffer_kr=state.k_r[part.local_start :],
        buffer_positions=state.positions[part.local_start :],
        buffer_queries=recent,
        total_tokens=state.length,
    )
    return np.concatenate(outputs, axis=1), cache


def absorb_token(
    cache: LatentCache, x_new: Vector, w: MlaWeights, mcfg: ModelConfig, lcfg: LcaConfig
) -> Tuple[LatentCache, List[Matrix]]:
    """Project one new token at the next position and append it to the buffer.

    Returns:
        Tuple[LatentCache, List[Matrix]]: The grown cache and the token's (1, d_k)
        query per head.
    """
    x = np.asarray(x_new).reshape(1, -1)
    if x.shape[1] != mcfg.d:
        raise ShapeError(f"expected a token of width {mcfg.d}, got {x.shape[1]}")
    position = [cache.next_position]
    token = project_latents(x, w, mcfg, position)
    q_new = [head_queries(token.c_q, position, w, mcfg, h) for h in range(mcfg.n_heads)]
    n = lcfg.n_summary_queries
    grown = replace(
        cache,
        buffer_c=np.concatenate([cache.buffer_c, token.c_kv]),
        buffer_kr=np.concatenate([cache.buffer_kr, token.k_r]),
        buffer_positions=np.concatenate([cache.buffer_positions, token.positions]),
        buffer_queries=tuple(
            np.concatenate([old, q])[-n:] for old, q in zip(cache.buffer_queries, q_new)
        ),
        total_tokens=cache.total_tokens + 1,
    )
    return grown, q_new


def decode_step(
    cache: LatentCache, x_new: Vector, w: MlaWeights, mcfg: ModelConfig, lcfg: LcaConfig
) -> Tuple[Vector, LatentCache]:
    """Decode one token against the condensed cache.

    The new query attends over every representative and every buffered token,
    itself included; all of them lie in the past so no mask is applied. The
    cache is condensed afterwards if the buffer reached w + g.

    Returns:
        Tuple[Vector, LatentCache]: Output of width n_heads * d_v and the successor
        cache.
    """
    grown, q_new = absorb_token(cache, x_new, w, mcfg, lcfg)
    latents = np.concatenate([grown.rep_latents(), grown.buffer_c])
    rotary = np.concatenate([grown.rep_rotary(), grown.buffer_kr])
    outputs = []
    for h, q in enumerate(q_new):
        k, v = head_keys_values(latents, rotary, w, h)
        outputs.append(attend(q, k, v, mcfg.d_k))
    return np.concatenate(outputs, axis=1)[0], maybe_condense(grown, w, lcfg)


def maybe_condense(cache: LatentCache, w: MlaWeights, lcfg: LcaConfig) -> LatentCache:
    """Condense the earliest g buffered tokens while the buffer holds at least w + g.

    The summary query is the mean of the stored recent queries (up to
    n_summary_queries of them).
    """
    g = lcfg.g
    while cache.buffer_len >= lcfg.threshold:
        queries = cache.buffer_queries
        q_bar = summary_query(queries, min(lcfg.n_summary_queries, queries[0].shape[0]))
        keys = [
            head_keys_values(cache.buffer_c[:g], cache.buffer_kr[:g], w, h)[0]
            for h in range(len(queries))
        ]
        summary = condense_group(
            q_bar,
            keys,
            cache.buffer_c[:g],
            cache.buffer_kr[:g],
            cache.buffer_positions[:g],
            queries[0].shape[1],
            lcfg.semantic_pool,
            lcfg.positional_pool,
        )
        log.debug("Condensing group %d at anchor %d", cache.m, summary.anchor_position)
        cache = replace(
            cache,
            reps=cache.reps + (summary,),
            buffer_c=cache.buffer_c[g:],
            buffer_kr=cache.buffer_kr[g:],
            buffer_positions=cache.buffer_positions[g:],
        )
    return cache
