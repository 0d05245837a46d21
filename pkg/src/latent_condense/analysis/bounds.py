"""Deviation statistics and the uniform output-error bound.

Each condensed token is compared against the representative of its group; local
window tokens are kept exactly and contribute zero deviation. The bound check
compares dense non-causal attention with a surrogate in which every condensed
token's key and value are replaced by its group representative.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from ..core import Matrix, Vector, attend
from ..errors import ConsistencyError, PreconditionError
from ..lca import LatentCache
from ..mla import LatentState, MlaWeights, ModelConfig, head_keys_values, head_queries

log = logging.getLogger(__name__)

TOLERANCE = 1e-9


def theorem1_bound(
    q_norm: float, v_norm: float, delta_k: float, delta_v: float, d_k: int
) -> float:
    """V·(exp(2·Q·δ_k/√d_k) − 1) + δ_v.

    Raises:
        PreconditionError: On a negative input or d_k < 1.
    """
    if min(q_norm, v_norm, delta_k, delta_v) < 0:
        raise PreconditionError("bound inputs must be nonnegative")
    if d_k < 1:
        raise PreconditionError(f"d_k must be >= 1, got {d_k}")
    return v_norm * math.expm1(2.0 * q_norm * delta_k / math.sqrt(d_k)) + delta_v


@dataclass(frozen=True)
class GroupDeviation:
    index: int
    anchor_position: int
    delta_k_max: float
    delta_v_max: float


@dataclass(frozen=True)
class DeviationReport:
    """Key/value deviations between tokens and their group representatives.

    Attributes:
        delta_k_max (float): Worst L2 key deviation over heads and tokens.
        delta_v_max (float): Worst L2 value deviation over heads and tokens.
        mean_rel_k (float): Mean of ‖k_i − k_rep‖/‖k_i‖ over heads and condensed
            tokens with a nonzero key; finite.
        mean_rel_v (float): Same ratio for values.
        per_group (List[GroupDeviation]): Maxima per group.
        token_delta_k (Vector): Per-token maximum over heads, zero on local tokens.
        token_delta_v (Vector): Same for values.
        condensed_tokens (int): Tokens inside groups.
        local_tokens (int): Tokens kept at full fidelity.
    """

    delta_k_max: float
    delta_v_max: float
    mean_rel_k: float
    mean_rel_v: float
    per_group: List[GroupDeviation] = field(default_factory=list)
    token_delta_k: Vector = field(default_factory=lambda: np.zeros(0))
    token_delta_v: Vector = field(default_factory=lambda: np.zeros(0))
    condensed_tokens: int = 0
    local_tokens: int = 0


def _group_size(state: LatentState, cache: LatentCache) -> int:
    """Group size implied by a cache built from ``state``; 0 when none was condensed."""
    if cache.total_tokens != state.length:
        raise ConsistencyError(
            f"cache holds {cache.total_tokens} tokens, state {state.length}"
        )
    if not cache.reps:
        g = 0
    else:
        g = len(cache.reps[0].alpha)
        if any(len(rep.alpha) != g for rep in cache.reps):
            raise ConsistencyError("representatives disagree on group size")
    if cache.m * g + cache.buffer_len != state.length:
        raise ConsistencyError(
            f"{cache.m} groups of {g} plus {cache.buffer_len} buffered"
            f" != {state.length} tokens"
        )
    if not np.array_equal(cache.buffer_c, state.c_kv[cache.m * g :]):
        raise ConsistencyError("cache buffer does not match the state's local window")
    return g


def _assigned(state: LatentState, cache: LatentCache, g: int) -> Tuple[Matrix, Matrix]:
    """Latent and rotary rows per token, condensed ones set to their representative."""
    c = state.c_kv.copy()
    kr = state.k_r.copy()
    for j, rep in enumerate(cache.reps):
        c[j * g : (j + 1) * g] = rep.c_rep
        kr[j * g : (j + 1) * g] = rep.k_r_rep
    return c, kr


def _relative(dev: Vector, orig: Vector) -> Vector:
    """dev / orig over the tokens with a nonzero original norm."""
    keep = orig > 0
    return dev[keep] / orig[keep]


def _mean(ratios: List[Vector]) -> float:
    joined = np.concatenate(ratios) if ratios else np.zeros(0)
    return float(joined.mean()) if joined.size else 0.0


def measure_deviations(
    state: LatentState, cache: LatentCache, w: MlaWeights
) -> DeviationReport:
    """Per-token deviations of the full keys and values from their representatives.

    Differences are taken in latent space and then up-projected, which is the
    same quantity as differencing the reconstructed keys and values.

    Raises:
        ConsistencyError: If ``cache`` was not produced from ``state``.
    """
    g = _group_size(state, cache)
    condensed = cache.m * g
    c_hat, kr_hat = _assigned(state, cache, g)
    dc = state.c_kv[:condensed] - c_hat[:condensed]
    dkr = state.k_r[:condensed] - kr_hat[:condensed]

    token_k = np.zeros(state.length)
    token_v = np.zeros(state.length)
    rel_k: List[Vector] = []
    rel_v: List[Vector] = []
    for h in range(w.n_heads):
        k_dev, v_dev = head_keys_values(dc, dkr, w, h)
        k_orig, v_orig = head_keys_values(
            state.c_kv[:condensed], state.k_r[:condensed], w, h
        )
        dk = np.linalg.norm(k_dev, axis=1)
        dv = np.linalg.norm(v_dev, axis=1)
        token_k[:condensed] = np.maximum(token_k[:condensed], dk)
        token_v[:condensed] = np.maximum(token_v[:condensed], dv)
        rel_k.append(_relative(dk, np.linalg.norm(k_orig, axis=1)))
        rel_v.append(_relative(dv, np.linalg.norm(v_orig, axis=1)))

    per_group = [
        GroupDeviation(
            index=j,
            anchor_position=rep.anchor_position,
            delta_k_max=float(token_k[j * g : (j + 1) * g].max()),
            delta_v_max=float(token_v[j * g : (j + 1) * g].max()),
        )
        for j, rep in enumerate(cache.reps)
    ]
    return DeviationReport(
        delta_k_max=float(token_k.max(initial=0.0)),
        delta_v_max=float(token_v.max(initial=0.0)),
        mean_rel_k=_mean(rel_k),
        mean_rel_v=_mean(rel_v),
        per_group=per_group,
        token_delta_k=token_k,
        token_delta_v=token_v,
        condensed_tokens=condensed,
        local_tokens=cache.buffer_len,
    )


@dataclass(frozen=True)
class BoundReport:
    q_norm: float
    v_norm: float
    delta_k: float
    delta_v: float
    bound: float
    actual_error_max: float
    satisfied: bool
    production_error_max: float
    production_within_bound: bool


def check_theorem1(
    state: LatentState, cache: LatentCache, w: MlaWeights, mcfg: ModelConfig
) -> BoundReport:
    """Measure the condensed-vs-dense output gap and compare it with the uniform bound.

    Attention is non-causal on both sides. The surrogate keeps one key/value slot
    per token, filled with the group representative, so each group carries its
    members' combined weight. The production error is the gap between fused
    attention straight from the cache and the same dense reference; it is
    reported for information and need not stay under the bound.

    Args:
        state (LatentState): Latents of the prompt.
        cache (LatentCache): Cache that prefill built from ``state``.
        w (MlaWeights): Layer weights.
        mcfg (ModelConfig): Layer dimensions.

    Returns:
        BoundReport: Norms, deviations, bound and measured errors; Q and V are
        the largest query and value norms over every head.
    """
    deviations = measure_deviations(state, cache, w)
    g = _group_size(state, cache)
    c_hat, kr_hat = _assigned(state, cache, g)
    fused_c = np.concatenate([cache.rep_latents(), cache.buffer_c])
    fused_kr = np.concatenate([cache.rep_rotary(), cache.buffer_kr])

    q_norm = v_norm = actual = production = 0.0
    for h in range(mcfg.n_heads):
        q = head_queries(state.c_q, state.positions, w, mcfg, h)
        k, v = head_keys_values(state.c_kv, state.k_r, w, h)
        k_hat, v_hat = head_keys_values(c_hat, kr_hat, w, h)
        k_fused, v_fused = head_keys_values(fused_c, fused_kr, w, h)
        dense = attend(q, k, v, mcfg.d_k)
        surrogate = attend(q, k_hat, v_hat, mcfg.d_k)
        fused = attend(q, k_fused, v_fused, mcfg.d_k)
        q_norm = max(q_norm, float(np.linalg.norm(q, axis=1).max()))
        v_norm = max(v_norm, float(np.linalg.norm(v, axis=1).max()))
        actual = max(actual, float(np.linalg.norm(dense - surrogate, axis=1).max()))
        production = max(production, float(np.linalg.norm(dense - fused, axis=1).max()))

    bound = theorem1_bound(
        q_norm, v_norm, deviations.delta_k_max, deviations.delta_v_max, mcfg.d_k
    )
    log.debug(
        "Bound %.3e, surrogate error %.3e, fused error %.3e", bound, actual, production
    )
    return BoundReport(
        q_norm=q_norm,
        v_norm=v_norm,
        delta_k=deviations.delta_k_max,
        delta_v=deviations.delta_v_max,
        bound=bound,
        actual_error_max=actual,
        satisfied=actual <= bound + TOLERANCE,
        production_error_max=production,
        production_within_bound=production <= bound + TOLERANCE,
    )
