"""Multiply-accumulate and cache accounting for dense and condensed attention.

Only score computation and value mixing are counted; the projections cost the
same on both paths. Under ``rep_causal`` the condensed count includes only the
visible (query, key) pairs.
"""
from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Any, Dict

from ..core import Precision
from ..errors import PreconditionError
from ..lca import Fallback, LcaConfig, MaskPolicy, PoolMode, partition
from ..mla import ModelConfig


@dataclass(frozen=True)
class CostReport:
    length: int
    m: int
    k: int
    fallback: bool
    dense_score_ops: int
    lca_score_ops: int
    condense_ops: int
    dense_decode_ops: int
    lca_decode_ops: int
    dense_cache_entries: int
    lca_cache_entries: int
    dense_cache_bytes: int
    lca_cache_bytes: int

    @property
    def cache_ratio(self) -> float:
        return self.lca_cache_entries / self.dense_cache_entries

    @property
    def cache_reduction(self) -> float:
        return 1.0 - self.cache_ratio

    @property
    def score_ratio(self) -> float:
        return self.lca_score_ops / self.dense_score_ops

    def to_dict(self) -> Dict[str, Any]:
        record = asdict(self)
        record.update(
            cache_ratio=self.cache_ratio,
            cache_reduction=self.cache_reduction,
            score_ratio=self.score_ratio,
        )
        return record


def visible_fused_pairs(length: int, m: int, g: int, k: int, policy: MaskPolicy) -> int:
    """Number of (query, fused key) pairs that take part in attention.

    Under ``rep_causal`` representative j is seen by the L − (j+1)g + 1 queries
    from its group's last token on, and the local token at offset i of the
    window by the k − i queries from itself on.
    """
    if policy is MaskPolicy.NONE:
        return length * (m + k)
    return m * (length + 1) - g * m * (m + 1) // 2 + k * (k + 1) // 2


def _pool_ops(mode: PoolMode, rows: int, width: int) -> int:
    return rows * width if mode in (PoolMode.WEIGHTED, PoolMode.MEAN) else 0


def cost_model(
    length: int,
    mcfg: ModelConfig,
    lcfg: LcaConfig,
    precision: Precision = Precision.F64,
    layers: int = 1,
) -> CostReport:
    """Closed-form cost of one attention layer over ``length`` tokens.

    Args:
        length (int): Prompt length L.
        mcfg (ModelConfig): Layer dimensions.
        lcfg (LcaConfig): Condensation hyperparameters.
        precision (Precision, optional): Storage precision for cache bytes.
            Defaults to f64.
        layers (int, optional): Layers sharing the configuration; scales bytes only.

    Raises:
        PreconditionError: If ``length`` < 1 or ``layers`` < 1.

    Returns:
        CostReport: Dense and condensed counts. In fallback both paths are dense.
    """
    if length < 1:
        raise PreconditionError(f"cost model needs L >= 1, got {length}")
    if layers < 1:
        raise PreconditionError(f"layers must be >= 1, got {layers}")

    per_pair = (mcfg.d_k + mcfg.d_v) * mcfg.n_heads
    entry_width = mcfg.d_c + mcfg.d_r
    dense_ops = length * (length + 1) // 2 * per_pair
    dense_decode = (length + 1) * per_pair
    part = partition(length, lcfg)

    if isinstance(part, Fallback):
        m, k = 0, length
        lca_ops, condense_ops, lca_decode = dense_ops, 0, dense_decode
    else:
        m, k = part.m, part.k
        lca_ops = visible_fused_pairs(length, m, part.g, k, lcfg.mask_policy) * per_pair
        condensed = m * part.g
        condense_ops = (
            min(lcfg.n_summary_queries, length) * mcfg.d_k * mcfg.n_heads
            + condensed * mcfg.d_k * mcfg.n_heads
            + _pool_ops(lcfg.semantic_pool, condensed, mcfg.d_c)
            + _pool_ops(lcfg.positional_pool, condensed, mcfg.d_r)
        )
        lca_decode = (m + k + 1) * per_pair

    itemsize = precision.itemsize
    return CostReport(
        length=length,
        m=m,
        k=k,
        fallback=isinstance(part, Fallback),
        dense_score_ops=dense_ops,
        lca_score_ops=lca_ops,
        condense_ops=condense_ops,
        dense_decode_ops=dense_decode,
        lca_decode_ops=lca_decode,
        dense_cache_entries=length * entry_width,
        lca_cache_entries=(m + k) * entry_width,
        dense_cache_bytes=length * entry_width * itemsize * layers,
        lca_cache_bytes=(m + k) * entry_width * itemsize * layers,
    )
