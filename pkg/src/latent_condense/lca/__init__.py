from .cache import LatentCache, fused_key_count
from .condense import (
    GroupSummary,
    build_rep_kv,
    condense_group,
    importance,
    pool_semantic,
    rep_keys_values,
    select_anchor,
    summary_query,
)
from .engine import absorb_token, condense_prefix, decode_step, maybe_condense, prefill
from .partition import (
    Fallback,
    LcaConfig,
    MaskPolicy,
    Partition,
    PoolMode,
    fused_visibility,
    partition,
)

__all__ = (
    "Fallback",
    "GroupSummary",
    "LatentCache",
    "LcaConfig",
    "MaskPolicy",
    "Partition",
    "PoolMode",
    "absorb_token",
    "build_rep_kv",
    "condense_group",
    "condense_prefix",
    "decode_step",
    "fused_key_count",
    "fused_visibility",
    "importance",
    "maybe_condense",
    "partition",
    "pool_semantic",
    "prefill",
    "rep_keys_values",
    "select_anchor",
    "summary_query",
)
