from .adapter import (
    GqaCache,
    GqaConfig,
    GqaWeights,
    gqa_condense_group,
    gqa_decode_step,
    gqa_dense_attention,
    gqa_empty_cache,
    gqa_maybe_condense,
    gqa_prefill,
    kv_summary_queries,
)

__all__ = (
    "GqaCache",
    "GqaConfig",
    "GqaWeights",
    "gqa_condense_group",
    "gqa_decode_step",
    "gqa_dense_attention",
    "gqa_empty_cache",
    "gqa_maybe_condense",
    "gqa_prefill",
    "kv_summary_queries",
)
