from .baseline import (
    LatentState,
    MlaWeights,
    ModelConfig,
    dense_attention,
    head_keys_values,
    head_queries,
    project_latents,
    reconstruct_head,
)

__all__ = (
    "LatentState",
    "MlaWeights",
    "ModelConfig",
    "dense_attention",
    "head_keys_values",
    "head_queries",
    "project_latents",
    "reconstruct_head",
)
