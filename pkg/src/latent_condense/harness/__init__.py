"""Seeded data, binary formats and report output.

The runner lives in ``harness.runner``.
"""
from .generate import (
    Stream,
    gen_gqa_weights,
    gen_sequence,
    gen_weights,
    model_from_mapping,
    random_model,
    rng_for,
)
from .formats import (
    caches_equal,
    matrices_equal,
    read_cache,
    read_gqa_weights,
    read_weights,
    write_cache,
    write_gqa_weights,
    write_weights,
)
from .reporting import ReportWriter, digest, summary_table

__all__ = (
    "ReportWriter",
    "Stream",
    "caches_equal",
    "digest",
    "gen_gqa_weights",
    "gen_sequence",
    "gen_weights",
    "matrices_equal",
    "model_from_mapping",
    "random_model",
    "read_cache",
    "read_gqa_weights",
    "read_weights",
    "rng_for",
    "summary_table",
    "write_cache",
    "write_gqa_weights",
    "write_weights",
)
