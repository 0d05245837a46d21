"""Latent-condensed attention for multi-head latent attention layers.

Packages: ``core`` (dense kernel), ``mla`` (reference attention), ``lca``
(condensation engine), ``gqa`` (grouped-query adapter), ``analysis`` (error
bound, optimality and cost instruments) and ``harness`` (seeded data, file
formats, reports and the experiment runner).
"""
from .config import version as __version__

__all__ = ("__version__",)
