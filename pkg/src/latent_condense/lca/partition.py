from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from typing import Tuple, Union

import numpy as np
from numpy.typing import NDArray

from ..errors import ConfigError, PreconditionError


class MaskPolicy(str, Enum):
    NONE = "none"
    REP_CAUSAL = "rep_causal"


class PoolMode(str, Enum):
    WEIGHTED = "weighted"
    MEAN = "mean"
    MAX_POOL = "max_pool"
    MAX_SELECT = "max_select"


@dataclass(frozen=True)
class LcaConfig:
    """Condensation hyperparameters.

    Attributes:
        g (int): Tokens per group.
        w (int): Local window kept at full fidelity.
        n_summary_queries (int): Recent queries averaged into the summary query.
        mask_policy (MaskPolicy): Prefill visibility of representatives.
        semantic_pool (PoolMode): How a group's latents become c_rep.
        positional_pool (PoolMode): How a group's rotary keys become k_R_rep.
    """

    g: int = 16
    w: int = 1024
    n_summary_queries: int = 16
    mask_policy: MaskPolicy = MaskPolicy.REP_CAUSAL
    semantic_pool: PoolMode = PoolMode.WEIGHTED
    positional_pool: PoolMode = PoolMode.MAX_SELECT

    def __post_init__(self) -> None:
        if self.g < 1:
            raise ConfigError(f"group size g must be >= 1, got {self.g}")
        if self.w < 0:
            raise ConfigError(f"window w must be >= 0, got {self.w}")
        if self.n_summary_queries < 1:
            raise ConfigError(
                f"n_summary_queries must be >= 1, got {self.n_summary_queries}"
            )
        # accept plain strings from config files
        object.__setattr__(self, "mask_policy", MaskPolicy(self.mask_policy))
        object.__setattr__(self, "semantic_pool", PoolMode(self.semantic_pool))
        object.__setattr__(self, "positional_pool", PoolMode(self.positional_pool))

    @property
    def threshold(self) -> int:
        """Smallest length that is condensed; shorter inputs fall back to dense MLA."""
        return self.w + self.g


@dataclass(frozen=True)
class Partition:
    """Split of L tokens into m groups of g plus a local window of k = w + r tokens."""

    length: int
    g: int
    m: int
    r: int
    k: int

    @property
    def group_bounds(self) -> Tuple[Tuple[int, int], ...]:
        return tuple((j * self.g, (j + 1) * self.g) for j in range(self.m))

    @property
    def local_start(self) -> int:
        return self.m * self.g

    @property
    def fused_keys(self) -> int:
        return self.m + self.k

    def group_of(self, token: int) -> int:
        """Group index of ``token``, or -1 for a local-window token."""
        return token // self.g if token < self.local_start else -1


@dataclass(frozen=True)
class Fallback:
    """Signal that the input is too short to condense (L < w + g)."""

    length: int
    threshold: int


def partition(length: int, cfg: LcaConfig) -> Union[Partition, Fallback]:
    """Partition ``length`` tokens into condensable groups.

    Args:
        length (int): Number of tokens L, at least 1.
        cfg (LcaConfig): Condensation hyperparameters.

    Raises:
        PreconditionError: If ``length`` < 1.

    Returns:
        Union[Partition, Fallback]: Fallback iff L < w + g.
    """
    if length < 1:
        raise PreconditionError(f"cannot partition {length} tokens")
    if length < cfg.threshold:
        return Fallback(length=length, threshold=cfg.threshold)
    m, r = divmod(length - cfg.w, cfg.g)
    return Partition(length=length, g=cfg.g, m=m, r=r, k=cfg.w + r)


def fused_visibility(part: Partition, policy: MaskPolicy) -> NDArray[np.bool_]:
    """Which fused keys each of the L prefill queries may see.

    Columns are the m representatives followed by the k local tokens. Under
    ``rep_causal`` representative j is visible to query t iff its group ends at
    or before t, and local token i iff i <= t. Under ``none`` everything is.
    """
    queries = np.arange(part.length)[:, None]
    if policy is MaskPolicy.NONE:
        return np.ones((part.length, part.fused_keys), dtype=bool)
    group_last = (np.arange(part.m) + 1) * part.g - 1
    local_index = part.local_start + np.arange(part.k)
    reps = group_last[None, :] <= queries
    local = local_index[None, :] <= queries
    return np.concatenate([reps, local], axis=1)
