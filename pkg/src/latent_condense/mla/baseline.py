"""Reference multi-head latent attention: dense and uncondensed.

Tokens are projected into a shared latent space (C^Q, C^KV) plus one rotary
key stream K^R shared by all heads. Per-head queries, keys and values are
rebuilt from the latents with up-projections.
"""
from __future__ import annotations

import logging
from dataclasses import dataclass
from typing import Iterator, List, Optional, Sequence, Tuple

import numpy as np
from numpy.typing import NDArray

from ..core import Matrix, RopeConfig, attend, causal_mask, matmul, rope_apply
from ..errors import ConfigError, HeadIndexError, ShapeError

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class ModelConfig:
    """Architecture dimensions of one MLA layer."""

    d: int
    d_c: int
    d_r: int
    d_k_prime: int
    d_v: int
    n_heads: int
    rope: Optional[RopeConfig] = None

    def __post_init__(self) -> None:
        dims = {
            "d": self.d,
            "d_c": self.d_c,
            "d_r": self.d_r,
            "d_k_prime": self.d_k_prime,
            "d_v": self.d_v,
            "n_heads": self.n_heads,
        }
        for name, value in dims.items():
            if value <= 0:
                raise ConfigError(f"{name} must be positive, got {value}")
        if self.d_c >= self.d:
            raise ConfigError(f"latent width d_c={self.d_c} must be below d={self.d}")
        if self.rope is None:
            object.__setattr__(self, "rope", RopeConfig(dim=self.d_r))
        elif self.rope.dim != self.d_r:
            raise ConfigError(f"rope dim {self.rope.dim} differs from d_r={self.d_r}")
        assert self.d_k == self.d_k_prime + self.d_r

    @property
    def d_k(self) -> int:
        return self.d_k_prime + self.d_r

    @property
    def rotary(self) -> RopeConfig:
        assert self.rope is not None
        return self.rope


@dataclass(frozen=True)
class MlaWeights:
    """Projection matrices of one MLA layer. Per-head lists are indexed by head."""

    w_dq: Matrix
    w_dkv: Matrix
    w_uq: List[Matrix]
    w_uk: List[Matrix]
    w_uv: List[Matrix]
    w_qr: List[Matrix]
    w_kr: Matrix

    @property
    def n_heads(self) -> int:
        return len(self.w_uk)

    def validate(self, cfg: ModelConfig) -> None:
        """Check every shape against ``cfg``.

        Raises:
            ShapeError: On the first inconsistent matrix.
        """
        for name, expected in self.shapes(cfg):
            matrix = self._lookup(name)
            if matrix.shape != expected:
                raise ShapeError(
                    f"{name} has shape {matrix.shape}, expected {expected}"
                )

    def _lookup(self, name: str) -> Matrix:
        if "[" not in name:
            return getattr(self, name)
        attr, index = name.rstrip("]").split("[")
        heads = getattr(self, attr)
        if len(heads) <= int(index):
            raise ShapeError(f"{attr} has {len(heads)} heads, missing {name}")
        return heads[int(index)]

    @staticmethod
    def shapes(cfg: ModelConfig) -> List[Tuple[str, Tuple[int, int]]]:
        """Matrix names and shapes in declaration order."""
        order = [("w_dq", (cfg.d, cfg.d_c)), ("w_dkv", (cfg.d, cfg.d_c))]
        per_head = [
            ("w_uq", (cfg.d_c, cfg.d_k_prime)),
            ("w_uk", (cfg.d_c, cfg.d_k_prime)),
            ("w_uv", (cfg.d_c, cfg.d_v)),
            ("w_qr", (cfg.d_c, cfg.d_r)),
        ]
        for attr, shape in per_head:
            order.extend((f"{attr}[{h}]", shape) for h in range(cfg.n_heads))
        order.append(("w_kr", (cfg.d, cfg.d_r)))
        return order

    def matrices(self) -> Iterator[Matrix]:
        """Yield every matrix in declaration order."""
        yield self.w_dq
        yield self.w_dkv
        for heads in (self.w_uq, self.w_uk, self.w_uv, self.w_qr):
            yield from heads
        yield self.w_kr

    @classmethod
    def from_matrices(
        cls, cfg: ModelConfig, matrices: Sequence[Matrix]
    ) -> "MlaWeights":
        """Rebuild weights from a flat list in declaration order."""
        expected = 3 + 4 * cfg.n_heads
        if len(matrices) != expected:
            raise ShapeError(f"expected {expected} matrices, got {len(matrices)}")
        h = cfg.n_heads
        heads = [list(matrices[2 + i * h : 2 + (i + 1) * h]) for i in range(4)]
        weights = cls(
            w_dq=matrices[0],
            w_dkv=matrices[1],
            w_uq=heads[0],
            w_uk=heads[1],
            w_uv=heads[2],
            w_qr=heads[3],
            w_kr=matrices[-1],
        )
        weights.validate(cfg)
        return weights


@dataclass(frozen=True)
class LatentState:
    """What MLA computes once per token: query/KV latents and the rotated K^R."""

    c_q: Matrix
    c_kv: Matrix
    k_r: Matrix
    positions: NDArray[np.int64]

    def __post_init__(self) -> None:
        rows = {
            self.c_q.shape[0],
            self.c_kv.shape[0],
            self.k_r.shape[0],
            len(self.positions),
        }
        if len(rows) != 1:
            raise ShapeError(f"latent state row counts disagree: {sorted(rows)}")

    @property
    def length(self) -> int:
        return int(self.c_kv.shape[0])


def project_latents(
    x: Matrix,
    w: MlaWeights,
    cfg: ModelConfig,
    positions: Optional[Sequence[int]] = None,
) -> LatentState:
    """Project tokens into the latent space.

    Args:
        x (Matrix): Token activations, shape (L, d).
        w (MlaWeights): Layer weights.
        cfg (ModelConfig): Layer dimensions.
        positions (Sequence[int], optional): Token indices. Defaults to 0..L-1.

    Returns:
        LatentState: C^Q, C^KV and K^R = RoPE(X W_KR).
    """
    if x.ndim != 2 or x.shape[1] != cfg.d:
        raise ShapeError(f"expected tokens of width {cfg.d}, got shape {x.shape}")
    pos = np.asarray(
        np.arange(x.shape[0]) if positions is None else positions, dtype=np.int64
    )
    return LatentState(
        c_q=matmul(x, w.w_dq),
        c_kv=matmul(x, w.w_dkv),
        k_r=rope_apply(matmul(x, w.w_kr), pos, cfg.rotary),
        positions=pos,
    )


def _check_head(w: MlaWeights, h: int) -> None:
    if not 0 <= h < w.n_heads:
        raise HeadIndexError(f"head {h} out of range for {w.n_heads} heads")


def head_queries(
    c_q: Matrix, positions: Sequence[int], w: MlaWeights, cfg: ModelConfig, h: int
) -> Matrix:
    """Q_h = [C^Q W_UQ[h], RoPE(C^Q W_QR[h])]."""
    _check_head(w, h)
    rotary = rope_apply(matmul(c_q, w.w_qr[h]), positions, cfg.rotary)
    return np.concatenate([matmul(c_q, w.w_uq[h]), rotary], axis=1)


def head_keys_values(
    c_kv: Matrix, k_r: Matrix, w: MlaWeights, h: int
) -> Tuple[Matrix, Matrix]:
    """K_h = [C^KV W_UK[h], K^R] and V_h = C^KV W_UV[h]."""
    _check_head(w, h)
    if c_kv.shape[0] != k_r.shape[0]:
        raise ShapeError(f"{c_kv.shape[0]} latents but {k_r.shape[0]} rotary keys")
    k = np.concatenate([matmul(c_kv, w.w_uk[h]), k_r], axis=1)
    return k, matmul(c_kv, w.w_uv[h])


def reconstruct_head(
    state: LatentState, w: MlaWeights, cfg: ModelConfig, h: int
) -> Tuple[Matrix, Matrix, Matrix]:
    """Rebuild the full queries, keys and values of head ``h``.

    Args:
        state (LatentState): Projected latents.
        w (MlaWeights): Layer weights.
        cfg (ModelConfig): Layer dimensions; the query rotary path reads its RoPE
            config.
        h (int): Head index.

    Raises:
        HeadIndexError: If ``h`` is not a valid head.

    Returns:
        Tuple[Matrix, Matrix, Matrix]: (Q_h, K_h, V_h), widths d_k, d_k and d_v.
    """
    q = head_queries(state.c_q, state.positions, w, cfg, h)
    k, v = head_keys_values(state.c_kv, state.k_r, w, h)
    return q, k, v


def dense_attention(
    state: LatentState, w: MlaWeights, cfg: ModelConfig, causal: bool = True
) -> Matrix:
    """Uncondensed MLA: per-head scaled dot-product attention, heads concatenated.

    Args:
        state (LatentState): Projected latents.
        w (MlaWeights): Layer weights.
        cfg (ModelConfig): Layer dimensions.
        causal (bool, optional): Mask keys after the query. Defaults to True.

    Returns:
        Matrix: Output of shape (L, n_heads * d_v).
    """
    log.debug("Dense attention over %d tokens, causal=%s", state.length, causal)
    mask = causal_mask(state.length) if causal else None
    outputs = []
    for h in range(cfg.n_heads):
        q, k, v = reconstruct_head(state, w, cfg, h)
        outputs.append(attend(q, k, v, cfg.d_k, mask))
    return np.concatenate(outputs, axis=1)
