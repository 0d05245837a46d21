"""Little-endian binary files for weights (MLAW, GQAW) and cache snapshots (LCAC).

Every file opens with a 4-byte magic and a u32 version. Matrices follow as
row-major 64-bit floats, positions as u64.
"""
from __future__ import annotations

import math
import struct
from pathlib import Path
from typing import List, Sequence, Tuple, Union

import numpy as np

from .. import config
from ..core import Matrix, RopeConfig
from ..errors import ConfigError, FormatError
from ..gqa import GqaConfig, GqaWeights
from ..lca import GroupSummary, LatentCache
from ..mla import MlaWeights, ModelConfig

PathLike = Union[str, Path]

_F8 = np.dtype("<f8")
_U8 = np.dtype("<u8")


class _Reader:
    """Sequential reader over a byte buffer; FormatError on truncation."""

    def __init__(self, data: bytes, name: str) -> None:
        self.data = data
        self.name = name
        self.offset = 0

    def take(self, size: int) -> bytes:
        end = self.offset + size
        if end > len(self.data):
            raise FormatError(
                f"{self.name}: truncated at byte {len(self.data)}, needed {end}"
            )
        chunk = self.data[self.offset : end]
        self.offset = end
        return chunk

    def unpack(self, fmt: str) -> Tuple:
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))

    def array(self, dtype: np.dtype, *shape: int) -> np.ndarray:
        size = math.prod(shape) * dtype.itemsize
        if size > len(self.data) - self.offset:
            raise FormatError(
                f"{self.name}: declares {size} bytes at offset {self.offset},"
                f" file has {len(self.data)}"
            )
        raw = np.frombuffer(self.take(size), dtype=dtype)
        return raw.reshape(shape).astype(dtype.newbyteorder("="))

    def header(self, magic: bytes) -> None:
        found = self.take(4)
        if found != magic:
            raise FormatError(f"{self.name}: bad magic {found!r}, expected {magic!r}")
        (version,) = self.unpack("<I")
        if version != config.format_version:
            raise FormatError(f"{self.name}: unsupported version {version}")

    def finish(self) -> None:
        if self.offset != len(self.data):
            trailing = len(self.data) - self.offset
            raise FormatError(f"{self.name}: {trailing} trailing bytes")


def _header(magic: bytes) -> bytes:
    return magic + struct.pack("<I", config.format_version)


def _f8(matrices: Sequence[np.ndarray]) -> bytes:
    return b"".join(np.ascontiguousarray(m, dtype=_F8).tobytes() for m in matrices)


def write_weights(path: PathLike, weights: MlaWeights, cfg: ModelConfig) -> None:
    """Write MLAW: six u32 dims, the f64 rope base, then every matrix."""
    weights.validate(cfg)
    dims = struct.pack(
        "<6Id",
        cfg.d,
        cfg.d_c,
        cfg.d_r,
        cfg.d_k_prime,
        cfg.d_v,
        cfg.n_heads,
        cfg.rotary.base,
    )
    body = _f8(list(weights.matrices()))
    Path(path).write_bytes(_header(config.weights_magic) + dims + body)


def read_weights(path: PathLike) -> Tuple[MlaWeights, ModelConfig]:
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.header(config.weights_magic)
    d, d_c, d_r, d_k_prime, d_v, n_heads, base = reader.unpack("<6Id")
    try:
        rope = RopeConfig(dim=d_r, base=base)
        cfg = ModelConfig(d, d_c, d_r, d_k_prime, d_v, n_heads, rope)
    except ConfigError as error:
        raise FormatError(f"{path}: invalid dimensions: {error}") from error
    matrices = [reader.array(_F8, *shape) for _, shape in MlaWeights.shapes(cfg)]
    reader.finish()
    return MlaWeights.from_matrices(cfg, matrices), cfg


def write_gqa_weights(path: PathLike, weights: GqaWeights, cfg: GqaConfig) -> None:
    """Write GQAW: four u32 dims, the f64 rope base, then W_Q, W_K and W_V."""
    weights.validate(cfg)
    dims = struct.pack(
        "<4Id", cfg.d, cfg.n_q_heads, cfg.n_kv_heads, cfg.d_head, cfg.rotary.base
    )
    body = _f8(list(weights.matrices()))
    Path(path).write_bytes(_header(config.gqa_weights_magic) + dims + body)


def read_gqa_weights(path: PathLike) -> Tuple[GqaWeights, GqaConfig]:
    """Read GQAW. The returned config carries default condensation settings."""
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.header(config.gqa_weights_magic)
    d, n_q, n_kv, d_head, base = reader.unpack("<4Id")
    try:
        rope = RopeConfig(dim=d_head, base=base)
        cfg = GqaConfig(d=d, n_q_heads=n_q, n_kv_heads=n_kv, d_head=d_head, rope=rope)
    except ConfigError as error:
        raise FormatError(f"{path}: invalid dimensions: {error}") from error
    matrices = [reader.array(_F8, *shape) for shape in GqaWeights.shapes(cfg)]
    reader.finish()
    return GqaWeights.from_matrices(cfg, matrices), cfg


def write_cache(path: PathLike, cache: LatentCache, g: int, w: int) -> None:
    """Write an LCAC snapshot of ``cache`` built with group size g and window w."""
    d_c = cache.buffer_c.shape[1]
    d_r = cache.buffer_kr.shape[1]
    n_heads = len(cache.buffer_queries)
    d_k = cache.buffer_queries[0].shape[1] if n_heads else 0
    n_queries = cache.buffer_queries[0].shape[0] if n_heads else 0
    header = struct.pack(
        "<9IQ",
        cache.m,
        cache.buffer_len,
        g,
        w,
        d_c,
        d_r,
        n_heads,
        d_k,
        n_queries,
        cache.total_tokens,
    )
    parts: List[bytes] = [_header(config.cache_magic), header]
    for rep in cache.reps:
        if len(rep.alpha) != g:
            raise FormatError(
                f"representative has {len(rep.alpha)} weights, expected g={g}"
            )
        parts.append(_f8([rep.c_rep, rep.k_r_rep]))
        parts.append(struct.pack("<IQ", rep.anchor_index, rep.anchor_position))
        parts.append(_f8([rep.alpha]))
    parts.append(_f8([cache.buffer_c, cache.buffer_kr]))
    parts.append(np.ascontiguousarray(cache.buffer_positions, dtype=_U8).tobytes())
    parts.append(_f8(list(cache.buffer_queries)))
    Path(path).write_bytes(b"".join(parts))


def read_cache(path: PathLike) -> Tuple[LatentCache, int, int]:
    """Read an LCAC snapshot.

    Returns:
        Tuple[LatentCache, int, int]: The cache, its group size g and window w.
    """
    reader = _Reader(Path(path).read_bytes(), str(path))
    reader.header(config.cache_magic)
    fields = reader.unpack("<9IQ")
    m, buffer_len, g, w, d_c, d_r, n_heads, d_k, n_queries, total = fields
    reps = []
    for _ in range(m):
        c_rep = reader.array(_F8, d_c)
        k_r_rep = reader.array(_F8, d_r)
        anchor_index, anchor_position = reader.unpack("<IQ")
        alpha = reader.array(_F8, g)
        reps.append(GroupSummary(alpha, anchor_index, c_rep, k_r_rep, anchor_position))
    cache = LatentCache(
        reps=tuple(reps),
        buffer_c=reader.array(_F8, buffer_len, d_c),
        buffer_kr=reader.array(_F8, buffer_len, d_r),
        buffer_positions=reader.array(_U8, buffer_len).astype(np.int64),
        buffer_queries=tuple(reader.array(_F8, n_queries, d_k) for _ in range(n_heads)),
        total_tokens=total,
    )
    reader.finish()
    return cache, g, w


def matrices_equal(a: Sequence[Matrix], b: Sequence[Matrix]) -> bool:
    """Bitwise equality of two matrix sequences."""
    return len(a) == len(b) and all(
        x.shape == y.shape and np.array_equal(x, y) for x, y in zip(a, b)
    )


def caches_equal(a: LatentCache, b: LatentCache) -> bool:
    """Field-by-field bitwise equality, representatives compared in order."""
    if a.m != b.m or a.total_tokens != b.total_tokens:
        return False
    for x, y in zip(a.reps, b.reps):
        if (x.anchor_index, x.anchor_position) != (y.anchor_index, y.anchor_position):
            return False
        if not matrices_equal(
            [x.alpha, x.c_rep, x.k_r_rep], [y.alpha, y.c_rep, y.k_r_rep]
        ):
            return False
    return (
        matrices_equal(
            [a.buffer_c, a.buffer_kr, a.buffer_positions],
            [b.buffer_c, b.buffer_kr, b.buffer_positions],
        )
        and matrices_equal(a.buffer_queries, b.buffer_queries)
    )
