"""Seeded synthetic weights and inputs.

All randomness comes from numpy's PCG64 generator. A run seed is split into
independent streams (weights, inputs, trials) with ``SeedSequence`` spawn keys,
so changing the number of trials never changes the weights.
"""
from __future__ import annotations

import math
from enum import IntEnum
from typing import List

import numpy as np

from ..core import Matrix, Precision, RopeConfig, as_precision
from ..gqa import GqaConfig, GqaWeights
from ..mla import MlaWeights, ModelConfig


class Stream(IntEnum):
    WEIGHTS = 0
    INPUTS = 1
    TRIALS = 2


def rng_for(seed: int, stream: Stream, index: int = 0) -> np.random.Generator:
    """Generator for one (stream, index) pair of a run seed."""
    sequence = np.random.SeedSequence(seed, spawn_key=(int(stream), index))
    return np.random.Generator(np.random.PCG64(sequence))


def _gaussian(
    rng: np.random.Generator, rows: int, cols: int, std: float, precision: Precision
) -> Matrix:
    return as_precision(rng.standard_normal((rows, cols)) * std, precision)


def gen_weights(
    seed: int, cfg: ModelConfig, precision: Precision = Precision.F64, index: int = 0
) -> MlaWeights:
    """Gaussian MLA weights with std 1/sqrt(fan_in), drawn in declaration order."""
    rng = rng_for(seed, Stream.WEIGHTS, index)
    matrices: List[Matrix] = [
        _gaussian(rng, rows, cols, 1.0 / math.sqrt(rows), precision)
        for _, (rows, cols) in MlaWeights.shapes(cfg)
    ]
    return MlaWeights.from_matrices(cfg, matrices)


def gen_gqa_weights(
    seed: int, cfg: GqaConfig, precision: Precision = Precision.F64, index: int = 0
) -> GqaWeights:
    rng = rng_for(seed, Stream.WEIGHTS, index)
    matrices = [
        _gaussian(rng, rows, cols, 1.0 / math.sqrt(rows), precision)
        for rows, cols in GqaWeights.shapes(cfg)
    ]
    return GqaWeights.from_matrices(cfg, matrices)


def gen_sequence(
    seed: int, length: int, d: int, precision: Precision = Precision.F64, index: int = 0
) -> Matrix:
    """Standard-normal (L, d) activations from the inputs stream."""
    return _gaussian(rng_for(seed, Stream.INPUTS, index), length, d, 1.0, precision)


def model_from_mapping(section: dict) -> ModelConfig:
    """Build a ModelConfig from a ``[model]`` config section."""
    keys = ("d", "d_c", "d_r", "d_k_prime", "d_v", "n_heads")
    dims = {key: int(section[key]) for key in keys}
    rope = RopeConfig(dim=dims["d_r"], base=float(section.get("rope_base", 10000.0)))
    return ModelConfig(rope=rope, **dims)


def random_model(
    rng: np.random.Generator, max_d: int = 32, max_heads: int = 4
) -> ModelConfig:
    """A small random model shape for trial sweeps."""
    d = int(rng.integers(8, max_d + 1))
    d_c = int(rng.integers(2, d))
    d_r = 2 * int(rng.integers(1, 5))
    return ModelConfig(
        d=d,
        d_c=d_c,
        d_r=d_r,
        d_k_prime=int(rng.integers(2, 17)),
        d_v=int(rng.integers(2, 17)),
        n_heads=int(rng.integers(1, max_heads + 1)),
    )
