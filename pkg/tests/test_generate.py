import numpy as np
import pytest

from latent_condense.core import Precision
from latent_condense.errors import ConfigError
from latent_condense.harness import (
    Stream,
    gen_sequence,
    gen_weights,
    model_from_mapping,
    rng_for,
)
from latent_condense.mla import ModelConfig


def test_same_seed_reproduces_bits(small_model):
    a, b = gen_weights(3, small_model), gen_weights(3, small_model)
    assert all(x.tobytes() == y.tobytes() for x, y in zip(a.matrices(), b.matrices()))
    assert gen_sequence(3, 20, 16).tobytes() == gen_sequence(3, 20, 16).tobytes()


def test_different_seeds_differ_almost_everywhere():
    a, b = gen_sequence(1, 100, 16), gen_sequence(2, 100, 16)
    assert np.mean(a != b) >= 0.99


def test_streams_and_indices_are_independent():
    assert not np.array_equal(gen_sequence(5, 10, 4), gen_sequence(5, 10, 4, index=1))
    weights_draw = rng_for(5, Stream.WEIGHTS).standard_normal(8)
    inputs_draw = rng_for(5, Stream.INPUTS).standard_normal(8)
    assert not np.array_equal(weights_draw, inputs_draw)


def test_sequence_is_standard_normal():
    x = gen_sequence(0, 10000, 8)
    assert np.all(np.abs(x.std(axis=0) - 1.0) < 0.2)
    assert np.all(np.abs(x.mean(axis=0)) < 0.1)


def test_weight_scale_follows_fan_in():
    cfg = ModelConfig(d=10000, d_c=2, d_r=2, d_k_prime=2, d_v=2, n_heads=1)
    w = gen_weights(0, cfg)
    expected = 1.0 / np.sqrt(cfg.d)
    assert np.all(np.abs(w.w_dkv.std(axis=0) / expected - 1.0) < 0.2)


def test_precision_sets_dtype(small_model):
    w = gen_weights(0, small_model, Precision.F32)
    assert all(m.dtype == np.float32 for m in w.matrices())
    assert gen_sequence(0, 4, 8, Precision.F32).dtype == np.float32


def test_model_from_mapping_reads_rope_base():
    cfg = model_from_mapping(
        dict(d=16, d_c=4, d_r=4, d_k_prime=4, d_v=4, n_heads=2, rope_base=500.0)
    )
    assert cfg.rotary.base == 500.0
    assert cfg.d_k == 8
    with pytest.raises(ConfigError):
        model_from_mapping(dict(d=4, d_c=4, d_r=4, d_k_prime=4, d_v=4, n_heads=2))
