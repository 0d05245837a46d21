import numpy as np
import pytest

from latent_condense.errors import ConfigError, ShapeError
from latent_condense.gqa import (
    GqaConfig,
    GqaWeights,
    gqa_condense_group,
    gqa_decode_step,
    gqa_dense_attention,
    gqa_empty_cache,
    gqa_prefill,
    kv_summary_queries,
)
from latent_condense.harness import Stream, gen_gqa_weights, gen_sequence, rng_for


def _random_gqa(rng, **overrides) -> GqaConfig:
    n_kv = int(rng.integers(1, 4))
    dims = dict(
        d=int(rng.integers(8, 33)),
        n_q_heads=n_kv * int(rng.integers(1, 4)),
        n_kv_heads=n_kv,
        d_head=2 * int(rng.integers(1, 9)),
    )
    dims.update(overrides)
    return GqaConfig(**dims)


def test_config_requires_divisible_heads():
    with pytest.raises(ConfigError):
        GqaConfig(d=8, n_q_heads=6, n_kv_heads=4, d_head=4)


def test_config_shares_condensation_settings(small_gqa):
    assert small_gqa.heads_per_kv == 2
    assert small_gqa.lca.threshold == 12


def test_weights_validate_shapes(small_gqa, gqa_weights):
    with pytest.raises(ShapeError):
        GqaWeights.from_matrices(
            small_gqa, [gqa_weights.w_q, gqa_weights.w_k, gqa_weights.w_q]
        )


def test_condense_single_member_group():
    rng = np.random.default_rng(0)
    keys, values = rng.standard_normal((1, 4)), rng.standard_normal((1, 4))
    k_rep, v_rep, anchor = gqa_condense_group(rng.standard_normal(4), keys, values)
    assert anchor == 0
    np.testing.assert_array_equal(k_rep, keys[0])
    np.testing.assert_array_equal(v_rep, values[0])


def test_condense_identical_keys_averages_values():
    values = np.arange(12.0).reshape(4, 3)
    _, v_rep, anchor = gqa_condense_group(np.ones(3), np.ones((4, 3)), values)
    assert anchor == 0
    np.testing.assert_allclose(v_rep, values.mean(axis=0))


def test_condense_matches_convex_combination_oracle():
    rng = np.random.default_rng(1)
    q_bar = rng.standard_normal(6)
    keys, values = rng.standard_normal((4, 6)), rng.standard_normal((4, 6))
    k_rep, v_rep, anchor = gqa_condense_group(q_bar, keys, values)
    logits = keys @ q_bar / np.sqrt(6)
    alpha = np.exp(logits - logits.max())
    alpha /= alpha.sum()
    expected = sum(a * v for a, v in zip(alpha, values))
    np.testing.assert_allclose(v_rep, expected, atol=1e-12)
    assert anchor == int(np.argmax(alpha))
    assert k_rep.tobytes() == keys[anchor].tobytes()


def test_kv_summary_queries_pool_each_query_group(small_gqa):
    queries = np.stack(
        [np.full((5, small_gqa.d_head), float(h)) for h in range(small_gqa.n_q_heads)]
    )
    q_bar = kv_summary_queries(queries, 3, small_gqa)
    np.testing.assert_allclose(q_bar[0], 0.5)
    np.testing.assert_allclose(q_bar[1], 2.5)


@pytest.mark.parametrize("trial", range(20))
def test_identity_condensation_matches_dense_gqa(trial):
    rng = rng_for(21, Stream.TRIALS, trial)
    cfg = _random_gqa(rng, g=1, w=0, n_summary_queries=4)
    length = int(rng.integers(1, 49))
    weights = gen_gqa_weights(21, cfg, index=trial)
    x = gen_sequence(21, length, cfg.d, index=trial)
    out, cache = gqa_prefill(x, weights, cfg)
    assert np.abs(out - gqa_dense_attention(x, weights, cfg)).max() <= 1e-8
    assert (cache.m, cache.buffer_len) == (length, 0)


@pytest.mark.parametrize("trial", range(20))
def test_fallback_is_bit_identical_to_dense_gqa(trial):
    rng = rng_for(22, Stream.TRIALS, trial)
    cfg = _random_gqa(rng, g=4, w=16)
    length = int(rng.integers(1, 20))
    weights = gen_gqa_weights(22, cfg, index=trial)
    x = gen_sequence(22, length, cfg.d, index=trial)
    out, cache = gqa_prefill(x, weights, cfg)
    assert out.tobytes() == gqa_dense_attention(x, weights, cfg).tobytes()
    assert cache.buffer_len == length


def test_one_kv_head_per_query_head():
    cfg = GqaConfig(
        d=12, n_q_heads=3, n_kv_heads=3, d_head=4, g=1, w=0, n_summary_queries=2
    )
    weights = gen_gqa_weights(5, cfg)
    x = gen_sequence(5, 20, cfg.d)
    out, cache = gqa_prefill(x, weights, cfg)
    np.testing.assert_allclose(out, gqa_dense_attention(x, weights, cfg), atol=1e-8)
    assert cache.rep_keys.shape == (3, 20, 4)


def test_prefill_anchors_lie_in_their_groups(small_gqa, gqa_weights):
    x = gen_sequence(8, 30, small_gqa.d)
    _, cache = gqa_prefill(x, gqa_weights, small_gqa)
    assert (cache.m, cache.buffer_len) == (5, 10)
    for j in range(cache.m):
        anchors = cache.anchor_positions[:, j]
        assert np.all((4 * j <= anchors) & (anchors < 4 * (j + 1)))


def test_decode_after_identity_prefill_matches_dense():
    cfg = GqaConfig(
        d=16, n_q_heads=4, n_kv_heads=2, d_head=6, g=1, w=0, n_summary_queries=4
    )
    weights = gen_gqa_weights(6, cfg)
    x = gen_sequence(6, 24, cfg.d)
    _, cache = gqa_prefill(x[:16], weights, cfg)
    for t in range(16, 24):
        out, cache = gqa_decode_step(cache, x[t], weights, cfg)
        dense = gqa_dense_attention(x[: t + 1], weights, cfg)
        np.testing.assert_allclose(out, dense[-1], atol=1e-8)


def test_decode_cardinality(small_gqa, gqa_weights):
    cache = gqa_empty_cache(small_gqa)
    g, w = small_gqa.g, small_gqa.w
    for step, x in enumerate(gen_sequence(9, 500, small_gqa.d), start=1):
        _, cache = gqa_decode_step(cache, x, gqa_weights, small_gqa)
        assert cache.m * g + cache.buffer_len == cache.total_tokens == step
        if step >= w + g:
            assert cache.m == (step - w) // g
            assert w <= cache.buffer_len <= w + g - 1
        assert cache.entries == cache.m + cache.buffer_len
