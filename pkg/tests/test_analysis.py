import math
from dataclasses import replace

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from latent_condense.analysis import (
    check_proposition1,
    check_theorem1,
    expected_loss,
    measure_deviations,
    theorem1_bound,
)
from latent_condense.core import softmax_rows
from latent_condense.errors import ConsistencyError, PreconditionError
from latent_condense.harness import (
    Stream,
    gen_sequence,
    gen_weights,
    random_model,
    rng_for,
)
from latent_condense.lca import (
    LatentCache,
    LcaConfig,
    MaskPolicy,
    condense_prefix,
    partition,
    prefill,
)
from latent_condense.mla import (
    LatentState,
    MlaWeights,
    ModelConfig,
    project_latents,
    reconstruct_head,
)

nonneg = st.floats(min_value=0, max_value=10, allow_nan=False)


# -- bound -------------------------------------------------------------------


def test_bound_vanishes_without_deviation():
    assert theorem1_bound(3.0, 5.0, 0.0, 0.0, 16) == 0.0


def test_bound_closed_form():
    d_k = 16
    bound = theorem1_bound(1.0, 2.0, math.sqrt(d_k) / 2, 0.5, d_k)
    assert bound == pytest.approx(2 * (math.e - 1) + 0.5)
    assert bound == pytest.approx(3.9366, abs=1e-4)


@given(nonneg, nonneg, nonneg, nonneg, nonneg)
def test_bound_is_monotone(q, v, dk, dv, bump):
    base = theorem1_bound(q, v, dk, dv, 8)
    assert theorem1_bound(q + bump, v, dk, dv, 8) >= base
    assert theorem1_bound(q, v + bump, dk, dv, 8) >= base
    assert theorem1_bound(q, v, dk + bump, dv, 8) >= base
    assert theorem1_bound(q, v, dk, dv + bump, 8) >= base


@given(st.floats(0.01, 5), st.floats(0.01, 5), st.floats(0.01, 2))
def test_bound_is_convex_in_key_deviation(q, v, step):
    values = [theorem1_bound(q, v, i * step, 0.0, 4) for i in range(3)]
    assert values[0] - 2 * values[1] + values[2] >= -1e-12


def test_bound_rejects_negative_inputs():
    with pytest.raises(PreconditionError):
        theorem1_bound(-1.0, 1.0, 0.0, 0.0, 4)
    with pytest.raises(PreconditionError):
        theorem1_bound(1.0, 1.0, 0.0, 0.0, 0)


# -- deviations --------------------------------------------------------------


def _prefilled(seed, cfg, lca, length):
    w = gen_weights(seed, cfg)
    x = gen_sequence(seed, length, cfg.d)
    _, cache = prefill(x, w, cfg, lca)
    return project_latents(x, w, cfg), cache, w


def test_single_token_groups_have_zero_deviation(small_model):
    lca = LcaConfig(g=1, w=0, n_summary_queries=4)
    state, cache, w = _prefilled(1, small_model, lca, 20)
    report = measure_deviations(state, cache, w)
    assert report.delta_k_max == 0.0
    assert report.delta_v_max == 0.0
    assert report.condensed_tokens == 20


def test_identical_group_members_have_zero_value_deviation():
    """Integer-valued latents and weights keep every step of condensation exact."""
    rng = np.random.default_rng(2)
    cfg = ModelConfig(d=8, d_c=4, d_r=2, d_k_prime=4, d_v=3, n_heads=2)
    g, m, local = 4, 3, 2
    length = g * m + local

    def ints(*shape):
        return rng.integers(-2, 3, size=shape).astype(float)

    w = MlaWeights(
        w_dq=ints(8, 4),
        w_dkv=ints(8, 4),
        w_uq=[ints(4, 4) for _ in range(2)],
        w_uk=[ints(4, 4) for _ in range(2)],
        w_uv=[ints(4, 3) for _ in range(2)],
        w_qr=[np.zeros((4, 2)) for _ in range(2)],
        w_kr=ints(8, 2),
    )
    c_kv = np.concatenate([np.repeat(ints(m, 4), g, axis=0), ints(local, 4)])
    k_r = np.concatenate([np.repeat(ints(m, 2), g, axis=0), ints(local, 2)])
    state = LatentState(
        c_q=ints(length, 4), c_kv=c_kv, k_r=k_r, positions=np.arange(length)
    )

    lca = LcaConfig(g=g, w=local, n_summary_queries=4)
    heads = [reconstruct_head(state, w, cfg, h) for h in range(cfg.n_heads)]
    reps = condense_prefix(
        state,
        [q for q, _, _ in heads],
        [k for _, k, _ in heads],
        partition(length, lca),
        cfg.d_k,
        lca,
    )
    cache = LatentCache(
        reps=reps,
        buffer_c=state.c_kv[g * m :],
        buffer_kr=state.k_r[g * m :],
        buffer_positions=state.positions[g * m :],
        buffer_queries=tuple(q[-4:] for q, _, _ in heads),
        total_tokens=length,
    )
    report = measure_deviations(state, cache, w)
    assert report.delta_v_max == 0.0
    assert report.delta_k_max == 0.0
    assert all(np.array_equal(rep.alpha, np.full(g, 0.25)) for rep in reps)


def test_deviations_match_double_loop_oracle(small_model):
    lca = LcaConfig(g=5, w=6, n_summary_queries=4)
    state, cache, w = _prefilled(3, small_model, lca, 16)
    assert cache.m == 2
    report = measure_deviations(state, cache, w)

    delta_k = delta_v = 0.0
    ratios_k, ratios_v = [], []
    for h in range(small_model.n_heads):
        for j, rep in enumerate(cache.reps):
            k_rep = np.concatenate([rep.c_rep @ w.w_uk[h], rep.k_r_rep])
            v_rep = rep.c_rep @ w.w_uv[h]
            for i in range(j * 5, (j + 1) * 5):
                k_i = np.concatenate([state.c_kv[i] @ w.w_uk[h], state.k_r[i]])
                v_i = state.c_kv[i] @ w.w_uv[h]
                delta_k = max(delta_k, np.linalg.norm(k_i - k_rep))
                delta_v = max(delta_v, np.linalg.norm(v_i - v_rep))
                ratios_k.append(np.linalg.norm(k_i - k_rep) / np.linalg.norm(k_i))
                ratios_v.append(np.linalg.norm(v_i - v_rep) / np.linalg.norm(v_i))

    assert report.delta_k_max == pytest.approx(delta_k, abs=1e-12)
    assert report.delta_v_max == pytest.approx(delta_v, abs=1e-12)
    assert report.mean_rel_k == pytest.approx(np.mean(ratios_k), abs=1e-12)
    assert report.mean_rel_v == pytest.approx(np.mean(ratios_v), abs=1e-12)
    assert len(report.per_group) == 2
    assert (report.condensed_tokens, report.local_tokens) == (10, 6)
    np.testing.assert_array_equal(report.token_delta_k[10:], 0.0)
    np.testing.assert_array_equal(report.token_delta_v[10:], 0.0)


def test_zero_tokens_are_left_out_of_relative_means(small_model):
    w = gen_weights(8, small_model)
    x = gen_sequence(8, 24, small_model.d)
    x[:2] = 0.0
    _, cache = prefill(x, w, small_model, LcaConfig(g=4, w=8, n_summary_queries=4))
    report = measure_deviations(project_latents(x, w, small_model), cache, w)
    assert report.token_delta_k[0] > 0
    assert np.isfinite(report.mean_rel_k) and np.isfinite(report.mean_rel_v)
    assert report.mean_rel_k > 0


def test_deviations_reject_foreign_cache(small_model):
    state, cache, w = _prefilled(4, small_model, LcaConfig(g=4, w=8), 24)
    other, _, _ = _prefilled(5, small_model, LcaConfig(g=4, w=8), 24)
    with pytest.raises(ConsistencyError):
        measure_deviations(other, cache, w)
    with pytest.raises(ConsistencyError):
        measure_deviations(state, replace(cache, total_tokens=25), w)


# -- bound check -------------------------------------------------------------


def test_theorem_check_is_exact_for_single_token_groups(small_model):
    lca = LcaConfig(g=1, w=0, mask_policy=MaskPolicy.NONE)
    state, cache, w = _prefilled(6, small_model, lca, 20)
    report = check_theorem1(state, cache, w, small_model)
    assert report.bound == 0.0
    assert report.actual_error_max <= 1e-12
    assert report.satisfied


def test_theorem_holds_on_random_instances():
    for trial in range(200):
        rng = rng_for(31, Stream.TRIALS, trial)
        cfg = random_model(rng, max_d=16)
        length = int(rng.integers(1, 65))
        lca = LcaConfig(
            g=int(rng.integers(1, 9)),
            w=int(rng.integers(0, 17)),
            n_summary_queries=int(rng.integers(1, 17)),
            mask_policy=MaskPolicy.NONE,
        )
        w = gen_weights(31, cfg, index=trial)
        x = gen_sequence(31, length, cfg.d, index=trial)
        _, cache = prefill(x, w, cfg, lca)
        report = check_theorem1(project_latents(x, w, cfg), cache, w, cfg)
        assert report.satisfied, (trial, report)
        assert report.actual_error_max <= report.bound + 1e-9


def test_scaling_values_scales_norm_and_error(small_model):
    lca = LcaConfig(g=4, w=4, n_summary_queries=4, mask_policy=MaskPolicy.NONE)
    state, cache, w = _prefilled(7, small_model, lca, 30)
    doubled = replace(w, w_uv=[2.0 * m for m in w.w_uv])
    base = check_theorem1(state, cache, w, small_model)
    scaled = check_theorem1(state, cache, doubled, small_model)
    assert scaled.v_norm == pytest.approx(2 * base.v_norm, rel=1e-12)
    assert scaled.actual_error_max == pytest.approx(2 * base.actual_error_max, rel=1e-9)
    assert scaled.satisfied and base.satisfied


# -- pooling optimality ------------------------------------------------------


def test_single_latent_is_its_own_minimiser():
    latents = np.array([[1.5, -2.0, 0.25]])
    report = check_proposition1(latents, np.array([1.0]))
    assert report.passed
    assert expected_loss(latents, np.array([1.0]), latents[0]) == 0.0


def test_symmetric_pair_closed_form():
    latents = np.array([[-1.0], [1.0]])
    alpha = np.array([0.5, 0.5])
    assert expected_loss(latents, alpha, np.array([0.0])) == 1.0
    for eps in (1e-2, 1e-1, 1.0):
        loss = expected_loss(latents, alpha, np.array([eps]))
        assert loss == pytest.approx(1 + eps**2)
    assert check_proposition1(latents, alpha)


def test_one_hot_weights_select_the_point():
    latents = np.array([[0.0, 1.0], [3.0, -4.0], [2.0, 2.0]])
    report = check_proposition1(latents, np.array([0.0, 1.0, 0.0]))
    assert report.passed
    assert expected_loss(latents, np.array([0.0, 1.0, 0.0]), latents[1]) == 0.0


def test_weighted_pooling_is_optimal_on_random_groups():
    for trial in range(200):
        rng = rng_for(41, Stream.TRIALS, trial)
        g, d_c = int(rng.integers(1, 17)), int(rng.integers(1, 17))
        latents = rng.standard_normal((g, d_c)) * rng.uniform(0.1, 10.0)
        alpha = softmax_rows(2.0 * rng.standard_normal((1, g)))[0]
        report = check_proposition1(latents, alpha, rng)
        assert report.passed, (trial, report)
        assert report.checks == 301


@given(st.integers(2, 8), st.integers(0, 2**16))
def test_any_other_candidate_is_strictly_worse(g, seed):
    rng = np.random.default_rng(seed)
    latents = rng.standard_normal((g, 3))
    alpha = rng.dirichlet(np.ones(g))
    c_rep = alpha @ latents
    other = c_rep + rng.standard_normal(3) * 0.1
    assert expected_loss(latents, alpha, other) > expected_loss(latents, alpha, c_rep)


def test_proposition_check_rejects_non_distributions():
    with pytest.raises(PreconditionError):
        check_proposition1(np.ones((2, 2)), np.array([0.7, 0.7]))
