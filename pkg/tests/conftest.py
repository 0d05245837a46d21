import io
import os
from copy import deepcopy

import hypothesis
import numpy as np
import pytest
from rich.console import Console

from latent_condense import config
from latent_condense.gqa import GqaConfig
from latent_condense.harness import (
    ReportWriter,
    gen_gqa_weights,
    gen_sequence,
    gen_weights,
)
from latent_condense.mla import ModelConfig

np.seterr(all="warn")

hypothesis.settings.register_profile("ci", max_examples=200, deadline=None)
hypothesis.settings.register_profile("dev", max_examples=50, deadline=None)
hypothesis.settings.register_profile("fast", max_examples=5, deadline=None)
hypothesis.settings.register_profile(
    "debugger", report_multiple_bugs=False, deadline=None
)
hypothesis.settings.load_profile(os.getenv("HYPOTHESIS_PROFILE", "dev"))


@pytest.fixture
def small_model() -> ModelConfig:
    return ModelConfig(d=16, d_c=8, d_r=4, d_k_prime=8, d_v=6, n_heads=3)


@pytest.fixture
def weights(small_model):
    return gen_weights(7, small_model)


@pytest.fixture
def tokens(small_model):
    return gen_sequence(7, 40, small_model.d)


@pytest.fixture
def small_gqa() -> GqaConfig:
    return GqaConfig(
        d=16, n_q_heads=4, n_kv_heads=2, d_head=6, g=4, w=8, n_summary_queries=4
    )


@pytest.fixture
def gqa_weights(small_gqa):
    return gen_gqa_weights(7, small_gqa)


@pytest.fixture
def quiet_writer(tmp_path) -> ReportWriter:
    return ReportWriter(tmp_path / "report.jsonl", console=Console(file=io.StringIO()))


@pytest.fixture
def run_mapping():
    """Default configuration scaled down for fast runs."""
    conf = deepcopy(config.defaults)
    conf.update(length=48, trials=10, decode_tokens=40)
    conf["model"].update(d=16, d_c=8, d_r=4, d_k_prime=8, d_v=6, n_heads=2)
    conf["lca"].update(g=4, w=8, n_summary_queries=4)
    conf["gqa"].update(d=16, n_q_heads=4, n_kv_heads=2, d_head=6)
    conf["sweep"].update(g=[4], w=[8], n_summary_queries=[4], pooling="all")
    return conf
