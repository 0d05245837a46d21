"""Experiment modes: build seeded inputs, run one mode, emit report records."""
from __future__ import annotations

import itertools
import logging
import tempfile
import time
from dataclasses import asdict, dataclass, field
from enum import Enum
from pathlib import Path
from typing import Any, Callable, Dict, List, Mapping, Tuple

import numpy as np
from dependency_injector.wiring import Provide, inject

from .. import config
from ..analysis import (
    check_proposition1,
    check_theorem1,
    cost_model,
    measure_deviations,
)
from ..containers import Container
from ..core import Matrix, Precision, RopeConfig, softmax_rows
from ..errors import ConfigError, InvariantViolation, LcaError
from ..gqa import GqaCache, GqaConfig, gqa_decode_step, gqa_dense_attention, gqa_prefill
from ..lca import (
    Fallback,
    LatentCache,
    LcaConfig,
    MaskPolicy,
    PoolMode,
    decode_step,
    partition,
    prefill,
)
from ..mla import LatentState, MlaWeights, ModelConfig, dense_attention, project_latents
from . import formats
from .generate import (
    Stream,
    gen_gqa_weights,
    gen_sequence,
    gen_weights,
    model_from_mapping,
    random_model,
    rng_for,
)
from .reporting import ReportWriter, digest, summary_table

log = logging.getLogger(__name__)

PoolingPair = Tuple[PoolMode, PoolMode]


class Mode(str, Enum):
    PREFILL = "prefill"
    DECODE = "decode"
    SWEEP = "sweep"
    VERIFY_THEOREM = "verify-theorem"
    VERIFY_PROPOSITION = "verify-proposition"
    COST = "cost"
    GQA = "gqa"
    IO_CHECK = "io-check"


@dataclass(frozen=True)
class RunConfig:
    """Everything a run depends on. The seed determines all randomness."""

    seed: int
    length: int
    precision: Precision
    mode: Mode
    model: ModelConfig
    lca: LcaConfig
    gqa: GqaConfig
    trials: int = 200
    decode_tokens: int = 64
    layers: int = 1
    sweep_g: Tuple[int, ...] = ()
    sweep_w: Tuple[int, ...] = ()
    sweep_queries: Tuple[int, ...] = ()
    pooling: Tuple[PoolingPair, ...] = ()

    def __post_init__(self) -> None:
        if self.seed < 0:
            raise ConfigError(f"seed must be nonnegative, got {self.seed}")
        if self.length < 1:
            raise ConfigError(f"length must be >= 1, got {self.length}")
        if self.trials < 0 or self.decode_tokens < 0 or self.layers < 1:
            raise ConfigError("trials and decode_tokens must be >= 0 and layers >= 1")

    @classmethod
    def from_mapping(cls, conf: Mapping[str, Any]) -> "RunConfig":
        """Build a run config from a merged configuration mapping.

        Raises:
            ConfigError: On missing keys or invalid values.
        """
        try:
            model = model_from_mapping(conf["model"])
            lca = LcaConfig(**conf["lca"])
            section = conf["gqa"]
            gqa = GqaConfig(
                d=int(section["d"]),
                n_q_heads=int(section["n_q_heads"]),
                n_kv_heads=int(section["n_kv_heads"]),
                d_head=int(section["d_head"]),
                g=lca.g,
                w=lca.w,
                n_summary_queries=lca.n_summary_queries,
                mask_policy=lca.mask_policy,
                rope=RopeConfig(dim=int(section["d_head"]), base=model.rotary.base),
            )
            sweep = conf.get("sweep", {})
            return cls(
                seed=int(conf["seed"]),
                length=int(conf["length"]),
                precision=Precision(conf["precision"]),
                mode=Mode(conf["mode"]),
                model=model,
                lca=lca,
                gqa=gqa,
                trials=int(conf.get("trials", 200)),
                decode_tokens=int(conf.get("decode_tokens", 64)),
                layers=int(conf.get("layers", 1)),
                sweep_g=tuple(int(v) for v in sweep.get("g", (lca.g,))),
                sweep_w=tuple(int(v) for v in sweep.get("w", (lca.w,))),
                sweep_queries=tuple(
                    int(v)
                    for v in sweep.get("n_summary_queries", (lca.n_summary_queries,))
                ),
                pooling=_pooling_pairs(sweep.get("pooling", "configured"), lca),
            )
        except (KeyError, TypeError, ValueError) as error:
            raise ConfigError(f"invalid configuration: {error}") from error

    def to_dict(self) -> Dict[str, Any]:
        return asdict(self)


def _pooling_pairs(value: Any, lca: LcaConfig) -> Tuple[PoolingPair, ...]:
    if value == "all":
        return tuple(itertools.product(PoolMode, PoolMode))
    if value == "configured":
        return ((lca.semantic_pool, lca.positional_pool),)
    return tuple((PoolMode(sem), PoolMode(pos)) for sem, pos in value)


@dataclass
class RunReport:
    config: Dict[str, Any]
    records: List[Dict[str, Any]] = field(default_factory=list)
    wall_time: float = 0.0
    version: str = config.version
    failures: int = 0

    @property
    def payload(self) -> List[Dict[str, Any]]:
        """Every record with the wall-time field dropped."""
        return [
            {k: v for k, v in record.items() if k != "wall_time"}
            for record in self.records
        ]


# -- shared pieces ---------------------------------------------------------


def _mla_inputs(cfg: RunConfig) -> Tuple[MlaWeights, Matrix, LatentState]:
    weights = gen_weights(cfg.seed, cfg.model, cfg.precision)
    x = gen_sequence(cfg.seed, cfg.length, cfg.model.d, cfg.precision)
    return weights, x, project_latents(x, weights, cfg.model)


def _error(out: Matrix, reference: Matrix) -> Dict[str, float]:
    diff = out - reference
    scale = float(np.linalg.norm(reference))
    return {
        "max_abs_error": float(np.abs(diff).max()),
        "rel_error": float(np.linalg.norm(diff)) / scale if scale > 0 else 0.0,
    }


def _prefill_record(
    state: LatentState,
    weights: MlaWeights,
    lca: LcaConfig,
    out: Matrix,
    cache: LatentCache,
    dense: Matrix,
) -> Dict[str, Any]:
    deviations = measure_deviations(state, cache, weights)
    fused = cache.m + cache.buffer_len
    return {
        "length": state.length,
        "g": lca.g,
        "w": lca.w,
        "n_summary_queries": lca.n_summary_queries,
        "semantic_pool": lca.semantic_pool.value,
        "positional_pool": lca.positional_pool.value,
        "fallback": isinstance(partition(state.length, lca), Fallback),
        "m": cache.m,
        "buffer_len": cache.buffer_len,
        "fused_keys": fused,
        "cache_ratio": fused / state.length,
        "output_digest": digest(out),
        "delta_k_max": deviations.delta_k_max,
        "delta_v_max": deviations.delta_v_max,
        "mean_rel_k": deviations.mean_rel_k,
        "mean_rel_v": deviations.mean_rel_v,
        **_error(out, dense),
    }


def _cardinality_ok(m: int, buffer_len: int, total: int, g: int, w: int) -> bool:
    """m·g + buffer == total; once condensing, the buffer stays in [w, w+g−1]."""
    if m * g + buffer_len != total:
        return False
    if total < w + g:
        return m == 0
    return w <= buffer_len <= w + g - 1 and m == (total - w) // g


# -- modes -----------------------------------------------------------------


def _record_rows(record: Mapping[str, Any]) -> List[Tuple[str, Any]]:
    return [(key, value) for key, value in record.items() if key != "record"]


def _run_prefill(cfg: RunConfig, writer: ReportWriter) -> int:
    weights, x, state = _mla_inputs(cfg)
    out, cache = prefill(x, weights, cfg.model, cfg.lca)
    dense = dense_attention(state, weights, cfg.model)
    record = writer.emit(
        "prefill", _prefill_record(state, weights, cfg.lca, out, cache, dense)
    )
    keys = ("length", "m", "buffer_len", "cache_ratio", "max_abs_error", "delta_k_max")
    writer.show(summary_table("prefill", [(key, record[key]) for key in keys]))
    return 0


def _run_decode(cfg: RunConfig, writer: ReportWriter) -> int:
    weights, x, _ = _mla_inputs(cfg)
    _, cache = prefill(x, weights, cfg.model, cfg.lca)
    tokens = gen_sequence(
        cfg.seed, cfg.decode_tokens, cfg.model.d, cfg.precision, index=1
    )
    g, w = cfg.lca.g, cfg.lca.w
    outputs, violations = [], 0
    for token in tokens:
        out, cache = decode_step(cache, token, weights, cfg.model, cfg.lca)
        outputs.append(out)
        violations += not _cardinality_ok(
            cache.m, cache.buffer_len, cache.total_tokens, g, w
        )
    record = writer.emit(
        "decode",
        {
            "steps": cfg.decode_tokens,
            "total_tokens": cache.total_tokens,
            "m": cache.m,
            "buffer_len": cache.buffer_len,
            "violations": violations,
            "output_digest": digest(np.asarray(outputs)),
        },
    )
    writer.show(summary_table("decode", _record_rows(record)))
    return violations


def _run_sweep(cfg: RunConfig, writer: ReportWriter) -> int:
    weights, x, state = _mla_inputs(cfg)
    dense = dense_attention(state, weights, cfg.model)
    cells = itertools.product(cfg.sweep_g, cfg.sweep_w, cfg.sweep_queries, cfg.pooling)
    rows = []
    for g, w, n, (semantic, positional) in cells:
        lca = LcaConfig(
            g=g,
            w=w,
            n_summary_queries=n,
            mask_policy=cfg.lca.mask_policy,
            semantic_pool=semantic,
            positional_pool=positional,
        )
        cell = f"g={g} w={w} n={n} {semantic.value}/{positional.value}"
        log.debug("Sweep cell %s", cell)
        out, cache = prefill(x, weights, cfg.model, lca)
        record = writer.emit(
            "cell", _prefill_record(state, weights, lca, out, cache, dense)
        )
        rows.append((cell, record["cache_ratio"], record["rel_error"]))
    headers = ("cell", "cache ratio", "rel error")
    writer.show(summary_table("sweep", rows, headers=headers))
    return 0


def _run_verify_theorem(cfg: RunConfig, writer: ReportWriter) -> int:
    """Random small f64 instances, mask policy none; each must satisfy the bound."""
    failures = 0
    for trial in range(cfg.trials):
        rng = rng_for(cfg.seed, Stream.TRIALS, trial)
        model = random_model(rng, max_d=16)
        length = int(rng.integers(1, 65))
        lca = LcaConfig(
            g=int(rng.integers(1, 9)),
            w=int(rng.integers(0, 17)),
            n_summary_queries=int(rng.integers(1, 17)),
            mask_policy=MaskPolicy.NONE,
        )
        weights = gen_weights(cfg.seed, model, index=trial)
        x = gen_sequence(cfg.seed, length, model.d, index=trial)
        _, cache = prefill(x, weights, model, lca)
        state = project_latents(x, weights, model)
        report = check_theorem1(state, cache, weights, model)
        failures += not report.satisfied
        trial_info = {"trial": trial, "length": length, "g": lca.g, "w": lca.w}
        writer.emit("trial", {**trial_info, **asdict(report)})
    rows = [("trials", cfg.trials), ("satisfied", cfg.trials - failures)]
    writer.show(summary_table("verify-theorem", rows))
    return failures


def _run_verify_proposition(cfg: RunConfig, writer: ReportWriter) -> int:
    failures = 0
    for trial in range(cfg.trials):
        rng = rng_for(cfg.seed, Stream.TRIALS, trial)
        g = int(rng.integers(1, 17))
        d_c = int(rng.integers(1, 17))
        latents = rng.standard_normal((g, d_c)) * rng.uniform(0.1, 10.0)
        alpha = softmax_rows(2.0 * rng.standard_normal((1, g)))[0]
        report = check_proposition1(latents, alpha, rng)
        failures += not report.passed
        writer.emit("trial", {"trial": trial, "g": g, "d_c": d_c, **asdict(report)})
    rows = [("trials", cfg.trials), ("passed", cfg.trials - failures)]
    writer.show(summary_table("verify-proposition", rows))
    return failures


def _run_cost(cfg: RunConfig, writer: ReportWriter) -> int:
    report = cost_model(cfg.length, cfg.model, cfg.lca, cfg.precision, cfg.layers)
    record = writer.emit("cost", report.to_dict())
    keys = (
        "m",
        "k",
        "dense_cache_entries",
        "lca_cache_entries",
        "cache_ratio",
        "cache_reduction",
        "score_ratio",
    )
    writer.show(summary_table("cost", [(key, record[key]) for key in keys]))
    return 0


def _gqa_cardinality(cache: GqaCache, gcfg: GqaConfig) -> bool:
    return _cardinality_ok(
        cache.m, cache.buffer_len, cache.total_tokens, gcfg.g, gcfg.w
    )


def _run_gqa(cfg: RunConfig, writer: ReportWriter) -> int:
    gcfg = cfg.gqa
    weights = gen_gqa_weights(cfg.seed, gcfg, cfg.precision)
    x = gen_sequence(cfg.seed, cfg.length, gcfg.d, cfg.precision)
    out, cache = gqa_prefill(x, weights, gcfg)
    dense = gqa_dense_attention(x, weights, gcfg)
    prefill_m = cache.m
    violations = 0
    outputs = []
    tokens = gen_sequence(cfg.seed, cfg.decode_tokens, gcfg.d, cfg.precision, index=1)
    for token in tokens:
        step, cache = gqa_decode_step(cache, token, weights, gcfg)
        outputs.append(step)
        violations += not _gqa_cardinality(cache, gcfg)
    record = writer.emit(
        "gqa",
        {
            "length": cfg.length,
            "prefill_m": prefill_m,
            "m": cache.m,
            "buffer_len": cache.buffer_len,
            "total_tokens": cache.total_tokens,
            "cache_ratio": cache.entries / cache.total_tokens,
            "violations": violations,
            "output_digest": digest(out),
            "decode_digest": digest(np.asarray(outputs)),
            **_error(out, dense),
        },
    )
    writer.show(summary_table("gqa", _record_rows(record)))
    return violations


def _run_io_check(cfg: RunConfig, writer: ReportWriter) -> int:
    weights, x, _ = _mla_inputs(cfg)
    _, cache = prefill(x, weights, cfg.model, cfg.lca)
    gqa_weights = gen_gqa_weights(cfg.seed, cfg.gqa, cfg.precision)
    results = []
    with tempfile.TemporaryDirectory() as tmp:
        root = Path(tmp)

        formats.write_weights(root / "weights.mlaw", weights, cfg.model)
        read, model = formats.read_weights(root / "weights.mlaw")
        ok = model == cfg.model and formats.matrices_equal(
            list(weights.matrices()), list(read.matrices())
        )
        results.append(("MLAW", ok, (root / "weights.mlaw").stat().st_size))

        formats.write_gqa_weights(root / "weights.gqaw", gqa_weights, cfg.gqa)
        read_gqa, gcfg = formats.read_gqa_weights(root / "weights.gqaw")
        same_dims = all(
            getattr(gcfg, name) == getattr(cfg.gqa, name)
            for name in ("d", "n_q_heads", "n_kv_heads", "d_head", "rotary")
        )
        ok = same_dims and formats.matrices_equal(
            list(gqa_weights.matrices()), list(read_gqa.matrices())
        )
        results.append(("GQAW", ok, (root / "weights.gqaw").stat().st_size))

        formats.write_cache(root / "cache.lcac", cache, cfg.lca.g, cfg.lca.w)
        read_cache, g, w = formats.read_cache(root / "cache.lcac")
        same_shape = (g, w) == (cfg.lca.g, cfg.lca.w)
        ok = same_shape and formats.caches_equal(cache, read_cache)
        results.append(("LCAC", ok, (root / "cache.lcac").stat().st_size))

    for name, ok, size in results:
        writer.emit("io", {"format": name, "bit_exact": ok, "bytes": size})
    writer.show(summary_table("io-check", [(name, ok) for name, ok, _ in results]))
    return sum(not ok for _, ok, _ in results)


_HANDLERS: Dict[Mode, Callable[[RunConfig, ReportWriter], int]] = {
    Mode.PREFILL: _run_prefill,
    Mode.DECODE: _run_decode,
    Mode.SWEEP: _run_sweep,
    Mode.VERIFY_THEOREM: _run_verify_theorem,
    Mode.VERIFY_PROPOSITION: _run_verify_proposition,
    Mode.COST: _run_cost,
    Mode.GQA: _run_gqa,
    Mode.IO_CHECK: _run_io_check,
}


@inject
def run(cfg: RunConfig, writer: ReportWriter = Provide[Container.writer]) -> RunReport:
    """Run one mode and write its report.

    Args:
        cfg (RunConfig): The run to perform.
        writer (ReportWriter, optional): Report sink. Injected from the container.

    Raises:
        InvariantViolation: After the report is complete, if any check of the mode
            failed.

    Returns:
        RunReport: Config echo, records and timing.
    """
    log.info("Running %s with seed %d", cfg.mode.value, cfg.seed)
    start = time.perf_counter()
    writer.open(cfg.to_dict())
    summary: Dict[str, Any] = {"mode": cfg.mode.value}
    try:
        failures = _HANDLERS[cfg.mode](cfg, writer)
        summary["failures"] = failures
    except LcaError as error:
        summary["error"] = error.category
        raise
    except OSError:
        summary["error"] = "io"
        raise
    except Exception:
        summary["error"] = "internal"
        raise
    finally:
        wall_time = time.perf_counter() - start
        writer.close({**summary, "wall_time": wall_time})

    report = RunReport(
        config=cfg.to_dict(),
        records=list(writer.records),
        wall_time=wall_time,
        failures=failures,
    )
    if failures:
        raise InvariantViolation(f"{failures} {cfg.mode.value} check(s) failed")
    return report
