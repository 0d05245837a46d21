import json
from copy import deepcopy

import pytest
import toml

from latent_condense import config
from latent_condense.app import (
    apply_overrides,
    build_parser,
    get_config,
    main,
    output_path,
)
from latent_condense.errors import ConfigError


def _defaults():
    return deepcopy(config.defaults)


def _records(path):
    return [json.loads(line) for line in path.read_text(encoding="utf-8").splitlines()]


@pytest.fixture
def long_context(tmp_path):
    path = tmp_path / "long.toml"
    path.write_text(toml.dumps({"lca": {"g": 16, "w": 1024, "n_summary_queries": 16}}))
    return path


def test_get_config_overlays_the_file(long_context):
    conf = get_config(str(long_context))
    assert conf["lca"]["w"] == 1024
    assert conf["lca"]["mask_policy"] == "rep_causal"
    assert conf["model"] == config.defaults["model"]


def test_get_config_without_file_returns_defaults(tmp_path, monkeypatch):
    monkeypatch.setenv("HOME", str(tmp_path))
    assert get_config() == config.defaults
    assert get_config() is not config.defaults


def test_get_config_reads_the_home_file(tmp_path, monkeypatch):
    monkeypatch.setenv("HOME", str(tmp_path))
    (tmp_path / config.config_file_name).write_text('seed = 9\n[model]\nn_heads = 2\n')
    conf = get_config()
    assert conf["seed"] == 9
    assert conf["model"]["n_heads"] == 2
    assert conf["model"]["d"] == config.defaults["model"]["d"]


def test_missing_or_broken_file_is_a_config_error(tmp_path):
    with pytest.raises(ConfigError):
        get_config(str(tmp_path / "absent.toml"))
    broken = tmp_path / "broken.toml"
    broken.write_text("[lca\ng = ")
    with pytest.raises(ConfigError):
        get_config(str(broken))


def test_subcommands_select_the_mode():
    parser = build_parser()
    cases = {
        ("verify", "theorem"): "verify-theorem",
        ("verify", "proposition"): "verify-proposition",
        ("sweep",): "sweep",
        ("io-check",): "io-check",
        ("run", "--mode", "gqa"): "gqa",
        ("run",): "prefill",
    }
    for argv, mode in cases.items():
        conf = apply_overrides(_defaults(), parser.parse_args(argv))
        assert conf["mode"] == mode, argv


def test_flags_override_the_file():
    argv = ["run", "--seed", "4", "--length", "99", "--sweep-g", "2,4"]
    args = build_parser().parse_args(argv)
    conf = apply_overrides(_defaults(), args)
    assert (conf["seed"], conf["length"]) == (4, 99)
    assert conf["sweep"]["g"] == [2, 4]


def test_output_path_precedence(tmp_path, monkeypatch):
    parser = build_parser()
    conf = _defaults()
    conf["mode"] = "cost"
    monkeypatch.setenv(config.output_dir_env, str(tmp_path))
    bare = parser.parse_args(["cost"])
    assert output_path(bare, conf) == tmp_path / "cost-seed0.jsonl"
    conf["output"] = "from-file.jsonl"
    assert output_path(bare, conf).name == "from-file.jsonl"
    flagged = parser.parse_args(["cost", "--out", "x.jsonl"])
    assert output_path(flagged, conf).name == "x.jsonl"


def test_cost_at_long_context(long_context, tmp_path):
    out = tmp_path / "cost.jsonl"
    code = main(
        ["cost", "--config", str(long_context), "--length", "131072", "--out", str(out)]
    )
    assert code == 0
    records = _records(out)
    assert [r["record"] for r in records] == ["config", "cost", "summary"]
    cost = records[1]
    assert (cost["m"], cost["k"]) == (8128, 1024)
    assert abs(cost["cache_ratio"] - 0.0698) < 0.001
    assert records[-1]["version"] == config.version


def test_default_output_directory_from_environment(tmp_path, monkeypatch):
    monkeypatch.setenv("HOME", str(tmp_path))
    monkeypatch.setenv(config.output_dir_env, str(tmp_path / "reports"))
    assert main(["cost", "--length", "4096"]) == 0
    assert (tmp_path / "reports" / "cost-seed0.jsonl").exists()


def test_verify_theorem_from_the_command_line(tmp_path):
    out = tmp_path / "theorem.jsonl"
    code = main(
        ["verify", "theorem", "--trials", "3", "--seed", "5", "--out", str(out)]
    )
    assert code == 0
    assert sum(r["record"] == "trial" for r in _records(out)) == 3


def test_bad_configuration_exits_with_code_two(tmp_path, capsys):
    bad = tmp_path / "bad.toml"
    bad.write_text(toml.dumps({"lca": {"mask_policy": "sideways"}}))
    assert main(["cost", "--config", str(bad), "--out", str(tmp_path / "x.jsonl")]) == 2
    assert "config" in capsys.readouterr().err


def test_invalid_layers_exit_with_code_two(tmp_path):
    out = str(tmp_path / "x.jsonl")
    argv = ["cost", "--length", "1", "--layers", "0", "--out", out]
    assert main(argv) == 2
