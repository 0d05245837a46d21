import argparse
import logging
import os
import sys
from copy import deepcopy
from pathlib import Path
from typing import Any, List, Mapping, MutableMapping, Optional, Sequence

import toml
from rich.console import Console
from rich.logging import RichHandler
from rich.text import Text

from . import config
from .containers import Container
from .errors import ConfigError, LcaError

log = logging.getLogger(__name__)

IO_EXIT_CODE = 7

VERIFY_MODES = {"theorem": "verify-theorem", "proposition": "verify-proposition"}
RUN_MODES = (
    "prefill",
    "decode",
    "gqa",
    "sweep",
    "verify-theorem",
    "verify-proposition",
    "cost",
    "io-check",
)
SWEEP_FLAGS = {"sweep_g": "g", "sweep_w": "w", "sweep_queries": "n_summary_queries"}


def _merge(
    base: MutableMapping[str, Any], override: Mapping[str, Any]
) -> MutableMapping[str, Any]:
    """Recursively overlay ``override`` on ``base``."""
    for key, value in override.items():
        if isinstance(value, Mapping) and isinstance(base.get(key), MutableMapping):
            _merge(base[key], value)
        else:
            base[key] = value
    return base


def get_config(path: Optional[str] = None) -> MutableMapping[str, Any]:
    """Retrieve configuration for a run.

    Lookup order: the explicit path, else ``~/.latent-condense.toml`` when it
    exists, else the built-in defaults. File values overlay the defaults.

    Args:
        path (str, optional): Config file given with --config. Defaults to None.

    Raises:
        ConfigError: If the file cannot be read or parsed.

    Returns:
        MutableMapping[str, Any]: The merged configuration.
    """
    conf = deepcopy(config.defaults)
    if path is None:
        home = Path.home() / config.config_file_name
        if not home.exists():
            return conf
        path = str(home)

    try:
        loaded = toml.load(path)
    except (OSError, toml.TomlDecodeError) as error:
        raise ConfigError(f"cannot read config {path}: {error}") from error
    log.info("Loaded configuration from %s", path)
    return _merge(conf, loaded)


def _int_list(value: str) -> List[int]:
    try:
        return [int(item) for item in value.split(",") if item.strip()]
    except ValueError as error:
        raise argparse.ArgumentTypeError(
            f"expected comma-separated integers, got {value!r}"
        ) from error


def build_parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="TOML configuration file")
    common.add_argument("--seed", type=int)
    common.add_argument("--out", help="report file (JSON Lines)")
    common.add_argument("--precision", choices=("f64", "f32"))
    common.add_argument("--length", type=int, help="prompt length L")
    common.add_argument("--trials", type=int)
    common.add_argument("--decode-tokens", type=int)
    common.add_argument("--layers", type=int)
    common.add_argument("--sweep-g", type=_int_list)
    common.add_argument("--sweep-w", type=_int_list)
    common.add_argument("--sweep-queries", type=_int_list)
    common.add_argument("-v", "--verbose", action="count", default=0)

    parser = argparse.ArgumentParser(
        prog="lca", description="Latent-condensed attention experiments."
    )
    commands = parser.add_subparsers(dest="command", required=True)
    run_cmd = commands.add_parser("run", parents=[common], help="run one mode")
    run_cmd.add_argument("--mode", choices=RUN_MODES)
    commands.add_parser(
        "sweep", parents=[common], help="sweep g, w, summary queries and pooling"
    )
    verify = commands.add_parser(
        "verify", parents=[common], help="check the error bound or pooling optimality"
    )
    verify.add_argument("what", choices=tuple(VERIFY_MODES))
    commands.add_parser("cost", parents=[common], help="operation and cache accounting")
    commands.add_parser("io-check", parents=[common], help="binary format round trips")
    return parser


def apply_overrides(
    conf: MutableMapping[str, Any], args: argparse.Namespace
) -> MutableMapping[str, Any]:
    """Overlay command-line flags and the subcommand's mode on the configuration."""
    if args.command == "verify":
        conf["mode"] = VERIFY_MODES[args.what]
    elif args.command != "run":
        conf["mode"] = args.command
    elif args.mode:
        conf["mode"] = args.mode

    for flag in ("seed", "precision", "length", "trials", "decode_tokens", "layers"):
        value = getattr(args, flag)
        if value is not None:
            conf[flag] = value
    sweep = conf.setdefault("sweep", {})
    for flag, key in SWEEP_FLAGS.items():
        value = getattr(args, flag)
        if value:
            sweep[key] = value
    return conf


def output_path(args: argparse.Namespace, conf: Mapping[str, Any]) -> Path:
    """--out, else ``output`` from the file, else <dir>/<mode>-seed<seed>.jsonl."""
    if args.out:
        return Path(args.out)
    if conf.get("output"):
        return Path(conf["output"])
    directory = Path(os.getenv(config.output_dir_env, config.default_output_dir))
    return directory / f"{conf['mode']}-seed{conf['seed']}.jsonl"


def setup_logging(verbosity: int) -> None:
    level = logging.DEBUG
    if verbosity == 0:
        level = logging.WARNING
    elif verbosity == 1:
        level = logging.INFO
    logging.basicConfig(
        level=level,
        format="%(message)s",
        datefmt="[%X]",
        handlers=[RichHandler(console=Console(stderr=True), show_path=False)],
        force=True,
    )


def main(argv: Optional[Sequence[str]] = None) -> int:
    """Parse arguments, run the requested mode and map errors to exit codes."""
    args = build_parser().parse_args(argv)
    setup_logging(args.verbose)
    console = Console(stderr=True)
    style = config.style_map[config.style]["fail"]

    # set up di
    from .harness import runner

    try:
        conf = apply_overrides(get_config(args.config), args)
        cfg = runner.RunConfig.from_mapping(conf)
        container = Container()
        container.config.from_dict({"output": str(output_path(args, conf))})
        container.wire(modules=[runner])
        try:
            runner.run(cfg)
        finally:
            container.unwire()
    except LcaError as error:
        console.print(Text.assemble((error.category, style), f": {error}"))
        return error.exit_code
    except OSError as error:
        console.print(Text.assemble(("io", style), f": {error}"))
        return IO_EXIT_CODE
    return 0


def run() -> None:
    """The entry point."""

    sys.exit(main())


if __name__ == "__main__":
    run()
