"""JSON Lines report records and rich console summaries."""
from __future__ import annotations

import hashlib
import json
import logging
from dataclasses import asdict, is_dataclass
from enum import Enum
from pathlib import Path
from typing import Any, Dict, Iterable, List, Mapping, Optional, Sequence

import numpy as np
from rich import box
from rich.console import Console
from rich.table import Table

from .. import config

log = logging.getLogger(__name__)


def _plain(value: Any) -> Any:
    """JSON encoder hook for numpy scalars, arrays, enums, paths and dataclasses."""
    if isinstance(value, Enum):
        return value.value
    if isinstance(value, np.generic):
        return value.item()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, Path):
        return str(value)
    if is_dataclass(value) and not isinstance(value, type):
        return asdict(value)
    raise TypeError(f"cannot serialise {type(value).__name__}")


def dumps(record: Mapping[str, Any]) -> str:
    return json.dumps(record, sort_keys=True, default=_plain)


def digest(array: np.ndarray) -> str:
    """sha256 of an array's float64 little-endian bytes."""
    raw = np.ascontiguousarray(array, dtype="<f8").tobytes()
    return hashlib.sha256(raw).hexdigest()


def style(key: str) -> str:
    return config.style_map[config.style][key]


class ReportWriter:
    """Single writer for one run's report records.

    Records are written in the order they are emitted: a ``config`` record
    first, payload records after it, a ``summary`` record last. Without a path
    the records are only kept in memory.
    """

    def __init__(
        self, path: Optional[Path] = None, console: Optional[Console] = None
    ) -> None:
        self.path = Path(path) if path else None
        self.console = console or Console()
        self.records: List[Dict[str, Any]] = []
        self._handle = None

    def open(self, run_config: Mapping[str, Any]) -> None:
        if self.path is not None:
            self.path.parent.mkdir(parents=True, exist_ok=True)
            self._handle = self.path.open("w", encoding="utf-8")
            log.info("Writing report to %s", self.path)
        self.emit("config", dict(run_config))

    def emit(self, kind: str, payload: Mapping[str, Any]) -> Dict[str, Any]:
        record = {"record": kind, **payload}
        line = dumps(record)
        self.records.append(json.loads(line))
        if self._handle is not None:
            self._handle.write(line + "\n")
        return record

    def close(self, summary: Mapping[str, Any]) -> None:
        self.emit("summary", {**summary, "version": config.version})
        if self._handle is not None:
            self._handle.close()
            self._handle = None

    def show(self, table: Table) -> None:
        self.console.print(table)


def summary_table(
    title: str,
    rows: Iterable[Sequence[Any]],
    headers: Sequence[str] = ("metric", "value"),
) -> Table:
    """A table of two or more columns in the configured style; booleans show ok/fail."""
    table = Table(title=title, title_style=style("title"), expand=True, box=box.SIMPLE)
    for i, header in enumerate(headers):
        table.add_column(
            header=header,
            header_style=style("header"),
            justify="left" if i == 0 else "right",
            no_wrap=True,
        )
    for row in rows:
        table.add_row(*(_cell(value) for value in row))
    return table


def _cell(value: Any) -> str:
    if isinstance(value, bool):
        return f"[{style('ok')}]ok[/]" if value else f"[{style('fail')}]fail[/]"
    if isinstance(value, float):
        return f"[{style('number')}]{value:.6g}[/]"
    if isinstance(value, int):
        return f"[{style('number')}]{value}[/]"
    return str(value)
