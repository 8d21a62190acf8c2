"""Deterministic report emission: JSON, CSV and plot series."""
import io
import json
import math
import sys
from pathlib import Path
from typing import Dict, Iterable, Optional, Sequence, TextIO, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel

PathLike = Union[str, Path]

FLOAT_FORMAT = "%.17g"


def format_real(value: float) -> str:
    """17 significant digits; non-finite values become JSON strings."""
    if math.isnan(value):
        return '"NaN"'
    if math.isinf(value):
        return '"Infinity"' if value > 0 else '"-Infinity"'
    text = FLOAT_FORMAT % value
    if all(ch not in text for ch in ".eE"):
        text += ".0"
    return text


def _plain(value):
    if isinstance(value, BaseModel):
        return value.model_dump()
    if isinstance(value, np.ndarray):
        return value.tolist()
    if isinstance(value, np.bool_):
        return bool(value)
    if isinstance(value, np.integer):
        return int(value)
    if isinstance(value, np.floating):
        return float(value)
    if isinstance(value, Path):
        return str(value)
    return value


def _emit(value, indent: int, level: int) -> str:
    value = _plain(value)
    pad = " " * (indent * (level + 1))
    close = " " * (indent * level)
    if value is None or isinstance(value, (bool, str)):
        return json.dumps(value, ensure_ascii=False)
    if isinstance(value, int):
        return str(value)
    if isinstance(value, float):
        return format_real(value)
    if isinstance(value, dict):
        if not value:
            return "{}"
        items = [f"{pad}{json.dumps(str(k), ensure_ascii=False)}: {_emit(v, indent, level + 1)}" for k, v in value.items()]
        return "{\n" + ",\n".join(items) + "\n" + close + "}"
    if isinstance(value, (list, tuple)):
        if not value:
            return "[]"
        items = [f"{pad}{_emit(v, indent, level + 1)}" for v in value]
        return "[\n" + ",\n".join(items) + "\n" + close + "]"
    raise TypeError(f"cannot serialize {type(value).__name__}")


def to_json(report, indent: int = 2) -> str:
    """
    Serialize a report with fixed key order and exact reals.

    Keys keep their insertion order, so identical inputs give
    byte-identical output.
    """
    return _emit(report, indent, 0) + "\n"


def write_json(report, path: Optional[PathLike] = None, stream: Optional[TextIO] = None) -> str:
    """Write the JSON report to ``path`` (or ``stream``, default stdout)."""
    text = to_json(report)
    if path is not None:
        target = Path(path)
        target.parent.mkdir(parents=True, exist_ok=True)
        with open(target, "w", encoding="utf-8", newline="\n") as handle:
            handle.write(text)
    else:
        (stream or sys.stdout).write(text)
    return text


def frame_to_csv(frame: pd.DataFrame, index: bool = False) -> str:
    buffer = io.StringIO()
    frame.to_csv(buffer, index=index, float_format=FLOAT_FORMAT, lineterminator="\n")
    return buffer.getvalue()


def write_csv(frame: pd.DataFrame, path: PathLike, index: bool = False) -> None:
    """CSV with LF line endings and 17 significant digits."""
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="") as handle:
        handle.write(frame_to_csv(frame, index=index))


def plot_series(series: Dict[str, Tuple[Sequence[float], Sequence[float]]]) -> str:
    """
    Two-column whitespace-separated blocks, one per series.

    Each block starts with a "# name" line and blocks are separated by a
    blank line.
    """
    blocks = []
    for name, (xs, ys) in series.items():
        lines = [f"# {name}"]
        lines.extend(f"{FLOAT_FORMAT % float(x)} {FLOAT_FORMAT % float(y)}" for x, y in zip(xs, ys))
        blocks.append("\n".join(lines))
    return "\n\n".join(blocks) + "\n"


def write_plot_data(series: Dict[str, Tuple[Sequence[float], Sequence[float]]], path: PathLike) -> None:
    target = Path(path)
    target.parent.mkdir(parents=True, exist_ok=True)
    with open(target, "w", encoding="utf-8", newline="\n") as handle:
        handle.write(plot_series(series))


def frame_records(frame: pd.DataFrame, columns: Optional[Iterable[str]] = None) -> list:
    """Rows as plain dicts; NaN cells become None."""
    columns = list(columns) if columns is not None else list(frame.columns)
    records = []
    for row in frame[columns].itertuples(index=False):
        record = {}
        for name, value in zip(columns, row):
            value = _plain(value)
            record[name] = None if isinstance(value, float) and math.isnan(value) else value
        records.append(record)
    return records
