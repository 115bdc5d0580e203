"""CSV and JSON artifacts.

CSV files start with a block of ``# key: <json>`` metadata lines, followed by
a header row and comma-separated records.  Floats are written with 17
significant digits so a re-run reproduces the file byte for byte.
"""
from __future__ import annotations

import json
import math
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

__all__ = ["fmt", "write_csv", "read_csv", "write_json", "distribution_records"]


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    value = float(value)
    if math.isnan(value):
        return "nan"
    if math.isinf(value):
        return "inf" if value > 0 else "-inf"
    return f"{value:.17g}"


def write_csv(path, header: Sequence[str], rows: Iterable[Sequence], metadata: Mapping[str, Any] | None = None):
    lines = []
    for key, value in (metadata or {}).items():
        lines.append(f"# {key}: {json.dumps(value, sort_keys=True)}")
    lines.append(",".join(header))
    for row in rows:
        lines.append(",".join(v if isinstance(v, str) else fmt(v) for v in row))
    text = "\n".join(lines) + "\n"
    if path is None or str(path) == "-":
        return text
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)
    return text


def read_csv(path) -> tuple[dict, list[str], list[list[str]]]:
    """Return ``(metadata, header, rows)``; values are left as strings."""
    metadata: dict = {}
    header: list[str] = []
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition(":")
            metadata[key.strip()] = json.loads(value)
        elif not header:
            header = line.split(",")
        elif line:
            rows.append(line.split(","))
    return metadata, header, rows


def write_json(path, payload) -> str:
    text = json.dumps(payload, indent=2, sort_keys=True, default=_json_default) + "\n"
    if path is None or str(path) == "-":
        return text
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    Path(path).write_text(text)
    return text


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def distribution_records(dists, n_report: int | None = None):
    """``(t, n, P)`` rows for a sequence of size distributions."""
    for d in dists:
        probs = d.probs if n_report is None else d.probs[: n_report + 1]
        for n, p in enumerate(probs):
            yield (d.t, n, p)
