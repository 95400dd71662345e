"""Deterministic, atomic CSV and JSON writers.

Floats are rendered with repr(), the shortest representation that parses
back to the identical double, so rewriting previously written values is
byte-stable. NaN becomes an empty CSV cell or a JSON null. Files land via
a temp file and os.replace so partially written outputs never appear.
"""

from __future__ import annotations

import json
import math
import os
import tempfile
from typing import Iterable, Mapping, Sequence


def format_cell(value: object) -> str:
    """CSV cell rendering: None/NaN -> empty, bool -> true/false,
    float -> round-trip repr, everything else -> str."""
    if value is None:
        return ""
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, float):
        return "" if math.isnan(value) else repr(value)
    return str(value)


def _atomic_write_text(path: str, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix="~")
    try:
        with os.fdopen(fd, "w", encoding="utf-8", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _quote(cell: str) -> str:
    if any(ch in cell for ch in (",", '"', "\n", "\r")):
        return '"' + cell.replace('"', '""') + '"'
    return cell


def write_csv_atomic(path: str, header: Sequence[str],
                     rows: Iterable[Sequence[object]],
                     meta: Mapping[str, object] | None = None) -> None:
    """Write a CSV with optional '# key: value' metadata lines up top."""
    lines: list[str] = []
    for key, value in (meta or {}).items():
        lines.append(f"# {key}: {format_cell(value)}")
    lines.append(",".join(_quote(str(h)) for h in header))
    for row in rows:
        lines.append(",".join(_quote(format_cell(c)) for c in row))
    _atomic_write_text(path, "\n".join(lines) + "\n")


def sanitize_json(obj: object) -> object:
    """Recursively map NaN/inf floats to None so output is strict JSON."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else None
    if isinstance(obj, dict):
        return {k: sanitize_json(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [sanitize_json(v) for v in obj]
    return obj


def write_json_atomic(doc: object, path: str) -> None:
    text = json.dumps(sanitize_json(doc), indent=2, allow_nan=False)
    _atomic_write_text(path, text + "\n")
