"""Report bundles and their files: CSV series, a JSON report, figures, manifest."""
from __future__ import annotations

import hashlib
import math
import os
import time
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .. import __version__


@dataclass
class Table:
    header: tuple[str, ...]
    rows: list

    def __post_init__(self):
        for i, row in enumerate(self.rows):
            if len(row) != len(self.header):
                raise ValueError(f"row {i} has {len(row)} fields, header has {len(self.header)}")


@dataclass
class OutputBundle:
    """One scenario's results ready for writing."""
    name: str
    results: dict
    tables: dict[str, Table] = field(default_factory=dict)
    warnings: list[str] = field(default_factory=list)


class OutputError(OSError):
    pass


def format_number(v) -> str:
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    if math.isnan(v):
        return "NaN"
    if math.isinf(v):
        return "Infinity" if v > 0 else "-Infinity"
    return "%.17g" % v


def to_json(obj, indent: int = 0) -> str:
    """JSON text with every float written to 17 significant digits."""
    pad = "  " * (indent + 1)
    end = "  " * indent
    if obj is None:
        return "null"
    if isinstance(obj, str):
        return _json_string(obj)
    if isinstance(obj, (bool, np.bool_, int, float, np.integer, np.floating)):
        text = format_number(obj)
        return text if text not in ("NaN", "Infinity", "-Infinity") else _json_string(text)
    if isinstance(obj, complex):
        return to_json({"re": obj.real, "im": obj.imag}, indent)
    if isinstance(obj, np.ndarray):
        obj = obj.tolist()
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{pad}{_json_string(str(k))}: {to_json(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + end + "}"
    if isinstance(obj, (list, tuple)):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list, tuple, np.ndarray)) for v in obj):
            return "[" + ", ".join(to_json(v, indent + 1) for v in obj) + "]"
        return "[\n" + ",\n".join(pad + to_json(v, indent + 1) for v in obj) + "\n" + end + "]"
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def _json_string(s: str) -> str:
    out = s.replace("\\", "\\\\").replace('"', '\\"').replace("\n", "\\n").replace("\t", "\\t")
    return f'"{out}"'


def write_csv(path: Path, table: Table):
    lines = [",".join(table.header)]
    lines += [",".join(format_number(v) for v in row) for row in table.rows]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_outputs(bundles: list[OutputBundle], directory, config: dict | None = None,
                  seed: int | None = None, figures: bool = True,
                  started: float | None = None) -> dict[str, Path]:
    """Write every bundle and finally ``manifest.json``; returns name -> path.

    CSV files keep their table names; when several bundles use the same
    name the bundle name is prefixed.  With no bundles only the manifest
    is written.
    """
    out = Path(directory)
    try:
        out.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OutputError(f"cannot create output directory {out}: {exc.strerror}") from exc
    t_start = time.time() if started is None else started
    written: dict[str, Path] = {}
    counts: dict[str, int] = {}
    for b in bundles:
        for name in b.tables:
            counts[name] = counts.get(name, 0) + 1
    try:
        for b in bundles:
            for name, table in b.tables.items():
                fname = name if counts[name] == 1 else f"{b.name}_{name}"
                path = out / fname
                write_csv(path, table)
                written[fname] = path
        if bundles:
            report = {
                "config": config or {},
                "seed": seed,
                "results": {b.name: b.results for b in bundles},
                "warnings": [w for b in bundles for w in b.warnings],
                "version": __version__,
            }
            path = out / "report.json"
            path.write_text(to_json(report) + "\n", encoding="utf-8")
            written["report.json"] = path
        if figures and bundles:
            from .plotting import render_figures
            for fname, path in render_figures(bundles, out, counts).items():
                written[fname] = path
        manifest = {
            "config": config or {},
            "seed": seed,
            "version": __version__,
            "wall_clock_seconds": time.time() - t_start,
            "finished_at": time.strftime("%Y-%m-%dT%H:%M:%S%z"),
            "files": {name: {"sha256": _sha256(p), "bytes": os.path.getsize(p)}
                      for name, p in sorted(written.items())},
        }
        path = out / "manifest.json"
        path.write_text(to_json(manifest) + "\n", encoding="utf-8")
        written["manifest.json"] = path
    except OSError as exc:
        raise OutputError(f"writing outputs to {out} failed: {exc}") from exc
    return written
