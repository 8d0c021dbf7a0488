"""Model, table and target files."""
from __future__ import annotations

import csv
import io
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .measures import CellGrid, MarginalTarget, Partition, PiecewiseFunction


class InputError(ValueError):
    """Malformed input file; the message carries the file and location."""


@dataclass
class Model:
    grid: CellGrid
    functions: dict[str, PiecewiseFunction] = field(default_factory=dict)

    def __eq__(self, other):
        if not isinstance(other, Model) or self.grid != other.grid:
            return False
        if self.functions.keys() != other.functions.keys():
            return False
        for name, f in self.functions.items():
            g = other.functions[name]
            if not (np.array_equal(f.mean, g.mean) and f.bound == g.bound
                    and f.noise.keys() == g.noise.keys()
                    and all(np.array_equal(f.noise[s], g.noise[s]) for s in f.noise)):
                return False
        return True

    def select(self, names) -> list[PiecewiseFunction]:
        if names in (None, "all"):
            return list(self.functions.values())
        if isinstance(names, str):
            names = [s.strip() for s in names.split(",") if s.strip()]
        missing = [n for n in names if n not in self.functions]
        if missing:
            raise KeyError(f"unknown function(s): {', '.join(missing)}")
        return [self.functions[n] for n in names]


def model_from_dict(data: dict) -> Model:
    partitions = [Partition(p["name"], tuple(p["labels"])) for p in data["partitions"]]
    codes, probs = [], []
    for cell in data["cells"]:
        labels = cell["labels"]
        if len(labels) != len(partitions):
            raise ValueError(f"cell {labels} needs one label per partition")
        codes.append([part.index(lab) for part, lab in zip(partitions, labels)])
        probs.append(float(cell["p"]))
    grid = CellGrid(partitions, np.array(codes, dtype=int).reshape(-1, len(partitions)), probs)
    functions = {}
    for spec in data.get("functions", []):
        noise = spec.get("noise")
        f = PiecewiseFunction(
            spec["mean"],
            var=None if noise is not None else spec.get("var"),
            bound=spec.get("bound"),
            name=spec["name"],
            noise=noise,
        )
        functions[f.name] = f
    return Model(grid, functions)


def model_to_dict(model: Model) -> dict:
    grid = model.grid
    out = {
        "partitions": [{"name": p.name, "labels": list(p.labels)} for p in grid.partitions],
        "cells": [{"labels": list(grid.cell_labels(c)), "p": float(grid.p[c])}
                  for c in range(grid.n_cells)],
        "functions": [],
    }
    for f in model.functions.values():
        spec = {"name": f.name, "mean": f.mean.tolist(), "var": f.var.tolist(), "bound": f.bound}
        default = {f.name: np.sqrt(f.var)} if np.any(f.var > 0) else {}
        if f.noise.keys() != default.keys() or any(
                not np.array_equal(f.noise[s], default[s]) for s in default):
            spec["noise"] = {s: v.tolist() for s, v in f.noise.items()}
        out["functions"].append(spec)
    return out


def _load_json(path) -> object:
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    try:
        return json.loads(text)
    except json.JSONDecodeError as exc:
        raise InputError(f"{path}:{exc.lineno}:{exc.colno}: {exc.msg}") from exc


def read_model(path) -> Model:
    data = _load_json(path)
    try:
        return model_from_dict(data)
    except (KeyError, TypeError) as exc:
        raise InputError(f"{path}: malformed model ({exc})") from exc


def write_model(model: Model, path) -> None:
    atomic_write(path, json.dumps(model_to_dict(model), indent=2))


def read_table_csv(path) -> CellGrid:
    """Two-way contingency table: header holds column labels, first column row labels.

    Counts are normalised to probabilities.
    """
    path = Path(path)
    try:
        text = path.read_text()
    except OSError as exc:
        raise InputError(f"{path}: {exc.strerror}") from exc
    rows = [r for r in csv.reader(io.StringIO(text)) if any(c.strip() for c in r)]
    if len(rows) < 3:
        raise InputError(f"{path}: need a header and at least two data rows")
    header = [c.strip() for c in rows[0]]
    col_labels = header[1:]
    row_labels, values = [], []
    for lineno, row in enumerate(rows[1:], start=2):
        if len(row) != len(header):
            raise InputError(f"{path}:{lineno}: expected {len(header)} fields, got {len(row)}")
        row_labels.append(row[0].strip())
        try:
            values.append([float(c) for c in row[1:]])
        except ValueError as exc:
            raise InputError(f"{path}:{lineno}: {exc}") from exc
    table = np.array(values)
    if np.any(table < 0) or table.sum() <= 0:
        raise InputError(f"{path}: table entries must be nonnegative with a positive total")
    rows_part = Partition("rows", tuple(row_labels))
    cols_part = Partition("cols", tuple(col_labels))
    return CellGrid.from_table(table / table.sum(), rows_part, cols_part)


def read_targets(path, measure) -> list[MarginalTarget]:
    """Targets in raking order.

    Accepts ``{"<partition>": [probs], ...}`` or
    ``[{"partition": name, "probs": [...]}, ...]``.
    """
    data = _load_json(path)
    if isinstance(data, dict) and "targets" in data:
        data = data["targets"]
    items = data.items() if isinstance(data, dict) else (
        (d["partition"], d["probs"]) for d in data)
    out = []
    for name, probs in items:
        k = measure.partition_index(name)
        out.append(MarginalTarget(measure.partitions[k], np.asarray(probs, dtype=float)))
    return out


def atomic_write(path, text: str) -> None:
    """Write ``text`` to ``path`` through a temporary file and rename."""
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([fmt(v) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


def to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return to_jsonable(obj.tolist())
    if isinstance(obj, (np.floating,)):
        return float(obj)
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, np.bool_):
        return bool(obj)
    return obj
