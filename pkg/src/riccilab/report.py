"""Byte-stable artifact writers: JSON summaries, CSV series and two-column data."""
from __future__ import annotations

import json
import math
import numbers
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import IoError

NO_CHECKS = "no checks run"
ENERGY_HEADER = ("t", "B_r", "H_r", "K_r", "E_r")


def _clean(obj):
    """JSON-safe copy: non-finite floats become strings, tuples become lists."""
    if isinstance(obj, float):
        if math.isfinite(obj):
            return obj
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if hasattr(obj, "item") and not isinstance(obj, (str, bytes)):
        return _clean(obj.item())
    return obj


def format_cell(v):
    """Integers verbatim, floats as shortest round-trip repr, anything else as str."""
    if isinstance(v, (bool, np.bool_)):
        return str(bool(v)).lower()
    if isinstance(v, numbers.Integral):
        return str(int(v))
    if isinstance(v, numbers.Real):
        return repr(float(v))
    return str(v)


@dataclass
class Check:
    name: str
    passed: bool
    detail: dict = field(default_factory=dict)

    def to_dict(self):
        return {"name": self.name, "passed": bool(self.passed), "detail": self.detail}


@dataclass
class Report:
    """Everything a scenario produces, written by :func:`emit_report`."""

    scenario: str
    checks: list = field(default_factory=list)
    summary: dict = field(default_factory=dict)
    tables: dict = field(default_factory=dict)   # name -> (header, rows)
    series: dict = field(default_factory=dict)   # name -> (x, y, labels)
    figures: list = field(default_factory=list)  # callables(out_dir) -> filename

    def check(self, name, passed, /, **detail):
        self.checks.append(Check(name, bool(passed), detail))
        return passed

    @property
    def passed(self):
        return bool(self.checks) and all(c.passed for c in self.checks)

    def failures(self):
        return [c.name for c in self.checks if not c.passed]


def summary_document(reports, meta=None):
    reports = list(reports)
    doc = dict(meta or {})
    if not reports or not any(r.checks for r in reports):
        doc.update({"status": NO_CHECKS, "passed": False, "reports": []})
        return _clean(doc)
    doc["reports"] = [
        {"scenario": r.scenario, "passed": r.passed, "checks": [c.to_dict() for c in r.checks],
         "summary": r.summary}
        for r in reports
    ]
    doc["passed"] = all(r.passed for r in reports)
    doc["status"] = "pass" if doc["passed"] else "fail"
    return _clean(doc)


def _write(path, text):
    try:
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    except OSError as exc:
        raise IoError(f"cannot write {path}: {exc.strerror}") from exc
    return path


def write_json(path, obj):
    return _write(path, json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_csv(path, header, rows):
    lines = [",".join(header)]
    lines += [",".join(format_cell(v) for v in row) for row in rows]
    return _write(path, "\n".join(lines) + "\n")


def write_dat(path, x, y, labels=("x", "y")):
    lines = [f"# {labels[0]} {labels[1]}"]
    lines += [f"{float(a):.17e} {float(b):.17e}" for a, b in zip(x, y)]
    return _write(path, "\n".join(lines) + "\n")


def emit_report(reports, out_dir, meta=None, figures=True):
    """Write ``summary.json`` plus every table, series and figure; returns the file list."""
    reports = list(reports)
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise IoError(f"cannot create {out_dir}: {exc.strerror}") from exc
    written = [write_json(os.path.join(out_dir, "summary.json"), summary_document(reports, meta))]
    for rep in reports:
        for name, (header, rows) in sorted(rep.tables.items()):
            written.append(write_csv(os.path.join(out_dir, f"{name}.csv"), header, rows))
        for name, (x, y, labels) in sorted(rep.series.items()):
            written.append(write_dat(os.path.join(out_dir, f"{name}.dat"), x, y, labels))
        if figures:
            for fig in rep.figures:
                written.append(fig(out_dir))
    return written
