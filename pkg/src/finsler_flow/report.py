"""Deterministic report serialization.

The structured-text report is JSON with floats written at 17 significant
digits and keys in insertion order, so identical runs give identical bytes.
Wall-clock timings go to a separate file for the same reason.
"""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Optional

import numpy as np

REPORT_NAME = "report.json"
TIMINGS_NAME = "timings.json"
INDEX_NAME = "index.json"
MARGINS_NAME = "gradient_margins.csv"
HARNACK_NAME = "harnack_pairs.csv"
IDENTITIES_NAME = "identities.csv"


def format_float(x: float) -> str:
    if math.isnan(x):
        return "NaN"
    if math.isinf(x):
        return "Infinity" if x > 0 else "-Infinity"
    return "%.17g" % x


def _plain(obj: Any) -> Any:
    if isinstance(obj, dict):
        return {str(k): _plain(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_plain(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_plain(v) for v in obj.tolist()]
    if isinstance(obj, (bool, np.bool_)):
        return bool(obj)
    if isinstance(obj, (int, np.integer)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        return float(obj)
    if obj is None or isinstance(obj, str):
        return obj
    return str(obj)


def _escape(s: str) -> str:
    out = ['"']
    for ch in s:
        if ch == '"':
            out.append('\\"')
        elif ch == "\\":
            out.append("\\\\")
        elif ch == "\n":
            out.append("\\n")
        elif ord(ch) < 0x20:
            out.append("\\u%04x" % ord(ch))
        else:
            out.append(ch)
    out.append('"')
    return "".join(out)


def _encode(obj: Any, indent: int) -> str:
    pad = "  " * indent
    inner = "  " * (indent + 1)
    if isinstance(obj, dict):
        if not obj:
            return "{}"
        items = [f"{inner}{_escape(k)}: {_encode(v, indent + 1)}" for k, v in obj.items()]
        return "{\n" + ",\n".join(items) + "\n" + pad + "}"
    if isinstance(obj, list):
        if not obj:
            return "[]"
        if all(not isinstance(v, (dict, list)) for v in obj):
            return "[" + ", ".join(_encode(v, 0) for v in obj) + "]"
        return "[\n" + ",\n".join(inner + _encode(v, indent + 1) for v in obj) + "\n" + pad + "]"
    if isinstance(obj, bool):
        return "true" if obj else "false"
    if obj is None:
        return "null"
    if isinstance(obj, int):
        return str(obj)
    if isinstance(obj, float):
        return format_float(obj)
    return _escape(str(obj))


def dumps(obj: Any) -> str:
    """Structured text with stable ordering and 17-digit floats."""
    return _encode(_plain(obj), 0) + "\n"


@dataclass
class RunReport:
    scenario: str
    seed: int
    config: dict
    sections: dict = field(default_factory=dict)
    failures: list = field(default_factory=list)
    verdicts: dict = field(default_factory=dict)  # check name -> bool
    timings: dict = field(default_factory=dict)
    omitted: list = field(default_factory=list)
    trajectory: Any = field(default=None, repr=False, compare=False)  # not serialized

    @property
    def passed(self) -> bool:
        return not self.failures and all(self.verdicts.values())

    @property
    def rollup(self) -> str:
        return "PASS" if self.passed else "FAIL"

    def document(self) -> dict:
        doc = {"scenario": self.scenario, "seed": self.seed, "config": self.config}
        doc.update(self.sections)
        doc["verdicts"] = {k: "PASS" if v else "FAIL" for k, v in self.verdicts.items()}
        if self.failures:
            doc["failures"] = self.failures
        doc["rollup"] = self.rollup
        return doc


def check_output_dir(path) -> Path:
    """Create the directory if needed and make sure it accepts writes."""
    path = Path(path)
    try:
        path.mkdir(parents=True, exist_ok=True)
    except OSError as exc:
        raise OSError(f"output directory {path} is not writable: {exc}") from None
    if not path.is_dir() or not os.access(path, os.W_OK):
        raise OSError(f"output directory {path} is not writable")
    return path


def _write_csv(path: Path, header: list, rows: list) -> None:
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for row in rows:
            w.writerow([format_float(v) if isinstance(v, float) else v for v in row])


def emit_report(report: RunReport, out_dir, tables: bool = True) -> dict:
    """Write the report, optional CSV tables, timings and an index; returns the index document."""
    out = check_output_dir(out_dir)
    artifacts = {}
    (out / REPORT_NAME).write_text(dumps(report.document()))
    artifacts["report"] = REPORT_NAME
    if tables:
        ge = report.sections.get("gradient_estimate")
        if ge:
            rows = [(lab["t"], float(m), float(lhs), float(rhs))
                    for lab, m, lhs, rhs in zip(ge["labels"], ge["margins"], ge["lhs"], ge["rhs"])]
            _write_csv(out / MARGINS_NAME, ["t", "min_margin", "lhs", "rhs"], rows)
            artifacts["gradient_margins"] = MARGINS_NAME
        hk = report.sections.get("harnack")
        if hk:
            rows = [(lab["x1"][0], lab["x1"][1], lab["t1"], lab["x2"][0], lab["x2"][1], lab["t2"], float(m))
                    for lab, m in zip(hk["labels"], hk["margins"])]
            _write_csv(out / HARNACK_NAME, ["x1_1", "x1_2", "t1", "x2_1", "x2_2", "t2", "log_margin"], rows)
            artifacts["harnack_pairs"] = HARNACK_NAME
        ids = report.sections.get("identities")
        if ids:
            rows = [(r["tag"], float(r["relative"]), float(r["tolerance"]),
                     "" if r["order"] is None else float(r["order"]), r["verdict"]) for r in ids]
            _write_csv(out / IDENTITIES_NAME, ["tag", "relative", "tolerance", "order", "verdict"], rows)
            artifacts["identities"] = IDENTITIES_NAME
    (out / TIMINGS_NAME).write_text(dumps(report.timings))
    artifacts["timings"] = TIMINGS_NAME
    index = {"scenario": report.scenario, "rollup": report.rollup, "artifacts": artifacts,
             "omitted": list(report.omitted)}
    (out / INDEX_NAME).write_text(dumps(index))
    return index


def read_text(path) -> Optional[str]:
    p = Path(path)
    return p.read_text() if p.exists() else None
