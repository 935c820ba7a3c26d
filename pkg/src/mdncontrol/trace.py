"""Per-step simulation records and their CSV form."""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

COLUMNS = ("k", "r", "yd", "y", "u", "e", "J", "nll_forward", "nll_controller",
           "spectral_norm", "spectral_radius", "stable_flag", "method")
FLOAT_COLUMNS = COLUMNS[1:11]
HALT_PREFIX = "# halted"


@dataclass
class SimTrace:
    method: str
    rows: list[dict] = field(default_factory=list)
    failure: str | None = None

    def append(self, **row) -> None:
        row["e"] = row["y"] - row["yd"]
        row["method"] = self.method
        self.rows.append(row)

    def column(self, name: str) -> np.ndarray:
        return np.array([np.nan if r.get(name) is None else r[name] for r in self.rows],
                        dtype=np.float64)

    def __len__(self) -> int:
        return len(self.rows)


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    v = float(v)
    return "" if math.isnan(v) else repr(v)


def to_csv(trace: SimTrace) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(COLUMNS)
    for row in trace.rows:
        w.writerow([_fmt(row.get(c)) for c in COLUMNS[:-1]] + [trace.method])
    if trace.failure is not None:
        buf.write(f"{HALT_PREFIX}: {trace.failure}\n")
    return buf.getvalue()


def write_trace(path, trace: SimTrace) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(to_csv(trace))
    return path


def read_trace(path) -> SimTrace:
    lines = Path(path).read_text().splitlines()
    failure = None
    body = []
    for line in lines:
        if line.startswith(HALT_PREFIX):
            failure = line.split(":", 1)[1].strip()
        else:
            body.append(line)
    reader = csv.DictReader(body)
    if reader.fieldnames is None or tuple(reader.fieldnames) != COLUMNS:
        raise ValueError(f"{path}: not a trace file")
    rows, method = [], None
    for rec in reader:
        row = {"k": int(rec["k"]), "method": rec["method"]}
        for c in FLOAT_COLUMNS:
            row[c] = float(rec[c]) if rec[c] != "" else None
        row["stable_flag"] = None if rec["stable_flag"] == "" else rec["stable_flag"] == "1"
        method = rec["method"]
        rows.append(row)
    return SimTrace(method or "", rows, failure)


def summarize(trace: SimTrace, window: int) -> dict:
    """mean(e), std(e), mean(J) over the trailing window."""
    e = trace.column("e")[-window:]
    J = trace.column("J")[-window:]
    return {"method": trace.method, "rows": len(trace), "window": int(e.size),
            "mean_e": float(np.mean(e)), "std_e": float(np.std(e)),
            "mean_J": float(np.mean(J))}
