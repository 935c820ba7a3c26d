"""Tracking plots: per method, output against desired output and the error."""
from __future__ import annotations

from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .trace import SimTrace, read_trace  # noqa: E402


def _load(t) -> SimTrace:
    return t if isinstance(t, SimTrace) else read_trace(t)


def emit_plots(traces, out_path) -> Path:
    """One SVG with a row per trace: (y, y_d) overlaid on the left, e on the right."""
    traces = [_load(t) for t in traces]
    if not traces:
        raise ValueError("no traces given")
    for t in traces:
        if len(t) == 0:
            raise ValueError(f"trace for method {t.method!r} is empty")
    out_path = Path(out_path)
    out_path.parent.mkdir(parents=True, exist_ok=True)

    fig, axes = plt.subplots(len(traces), 2, figsize=(10, 3.2 * len(traces)),
                             squeeze=False, sharex=True)
    for row, t in zip(axes, traces):
        k = t.column("k")
        row[0].plot(k, t.column("y"), lw=0.8, label="y")
        row[0].plot(k, t.column("yd"), lw=1.2, ls="--", label="y_d")
        row[0].set_ylabel("output")
        row[0].set_title(f"{t.method}: output")
        row[0].legend(loc="upper right", fontsize="small")
        row[1].plot(k, t.column("e"), lw=0.8, color="tab:red")
        row[1].axhline(0.0, color="k", lw=0.5)
        row[1].set_ylabel("tracking error e = y - y_d")
        row[1].set_title(f"{t.method}: tracking error")
    for ax in axes[-1]:
        ax.set_xlabel("step k")
    fig.tight_layout()
    fig.savefig(out_path, format="svg")
    plt.close(fig)
    return out_path
