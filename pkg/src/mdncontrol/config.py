"""Run configuration: flat ``key = value`` files, CLI overrides on top."""
from __future__ import annotations

import dataclasses
import os
from dataclasses import dataclass
from pathlib import Path
from typing import get_type_hints

from .control_law import CostWeights

OUT_ENV = "MDNCONTROL_OUT"

# (R, M, Q) and reference shaping per example.
EXAMPLE_DEFAULTS = {
    1: dict(R=0.4, M=1.0, Q=0.001, ref_offset=0.75, ref_scale=0.2),
    2: dict(R=0.25, M=1.0, Q=0.01, ref_offset=0.0, ref_scale=0.3),
}


@dataclass
class RunConfig:
    example: int = 1
    kernels: int = 2
    n_lags: int = 1
    m_lags: int = 0
    hidden: tuple[int, ...] = (8,)
    R: float | None = None
    M: float | None = None
    Q: float | None = None
    noise_weights: tuple[float, ...] = (0.5, 0.5)
    reference: str = "sinusoid"
    ref_offset: float | None = None
    ref_scale: float | None = None
    reference_file: str = ""
    seed: int = 0
    pretrain_length: int = 2000
    pretrain_iters: int = 300
    excitation_hold: int = 5
    run_length: int = 500
    online_updates: int = 1
    buffer_size: int = 100
    stability_period: int = 10
    u_min: float = -5.0
    u_max: float = 5.0
    var_floor: float = 1e-6
    controller_var_floor: float = 1e-6
    control_solver: str = "recursive"
    reanchor_tol: float = 0.01
    window: int = 200
    out_dir: str = "runs"

    def __post_init__(self):
        if self.example not in EXAMPLE_DEFAULTS:
            raise ValueError("example must be 1 or 2")
        for k, v in EXAMPLE_DEFAULTS[self.example].items():
            if getattr(self, k) is None:
                setattr(self, k, v)
        counts = (self.kernels, self.n_lags, self.pretrain_length, self.pretrain_iters,
                  self.run_length, self.online_updates, self.buffer_size,
                  self.stability_period, self.excitation_hold, self.window)
        if min(counts) < 1 or self.m_lags < 0 or min(self.hidden, default=1) < 1:
            raise ValueError("counts must be positive")
        if len(self.noise_weights) != 2:
            raise ValueError("noise_weights needs two entries")
        if self.control_solver not in ("recursive", "direct"):
            raise ValueError("control_solver must be 'recursive' or 'direct'")
        if not self.u_max > self.u_min:
            raise ValueError("u_max must exceed u_min")
        self.weights  # validates the weights

    @property
    def weights(self) -> CostWeights:
        return CostWeights(self.R, self.M, self.Q)

    @property
    def lags(self) -> tuple[int, int]:
        return self.n_lags, self.m_lags

    @property
    def u_bounds(self) -> tuple[float, float]:
        return self.u_min, self.u_max

    def output_dir(self) -> Path:
        return Path(os.environ.get(OUT_ENV) or self.out_dir)

    def replace(self, **kw) -> "RunConfig":
        return dataclasses.replace(self, **kw)

    def to_text(self) -> str:
        lines = []
        for f in dataclasses.fields(self):
            v = getattr(self, f.name)
            if isinstance(v, tuple):
                v = ",".join(str(x) for x in v)
            lines.append(f"{f.name} = {v}")
        return "\n".join(lines) + "\n"


def _convert(name: str, raw: str, hint):
    text = str(hint)
    raw = raw.strip()
    if name == "hidden":
        return tuple(int(x) for x in raw.split(",") if x.strip())
    if "tuple" in text:
        return tuple(float(x) for x in raw.split(",") if x.strip())
    if "int" in text and "float" not in text:
        return int(raw)
    if "float" in text:
        return None if raw.lower() in ("", "none") else float(raw)
    return raw


def parse_values(pairs: dict[str, str]) -> dict:
    hints = get_type_hints(RunConfig)
    names = {f.name for f in dataclasses.fields(RunConfig)}
    out = {}
    for k, v in pairs.items():
        if k not in names:
            raise KeyError(f"unknown config key {k!r}")
        out[k] = _convert(k, v, hints[k])
    return out


def read_pairs(path) -> dict[str, str]:
    pairs = {}
    for n, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{n}: expected key = value")
        k, v = line.split("=", 1)
        pairs[k.strip()] = v.strip()
    return pairs


def load_config(path=None, overrides: dict[str, str] | None = None) -> RunConfig:
    pairs = read_pairs(path) if path else {}
    pairs.update(overrides or {})
    return RunConfig(**parse_values(pairs))
