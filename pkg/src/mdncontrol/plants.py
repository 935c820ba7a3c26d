"""Benchmark stochastic plants, their noise sources and reference models."""
from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import mdn


@dataclass(frozen=True)
class NoiseMixture:
    means: tuple[float, ...]
    variances: tuple[float, ...]
    weights: tuple[float, ...]

    def __post_init__(self):
        w = np.asarray(self.weights, dtype=float)
        if not (len(self.means) == len(self.variances) == len(self.weights)):
            raise ValueError("noise mixture fields differ in length")
        if np.any(w < 0) or abs(w.sum() - 1.0) > 1e-12:
            raise ValueError("noise weights must lie on the simplex")
        if min(self.variances) <= 0:
            raise ValueError("noise variances must be positive")

    def as_mixture(self) -> mdn.MixtureParams:
        return mdn.mixture(self.weights, self.means, self.variances)


EXAMPLE1_NOISE = NoiseMixture((1.0, 0.0), (0.02, 0.001), (0.5, 0.5))
EXAMPLE2_NOISE = NoiseMixture((0.5, 0.0), (0.002, 0.001), (0.5, 0.5))


def noise_sample(nm: NoiseMixture, rng: np.random.Generator, size=None):
    return mdn.sample(nm.as_mixture(), rng, size)


@dataclass
class PlantState:
    y_prev: float = 0.0
    u_prev: float = 0.0
    k: int = 0


def plant1_output(y_prev, u, eps):
    """Additive-noise plant: output depends on the current control."""
    return 0.5 - 0.02 * y_prev * (1.2 + np.arctan(u)) + 0.2 * u + eps


def plant2_output(y_prev, u_prev, eps):
    """Multiplicative-noise plant: output depends on the previous control."""
    arg = (16.0 * u_prev + 8.0 * y_prev) / (3.0 + 4.0 * u_prev ** 2 + 4.0 * y_prev ** 2)
    return (29.0 / 40.0) * eps * np.sin(arg) + 0.2 * (u_prev + y_prev)


def step_plant1(s: PlantState, u: float, eps: float) -> float:
    y = float(plant1_output(s.y_prev, u, eps))
    s.y_prev, s.u_prev, s.k = y, float(u), s.k + 1
    return y


def step_plant2(s: PlantState, u_prev: float, eps: float) -> float:
    y = float(plant2_output(s.y_prev, u_prev, eps))
    s.y_prev, s.u_prev, s.k = y, float(u_prev), s.k + 1
    return y


@dataclass
class ReferenceModel:
    """y^d_k = r_{k-delay} + c * y^d_{k-1}."""

    c: float
    delay: int = 0
    yd_prev: float = 0.0
    r_held: float = 0.0

    def __post_init__(self):
        if abs(self.c) >= 1:
            raise ValueError("reference model must be stable (|c| < 1)")
        if self.delay not in (0, 1):
            raise ValueError("delay must be 0 or 1")

    def preview(self) -> float:
        """Next desired output, already determined when the input is delayed."""
        if self.delay != 1:
            raise ValueError("preview needs a delayed reference input")
        return self.r_held + self.c * self.yd_prev


def reference_step(rm: ReferenceModel, r: float) -> float:
    r_used = r if rm.delay == 0 else rm.r_held
    rm.r_held = float(r)
    rm.yd_prev = float(r_used + rm.c * rm.yd_prev)
    return rm.yd_prev


REFERENCE_KINDS = ("piecewise", "sinusoid", "file")


def reference_signal(kind: str, length: int, rng: np.random.Generator | None = None,
                     hold: int = 50, amplitude: float = 0.5, period: float = 100.0,
                     path=None) -> np.ndarray:
    """Reference input r_0..r_{length-1} of the given kind."""
    if kind == "piecewise":
        if rng is None:
            raise ValueError("piecewise reference needs an rng")
        levels = rng.uniform(-1.0, 1.0, size=-(-length // hold))
        return np.repeat(levels, hold)[:length]
    if kind == "sinusoid":
        return amplitude * np.sin(2.0 * np.pi * np.arange(length) / period)
    if kind == "file":
        r = read_reference_file(path)
        if r.size < length:
            raise ValueError(f"reference file has {r.size} values, need {length}")
        return r[:length]
    raise ValueError(f"unknown reference kind {kind!r}")


def reference_input(kind: str, k: int, rng: np.random.Generator | None = None, **kw) -> float:
    """Single value r_k; regenerates the signal, so prefer reference_signal in loops."""
    return float(reference_signal(kind, k + 1, rng, **kw)[k])


def read_reference_file(path) -> np.ndarray:
    lines = Path(path).read_text().split()
    return np.array([float(s) for s in lines], dtype=np.float64)


def write_reference_file(path, r) -> None:
    Path(path).write_text("".join(f"{float(v)!r}\n" for v in r))


def excitation(length: int, rng: np.random.Generator, hold: int = 5,
               low: float = -2.0, high: float = 2.0) -> np.ndarray:
    """Piecewise-constant control, uniform levels, for offline identification."""
    levels = rng.uniform(low, high, size=-(-length // hold))
    return np.repeat(levels, hold)[:length]
