"""Local closed-loop stability monitor.

The plant is linearised through the forward model's mixture mean, combined
with the recursive control law's gain row ``B_k`` into the closed-loop
polynomial ``N(z^-1) = 1 - sum_i a_i z^-i``, whose companion matrix is
checked.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import mdn
from .control_law import GUARD_EPS, CostWeights, phi_derivatives, phi_of_chi
from .dual_models import ForwardModel, _zvec, forward_inputs, output_pdf

LIN_STEP = 1e-4


@dataclass
class Linearization:
    dy: np.ndarray   # df/dy_{k-i}, i = 1..n
    du: np.ndarray   # df/du_{k-j}, j = 0..m

    def __post_init__(self):
        self.dy = np.atleast_1d(np.asarray(self.dy, dtype=np.float64))
        self.du = np.atleast_1d(np.asarray(self.du, dtype=np.float64))
        if not (np.all(np.isfinite(self.dy)) and np.all(np.isfinite(self.du))):
            raise FloatingPointError("non-finite linearization")


@dataclass
class StabilityReport:
    B: np.ndarray | None
    coeffs: np.ndarray | None
    A: np.ndarray | None
    spectral_norm: float
    spectral_radius: float
    stable: bool | None
    guard_ok: bool = True


def _mean_at(fm, x):
    return float(mdn.moments(output_pdf(fm, x[:-1], x[-1]))[0])


def linearize(fm: ForwardModel, z, u: float, h: float = LIN_STEP) -> Linearization:
    """Central differences of the predicted mean wrt every regressor entry."""
    n, m = fm.lags
    x = forward_inputs(z, u)
    grads = np.empty(x.size)
    for i in range(x.size):
        e = np.zeros_like(x)
        e[i] = h
        grads[i] = (_mean_at(fm, x + e) - _mean_at(fm, x - e)) / (2 * h)
    # input layout: y lags (n), u lags (m), current u
    return Linearization(grads[:n], np.concatenate(([grads[-1]], grads[n:n + m])))


def compute_Bk(dphi_dchi, dphi_du: float, Q: float, eps: float = GUARD_EPS):
    """Gain row B_k = -dphi/dchi / (2Q + dphi/du); None when the guard fails."""
    denom = 2.0 * Q + dphi_du
    if not np.isfinite(denom) or abs(denom) <= eps:
        return None
    return -np.asarray(dphi_dchi, dtype=np.float64) / denom


def closed_loop_poly(lin: Linearization, B) -> np.ndarray:
    """Coefficients a^1..a^{n+m} of N(z^-1) = 1 - sum a^i z^-i.

    N = 1 - Bu - Fy + Fy*Bu - Fu*By, where (in powers of z^-1)
    Fy = sum_i df/dy_{k-i} z^-i, Fu = sum_{j>=0} df/du_{k-j} z^-j,
    By = sum_i B^i z^-i and Bu = sum_j B^{n+j} z^-j.
    """
    n, m = lin.dy.size, lin.du.size - 1
    B = np.asarray(B, dtype=np.float64)
    if B.size != n + m + 1:
        raise ValueError("B_k must have n+m+1 entries")
    Fy = np.concatenate(([0.0], lin.dy))
    Fu = lin.du.copy()
    By = np.concatenate(([0.0], B[:n]))
    Bu = np.concatenate(([0.0], B[n:n + m]))

    size = n + m + 1
    poly = np.zeros(size)
    poly[0] = 1.0

    def add(c, sign):
        poly[:c.size] += sign * c[:size]

    add(Bu, -1.0)
    add(Fy, -1.0)
    add(np.convolve(Fy, Bu), 1.0)
    add(np.convolve(Fu, By), -1.0)
    return -poly[1:]


def companion(coeffs) -> np.ndarray:
    """Ones on the superdiagonal, last row [a^{n+m}, ..., a^1]."""
    a = np.asarray(coeffs, dtype=np.float64)
    d = a.size
    A = np.zeros((d, d))
    A[np.arange(d - 1), np.arange(1, d)] = 1.0
    A[-1, :] = a[::-1]
    return A


def stability_check(coeffs) -> StabilityReport:
    """Spectral norm (the flag) and spectral radius (diagnostic) of A_k."""
    A = companion(coeffs)
    norm = float(np.linalg.norm(A, 2))
    radius = float(np.max(np.abs(np.linalg.eigvals(A)))) if A.size else 0.0
    return StabilityReport(None, np.asarray(coeffs, dtype=np.float64), A, norm, radius,
                           bool(norm < 1.0))


def monitor(fm: ForwardModel, z, u: float, y_d: float, w: CostWeights,
            derivs=None) -> StabilityReport:
    """Full report at an operating point; never modifies the model.

    ``derivs`` may carry phi derivatives already computed by the control law.
    """
    if derivs is None:
        derivs = phi_derivatives(phi_of_chi(fm, w), np.append(_zvec(z), y_d), u)
    B = compute_Bk(derivs.dphi_dchi, derivs.dphi_du, w.Q)
    if B is None:
        return StabilityReport(None, None, None, np.nan, np.nan, None, guard_ok=False)
    rep = stability_check(closed_loop_poly(linearize(fm, z, u), B))
    rep.B = B
    return rep
