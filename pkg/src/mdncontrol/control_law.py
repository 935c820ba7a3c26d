"""Performance index, its control derivative and the optimal-control updates."""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

from . import mdn, nn_core
from .dual_models import ForwardModel, error_pdf, forward_inputs, output_pdf, _zvec
from .mdn import MixtureParams

FD_STEP = 1e-5
GUARD_EPS = 1e-8
GOLDEN = (np.sqrt(5.0) - 1.0) / 2.0


@dataclass(frozen=True)
class CostWeights:
    R: float
    M: float
    Q: float

    def __post_init__(self):
        if min(self.R, self.M, self.Q) < 0:
            raise ValueError("cost weights must be non-negative")


def cost(error_p: MixtureParams, u, w: CostWeights):
    """J = R * Var(e) + M * E[e]^2 + Q * u^2."""
    mean, var = mdn.moments(error_p)
    return w.R * var + w.M * mean ** 2 + w.Q * np.asarray(u, dtype=np.float64) ** 2


def cost_at(fm: ForwardModel, z, y_d, u, w: CostWeights):
    """Cost of applying ``u`` (scalar or array of candidates) in state ``z``."""
    u = np.asarray(u, dtype=np.float64)
    if u.ndim == 0:
        return float(cost(error_pdf(output_pdf(fm, z, u), y_d), u, w))
    Z = np.broadcast_to(_zvec(z), (u.size, len(_zvec(z))))
    return cost(error_pdf(output_pdf(fm, Z, u), y_d), u, w)


def chi_vector(z, y_d) -> np.ndarray:
    return np.append(_zvec(z), float(y_d))


def phi(fm: ForwardModel, z, u: float, y_d: float, w: CostWeights) -> float:
    """d(R Var + M Mean^2)/du from the network's input Jacobian.

    The optimality condition is phi + 2 Q u = 0.
    """
    x = forward_inputs(z, u)
    raw = nn_core.forward(fm.net, x)
    if not np.all(np.isfinite(raw)):
        raise FloatingPointError("non-finite forward-model output")
    d_raw = nn_core.jacobian_input(fm.net, x)[:, -1]
    N = fm.head.n_kernels
    logits, means, s = raw[:N], raw[N:2 * N], raw[2 * N:]
    d_logits, d_means, d_s = d_raw[:N], d_raw[N:2 * N], d_raw[2 * N:]

    a = mdn.softmax(logits)
    da = a * (d_logits - a @ d_logits)
    var = mdn.variance_link(s, fm.head.var_floor)
    dvar = mdn.variance_link_grad(s, fm.head.var_floor) * d_s
    ell = means - y_d
    dell = d_means
    ell_bar = a @ ell
    dell_bar = da @ ell + a @ dell

    dev = ell - ell_bar
    var_term = da @ (var + dev ** 2) + a @ (dvar + 2.0 * dev * (dell - dell_bar))
    mean_term = 2.0 * ell_bar * dell_bar
    out = w.R * var_term + w.M * mean_term
    if not np.isfinite(out):
        raise FloatingPointError("non-finite phi")
    return float(out)


def phi_of_chi(fm: ForwardModel, w: CostWeights) -> Callable[[np.ndarray, float], float]:
    """phi as a function of chi = (z, y_d) and u."""
    return lambda chi, u: phi(fm, chi[:-1], u, chi[-1], w)


class PhiDerivatives(NamedTuple):
    dphi_dchi: np.ndarray
    dphi_du: float


def phi_derivatives(phi_fn, chi, u, h: float = FD_STEP) -> PhiDerivatives:
    chi = np.asarray(chi, dtype=np.float64)
    dchi = np.empty_like(chi)
    for i in range(chi.size):
        e = np.zeros_like(chi)
        e[i] = h
        dchi[i] = (phi_fn(chi + e, u) - phi_fn(chi - e, u)) / (2 * h)
    du = (phi_fn(chi, u + h) - phi_fn(chi, u - h)) / (2 * h)
    return PhiDerivatives(dchi, float(du))


class RecursiveStep(NamedTuple):
    u: float
    guard_ok: bool
    derivs: PhiDerivatives


def recursive_update(u_prev, chi_prev, chi_now, phi_fn, Q: float,
                     h: float = FD_STEP, eps: float = GUARD_EPS) -> RecursiveStep:
    """u = u_prev - dphi/dchi . (chi_now - chi_prev) / (2Q + dphi/du), all at k-1.

    When the denominator is within ``eps`` of zero ``u_prev`` is held and
    ``guard_ok`` is False.
    """
    d = phi_derivatives(phi_fn, chi_prev, u_prev, h)
    denom = 2.0 * Q + d.dphi_du
    if not np.isfinite(denom) or abs(denom) < eps:
        return RecursiveStep(float(u_prev), False, d)
    delta = np.asarray(chi_now, dtype=np.float64) - np.asarray(chi_prev, dtype=np.float64)
    return RecursiveStep(float(u_prev - d.dphi_dchi @ delta / denom), True, d)


def recursive_u(u_prev, chi_prev, chi_now, fm: ForwardModel, w: CostWeights) -> RecursiveStep:
    return recursive_update(u_prev, chi_prev, chi_now, phi_of_chi(fm, w), w.Q)


def grid_golden_minimize(f_batch: Callable[[np.ndarray], np.ndarray], lo, hi,
                         n_grid: int = 41, tol: float = 1e-10, max_iter: int = 100):
    """Vectorised bounded scalar minimisation.

    ``f_batch(U)`` maps an array of shape (B, K) of candidates (one row per
    problem) to costs of the same shape.  A coarse grid picks the best bracket,
    golden-section search refines it.  Returns the argmins, shape (B,).
    """
    lo = np.atleast_1d(np.asarray(lo, dtype=np.float64))
    hi = np.atleast_1d(np.asarray(hi, dtype=np.float64))
    if np.any(~(hi > lo)):
        raise ValueError("invalid bounds")
    frac = np.linspace(0.0, 1.0, n_grid)
    grid = lo[:, None] + (hi - lo)[:, None] * frac
    fg = f_batch(grid)
    best = np.argmin(fg, axis=1)
    rows = np.arange(grid.shape[0])
    u_grid, f_grid = grid[rows, best], fg[rows, best]
    a = grid[rows, np.maximum(best - 1, 0)]
    b = grid[rows, np.minimum(best + 1, n_grid - 1)]

    c = b - GOLDEN * (b - a)
    d = a + GOLDEN * (b - a)
    fcd = f_batch(np.column_stack((c, d)))
    fc, fd = fcd[:, 0], fcd[:, 1]
    for _ in range(max_iter):
        if np.max(b - a) <= tol:
            break
        left = fc < fd
        b = np.where(left, d, b)
        a = np.where(left, a, c)
        new = np.where(left, b - GOLDEN * (b - a), a + GOLDEN * (b - a))
        fn = f_batch(new[:, None])[:, 0]
        d, fd, c, fc = (np.where(left, c, new), np.where(left, fc, fn),
                        np.where(left, new, d), np.where(left, fn, fd))
    u_gs = np.where(fc < fd, c, d)
    f_gs = np.minimum(fc, fd)
    return np.where(f_gs <= f_grid, u_gs, u_grid)


def solve_u_direct_batch(fm: ForwardModel, Z, y_d, w: CostWeights, u_bounds=(-5.0, 5.0),
                         n_grid: int = 41) -> np.ndarray:
    Z = np.atleast_2d(np.asarray(Z, dtype=np.float64))
    y_d = np.broadcast_to(np.asarray(y_d, dtype=np.float64), (Z.shape[0],))
    lo, hi = map(float, u_bounds)
    if not hi > lo:
        raise ValueError("invalid bounds")

    def f_batch(U):
        B, K = U.shape
        p = output_pdf(fm, np.repeat(Z, K, axis=0), U.ravel())
        J = cost(error_pdf(p, np.repeat(y_d, K)), U.ravel(), w)
        return J.reshape(B, K)

    return grid_golden_minimize(f_batch, np.full(Z.shape[0], lo), np.full(Z.shape[0], hi),
                                n_grid=n_grid)


def solve_u_direct(fm: ForwardModel, z, y_d, w: CostWeights, u_bounds=(-5.0, 5.0)) -> float:
    """Minimise the cost over a box by grid search plus golden-section refinement."""
    return float(solve_u_direct_batch(fm, _zvec(z)[None, :], [y_d], w, u_bounds)[0])
