"""Forward output model and inverse controller, coupled through shared priors.

The forward model maps ``(z, u)`` to a mixture over the next output.  The
inverse controller maps ``(z, y_d)`` to kernel means and variances over the
control; its priors are always supplied by the forward model, so its network
has only ``2N`` outputs.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import mdn, nn_core
from .mdn import MdnHead, MixtureParams
from .nn_core import Network, TrainState


@dataclass
class StateVector:
    """Lagged outputs (most recent first) followed by lagged controls."""

    y_lags: np.ndarray
    u_lags: np.ndarray

    def __post_init__(self):
        self.y_lags = np.atleast_1d(np.asarray(self.y_lags, dtype=np.float64))
        self.u_lags = np.atleast_1d(np.asarray(self.u_lags, dtype=np.float64))
        if not (np.all(np.isfinite(self.y_lags)) and np.all(np.isfinite(self.u_lags))):
            raise ValueError("state vector has non-finite entries")

    @property
    def lags(self) -> tuple[int, int]:
        return self.y_lags.size, self.u_lags.size

    def vector(self) -> np.ndarray:
        return np.concatenate((self.y_lags, self.u_lags))

    @classmethod
    def from_history(cls, ys: Sequence[float], us: Sequence[float], n: int, m: int):
        """Build z from histories ordered oldest to newest; missing entries are 0."""
        y = [ys[-i] if i <= len(ys) else 0.0 for i in range(1, n + 1)]
        u = [us[-j] if j <= len(us) else 0.0 for j in range(1, m + 1)]
        return cls(np.array(y), np.array(u, dtype=np.float64))


def _zvec(z) -> np.ndarray:
    return z.vector() if isinstance(z, StateVector) else np.asarray(z, dtype=np.float64)


@dataclass
class ForwardModel:
    net: Network
    head: MdnHead
    lags: tuple[int, int]
    train_state: TrainState | None = field(default=None, repr=False)

    def __post_init__(self):
        n, m = self.lags
        if self.net.n_in != n + m + 1:
            raise ValueError("forward network input must be n+m+1")
        if self.net.n_out != self.head.raw_dim:
            raise ValueError("forward network output must be 3N")

    @classmethod
    def create(cls, lags, hidden: Sequence[int], n_kernels: int, rng,
               var_floor: float = 1e-6) -> "ForwardModel":
        n, m = lags
        sizes = (n + m + 1, *hidden, 3 * n_kernels)
        return cls(nn_core.init_network(sizes, rng), MdnHead(n_kernels, var_floor), tuple(lags))


@dataclass
class InverseController:
    net: Network
    n_kernels: int
    lags: tuple[int, int]
    var_floor: float = 1e-6
    train_state: TrainState | None = field(default=None, repr=False)

    def __post_init__(self):
        n, m = self.lags
        if self.net.n_in != n + m + 1:
            raise ValueError("controller network input must be n+m+1")
        if self.net.n_out != 2 * self.n_kernels:
            raise ValueError("controller network output must be 2N (no prior logits)")

    @classmethod
    def create(cls, lags, hidden: Sequence[int], n_kernels: int, rng,
               var_floor: float = 1e-6) -> "InverseController":
        n, m = lags
        sizes = (n + m + 1, *hidden, 2 * n_kernels)
        return cls(nn_core.init_network(sizes, rng), n_kernels, tuple(lags), var_floor)


def forward_inputs(z, u) -> np.ndarray:
    """Stack z (vector or (B, n+m)) with u (scalar or (B,))."""
    Z = _zvec(z)
    if Z.ndim == 1:
        return np.append(Z, float(u))
    return np.column_stack((Z, np.asarray(u, dtype=np.float64)))


def output_pdf(fm: ForwardModel, z, u) -> MixtureParams:
    return mdn.to_params(fm.head, nn_core.forward(fm.net, forward_inputs(z, u)))


def error_pdf(p: MixtureParams, y_d) -> MixtureParams:
    """Tracking-error mixture: same priors and variances, means minus y_d."""
    y_d = np.asarray(y_d, dtype=np.float64)
    if y_d.ndim:
        y_d = y_d[..., None]
    return MixtureParams(p.alpha, p.mu - y_d, p.var)


def _check_priors(priors, n_kernels):
    a = np.asarray(priors, dtype=np.float64)
    if a.shape[-1] != n_kernels or np.any(a < 0) or np.any(np.abs(a.sum(axis=-1) - 1) > 1e-9):
        raise ValueError("tied priors must lie on the simplex")
    return a


def control_pdf(ic: InverseController, z, y_d, tied_priors) -> MixtureParams:
    priors = _check_priors(tied_priors, ic.n_kernels)
    raw = nn_core.forward(ic.net, forward_inputs(z, y_d))
    return mdn.tied_params(raw, priors, ic.var_floor)


def _fit(net: Network, X, objective, state, iters):
    B = X.shape[0]

    def loss(params):
        def dloss(Y):
            try:
                val, g = objective(Y)
            except mdn.ParameterizationError:
                return np.inf, None
            return float(np.mean(val)), g / B
        return nn_core.value_and_grads(net, X, dloss, params)

    net, state, f = nn_core.scg_minimize(net, loss, state, max_iters=iters)
    return state, f


def forward_nll(fm: ForwardModel, z, u, y) -> float:
    X = np.atleast_2d(forward_inputs(z, u))
    raw = nn_core.forward(fm.net, X)
    return float(np.mean(mdn.nll(mdn.to_params(fm.head, raw), np.atleast_1d(y))))


def train_forward(fm: ForwardModel, z, u, y_observed, iters: int = 1) -> float:
    """SCG step(s) on the mean NLL of observed outputs; returns post-step NLL.

    ``z``/``u``/``y_observed`` may be single samples or a batch (replay buffer).
    """
    X = np.atleast_2d(forward_inputs(z, u))
    t = np.atleast_1d(np.asarray(y_observed, dtype=np.float64))
    if fm.train_state is None:
        fm.train_state = TrainState(fm.net.params.size)
    fm.train_state, f = _fit(fm.net, X, lambda Y: mdn.nll_and_grad_raw(fm.head, Y, t),
                             fm.train_state, iters)
    return f


def train_controller(ic: InverseController, z, y_d, u_target, tied_priors,
                     iters: int = 1) -> float:
    """SCG step(s) on the NLL of ``u_target`` with the priors held fixed."""
    X = np.atleast_2d(forward_inputs(z, y_d))
    t = np.atleast_1d(np.asarray(u_target, dtype=np.float64))
    priors = _check_priors(np.atleast_2d(tied_priors), ic.n_kernels)
    if ic.train_state is None:
        ic.train_state = TrainState(ic.net.params.size)
    ic.train_state, f = _fit(
        ic.net, X, lambda Y: mdn.tied_nll_and_grad_raw(Y, priors, ic.var_floor, t),
        ic.train_state, iters)
    return f
