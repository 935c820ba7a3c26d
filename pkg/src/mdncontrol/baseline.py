"""Deterministic MLP comparison: squared-error forward model plus an indirect
adaptive controller trained through it."""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from . import nn_core
from .dual_models import forward_inputs
from .nn_core import Network, TrainState


@dataclass
class BaselinePair:
    forward: Network
    controller: Network
    Q: float
    lags: tuple[int, int]
    u_bounds: tuple[float, float] = (-5.0, 5.0)
    forward_state: TrainState | None = field(default=None, repr=False)
    controller_state: TrainState | None = field(default=None, repr=False)

    def __post_init__(self):
        n, m = self.lags
        if self.forward.n_in != n + m + 1 or self.controller.n_in != n + m + 1:
            raise ValueError("baseline networks take n+m+1 inputs")
        if self.forward.n_out != 1 or self.controller.n_out != 1:
            raise ValueError("baseline networks have a single output")

    @classmethod
    def create(cls, lags, hidden: Sequence[int], Q: float, rng, u_bounds=(-5.0, 5.0)):
        n, m = lags
        sizes = (n + m + 1, *hidden, 1)
        return cls(nn_core.init_network(sizes, rng), nn_core.init_network(sizes, rng),
                   Q, tuple(lags), tuple(u_bounds))


def _mse_loss(net, X, y):
    B = X.shape[0]

    def dloss(Y):
        r = Y[:, 0] - y
        return float(np.mean(r ** 2)), (2.0 * r / B)[:, None]

    return lambda params: nn_core.value_and_grads(net, X, dloss, params)


def baseline_train_forward(bp: BaselinePair, z, u, y, iters: int = 1) -> float:
    """SCG step(s) on the mean squared prediction error."""
    X = np.atleast_2d(forward_inputs(z, u))
    t = np.atleast_1d(np.asarray(y, dtype=np.float64))
    if bp.forward_state is None:
        bp.forward_state = TrainState(bp.forward.params.size)
    _, bp.forward_state, f = nn_core.scg_minimize(bp.forward, _mse_loss(bp.forward, X, t),
                                                  bp.forward_state, iters)
    return f


def indirect_loss(bp: BaselinePair, X: np.ndarray, y_d: np.ndarray):
    """Mean of (y_hat(z, C(z, y_d)) - y_d)^2 + Q C^2 and its controller gradient.

    The forward network is held fixed; dJ/du reaches the controller through
    the forward network's input gradient.
    """
    B = X.shape[0]
    Z = X[:, :-1]

    def loss(params):
        u = nn_core.forward(bp.controller, X, params)[:, 0]
        Xf = np.column_stack((Z, u))
        y_hat = nn_core.forward(bp.forward, Xf)[:, 0]
        err = y_hat - y_d
        val = float(np.mean(err ** 2 + bp.Q * u ** 2))
        if not np.isfinite(val):
            return val, None
        dy_du = nn_core.grad_input(bp.forward, Xf, np.ones((B, 1)))[:, -1]
        dJ_du = (2.0 * err * dy_du + 2.0 * bp.Q * u) / B
        return val, nn_core.grad_params(bp.controller, X, dJ_du[:, None], params)

    return loss


def baseline_train_controller(bp: BaselinePair, z, y_d, iters: int = 1) -> float:
    X = np.atleast_2d(forward_inputs(z, y_d))
    yd = np.atleast_1d(np.asarray(y_d, dtype=np.float64))
    if bp.controller_state is None:
        bp.controller_state = TrainState(bp.controller.params.size)
    _, bp.controller_state, f = nn_core.scg_minimize(
        bp.controller, indirect_loss(bp, X, yd), bp.controller_state, iters)
    return f


def baseline_predict(bp: BaselinePair, z, u) -> float:
    return float(nn_core.forward(bp.forward, forward_inputs(z, u))[0])


def baseline_control(bp: BaselinePair, z, y_d) -> float:
    """Controller output saturated to the control bounds."""
    raw = float(nn_core.forward(bp.controller, forward_inputs(z, y_d))[0])
    return float(np.clip(raw, *bp.u_bounds))
