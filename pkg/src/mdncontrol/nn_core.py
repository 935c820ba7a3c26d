"""Feedforward networks with hand-coded backpropagation and an SCG trainer.

Parameters live in one flat float64 vector; per layer the weight matrix
(out x in, row-major) is followed by the bias vector.  Hidden layers use
tanh, the output layer is linear.
"""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

_MAGIC = b"NNP1"
TAGS = ("forward", "controller", "baseline_forward", "baseline_controller")


class DivergenceError(RuntimeError):
    """Raised when a loss or gradient turns non-finite during training."""


class ShapeError(ValueError):
    pass


@dataclass
class Network:
    layer_sizes: tuple[int, ...]
    params: np.ndarray
    activation: str = "tanh"

    def __post_init__(self):
        self.layer_sizes = tuple(int(s) for s in self.layer_sizes)
        if len(self.layer_sizes) < 2 or min(self.layer_sizes) < 1:
            raise ValueError(f"invalid layer sizes {self.layer_sizes}")
        self.params = np.asarray(self.params, dtype=np.float64)
        if self.params.shape != (n_params(self.layer_sizes),):
            raise ShapeError(
                f"expected {n_params(self.layer_sizes)} parameters, got {self.params.shape}")
        if self.activation != "tanh":
            raise ValueError("only tanh hidden units are supported")

    @property
    def n_in(self) -> int:
        return self.layer_sizes[0]

    @property
    def n_out(self) -> int:
        return self.layer_sizes[-1]

    def layers(self, params: np.ndarray | None = None):
        """(W, b) views into ``params`` (defaults to the network's own)."""
        p = self.params if params is None else params
        out = []
        pos = 0
        for fan_in, fan_out in zip(self.layer_sizes[:-1], self.layer_sizes[1:]):
            W = p[pos:pos + fan_in * fan_out].reshape(fan_out, fan_in)
            pos += fan_in * fan_out
            b = p[pos:pos + fan_out]
            pos += fan_out
            out.append((W, b))
        return out

    def copy(self) -> "Network":
        return Network(self.layer_sizes, self.params.copy(), self.activation)


def n_params(layer_sizes: Sequence[int]) -> int:
    return sum(a * b + b for a, b in zip(layer_sizes[:-1], layer_sizes[1:]))


def init_network(layer_sizes: Sequence[int], rng: np.random.Generator) -> Network:
    """Zero biases, weights uniform in [-0.5, 0.5] / sqrt(fan_in)."""
    net = Network(tuple(layer_sizes), np.zeros(n_params(layer_sizes)))
    for W, _ in net.layers():
        W[...] = rng.uniform(-0.5, 0.5, size=W.shape) / np.sqrt(W.shape[1])
    return net


def zero_network(layer_sizes: Sequence[int]) -> Network:
    return Network(tuple(layer_sizes), np.zeros(n_params(layer_sizes)))


def _as_batch(net: Network, x) -> tuple[np.ndarray, bool]:
    x = np.asarray(x, dtype=np.float64)
    single = x.ndim == 1
    X = x[None, :] if single else x
    if X.ndim != 2 or X.shape[1] != net.n_in:
        raise ShapeError(f"input shape {x.shape} incompatible with n_in={net.n_in}")
    return X, single


def _activations(net: Network, X: np.ndarray, params=None) -> list[np.ndarray]:
    acts = [X]
    layers = net.layers(params)
    h = X
    for i, (W, b) in enumerate(layers):
        a = h @ W.T + b
        h = a if i == len(layers) - 1 else np.tanh(a)
        acts.append(h)
    return acts


def forward(net: Network, x, params: np.ndarray | None = None) -> np.ndarray:
    """Raw network output for a single input (n_in,) or a batch (B, n_in)."""
    X, single = _as_batch(net, x)
    out = _activations(net, X, params)[-1]
    return out[0] if single else out


def _backward(net, acts, dY, params=None, want_params=True):
    layers = net.layers(params)
    grads = [None] * len(layers)
    delta = dY
    for i in range(len(layers) - 1, -1, -1):
        W, _ = layers[i]
        if want_params:
            grads[i] = (delta.T @ acts[i], delta.sum(axis=0))
        delta = delta @ W
        if i > 0:
            delta = delta * (1.0 - acts[i] ** 2)
    flat = None
    if want_params:
        flat = np.concatenate([np.concatenate((gW.ravel(), gb)) for gW, gb in grads])
    return flat, delta


def _check_dout(net, dL_dout, n_batch, single):
    d = np.asarray(dL_dout, dtype=np.float64)
    D = d[None, :] if d.ndim == 1 else d
    if D.shape != (n_batch, net.n_out):
        raise ShapeError(f"dL_dout shape {d.shape} incompatible with output")
    return D


def grad_params(net: Network, x, dL_dout, params: np.ndarray | None = None) -> np.ndarray:
    """dL/dparams for L depending on the output through ``dL_dout``.

    With a batch input the per-sample gradients are summed.
    """
    X, single = _as_batch(net, x)
    D = _check_dout(net, dL_dout, X.shape[0], single)
    acts = _activations(net, X, params)
    g, _ = _backward(net, acts, D, params)
    return g


def grad_input(net: Network, x, dL_dout) -> np.ndarray:
    """dL/dx; same batching as the input."""
    X, single = _as_batch(net, x)
    D = _check_dout(net, dL_dout, X.shape[0], single)
    acts = _activations(net, X)
    _, dx = _backward(net, acts, D, want_params=False)
    return dx[0] if single else dx


def value_and_grads(net: Network, X: np.ndarray, dloss: Callable, params=None):
    """Evaluate ``dloss(Y) -> (loss, dL/dY)`` and backpropagate to parameters."""
    acts = _activations(net, X, params)
    loss, dY = dloss(acts[-1])
    if not np.isfinite(loss):
        return loss, None
    g, _ = _backward(net, acts, dY, params)
    return loss, g


def jacobian_input(net: Network, x) -> np.ndarray:
    """d out / d x for a single input, shape (n_out, n_in), forward mode."""
    x = np.asarray(x, dtype=np.float64)
    if x.shape != (net.n_in,):
        raise ShapeError(f"input shape {x.shape} incompatible with n_in={net.n_in}")
    layers = net.layers()
    h = x
    J = np.eye(net.n_in)
    for i, (W, b) in enumerate(layers):
        a = W @ h + b
        J = W @ J
        if i < len(layers) - 1:
            h = np.tanh(a)
            J = (1.0 - h ** 2)[:, None] * J
        else:
            h = a
    return J


# --------------------------------------------------------------------------
# scaled conjugate gradient (Moller 1993)

@dataclass
class TrainState:
    n: int
    lam: float = 1e-6
    lam_bar: float = 0.0
    success: bool = True
    direction: np.ndarray | None = None
    prev_grad: np.ndarray | None = None
    iterations: int = 0
    n_success: int = 0
    diverged: bool = False
    history: list = field(default_factory=list)

    def __post_init__(self):
        if self.lam <= 0:
            raise ValueError("lambda must be positive")


LAM_MIN, LAM_MAX = 1e-15, 1e100
SIGMA = 1e-4


def scg_minimize(net: Network, loss: Callable[[np.ndarray], tuple[float, np.ndarray]],
                 state: TrainState | None = None, max_iters: int = 100,
                 gtol: float = 1e-12):
    """Minimise ``loss(params) -> (value, gradient)`` starting from ``net.params``.

    ``net.params`` is updated in place with the best accepted point.
    Returns ``(net, state, final_loss)``.  The state can be passed back in
    so that lambda and the search direction carry over between calls.
    Raises DivergenceError (after restoring the parameters) when the loss
    or gradient at an accepted point is non-finite.
    """
    n = net.params.size
    if state is None:
        state = TrainState(n)
    state.diverged = False
    w = net.params.copy()
    f, g = loss(w)
    if not np.isfinite(f) or g is None or not np.all(np.isfinite(g)):
        state.diverged = True
        raise DivergenceError(f"non-finite loss at start ({f})")
    r = -g
    p = state.direction
    if p is None or p.shape != r.shape or not p @ r > 0:
        p = r.copy()
        state.n_success = 0
    success = True
    lam, lam_bar = state.lam, 0.0
    delta = 0.0

    for _ in range(max_iters):
        pp = float(p @ p)
        if pp < 1e-300 or np.sqrt(float(r @ r)) <= gtol:
            break
        if success:
            sig = SIGMA / np.sqrt(pp)
            _, g_sig = loss(w + sig * p)
            if g_sig is None or not np.all(np.isfinite(g_sig)):
                net.params[...] = w
                state.diverged = True
                raise DivergenceError("non-finite gradient during curvature probe")
            delta = float(p @ (g_sig - g)) / sig
        delta += (lam - lam_bar) * pp
        if delta <= 0:
            lam_bar = 2.0 * (lam - delta / pp)
            delta = -delta + lam * pp
            lam = lam_bar
        mu = float(p @ r)
        alpha = mu / delta
        f_new, g_new = loss(w + alpha * p)
        ok = np.isfinite(f_new) and g_new is not None and np.all(np.isfinite(g_new))
        Delta = 2.0 * delta * (f - f_new) / mu ** 2 if ok else -np.inf
        state.iterations += 1
        if Delta >= 0:
            w = w + alpha * p
            r_old = r
            f, g = f_new, g_new
            r = -g
            lam_bar = 0.0
            success = True
            state.n_success += 1
            if state.n_success % n == 0:
                p = r.copy()
            else:
                beta = (float(r @ r) - float(r @ r_old)) / mu
                p = r + beta * p
                if not p @ r > 0:
                    p = r.copy()
            if Delta >= 0.75:
                lam = max(lam / 4.0, LAM_MIN)
        else:
            lam_bar = lam
            success = False
        if Delta < 0.25:
            lam = min(lam + delta * (1.0 - Delta) / pp, LAM_MAX) if np.isfinite(Delta) \
                else min(4.0 * lam + delta / pp, LAM_MAX)
        state.history.append(f)

    net.params[...] = w
    state.lam = float(np.clip(lam, LAM_MIN, LAM_MAX))
    state.lam_bar = 0.0
    state.success = success
    state.direction = p
    state.prev_grad = g
    if len(state.history) > 1000:
        del state.history[:-1000]
    return net, state, float(f)


# --------------------------------------------------------------------------
# snapshots

def to_bytes(net: Network, tag: str) -> bytes:
    if tag not in TAGS:
        raise ValueError(f"unknown tag {tag!r}")
    sizes = net.layer_sizes
    head = struct.pack("<4sBI", _MAGIC, TAGS.index(tag), len(sizes))
    head += struct.pack(f"<{len(sizes)}I", *sizes)
    return head + net.params.astype("<f8").tobytes()


def from_bytes(blob: bytes) -> tuple[Network, str]:
    magic, tag, L = struct.unpack_from("<4sBI", blob, 0)
    if magic != _MAGIC:
        raise ValueError("not a network snapshot")
    off = struct.calcsize("<4sBI")
    sizes = struct.unpack_from(f"<{L}I", blob, off)
    off += 4 * L
    params = np.frombuffer(blob, dtype="<f8", offset=off).astype(np.float64)
    return Network(sizes, params), TAGS[tag]


def save_network(path, net: Network, tag: str) -> None:
    Path(path).write_bytes(to_bytes(net, tag))


def load_network(path) -> tuple[Network, str]:
    return from_bytes(Path(path).read_bytes())
