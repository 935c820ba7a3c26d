"""Gaussian mixture density head.

Raw network outputs are laid out as ``[logits(N), means(N), log-variances(N)]``.
Priors come from a softmax, variances from ``exp`` clamped below by a floor.
Every function accepts a single mixture (arrays of shape ``(N,)``) or a batch
(shape ``(B, N)``) with a matching target array.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

LOG_2PI = np.log(2.0 * np.pi)
NLL_PENALTY = 1e10
_S_MAX = 700.0


class ParameterizationError(ValueError):
    pass


@dataclass(frozen=True)
class MixtureParams:
    alpha: np.ndarray
    mu: np.ndarray
    var: np.ndarray

    @property
    def n_kernels(self) -> int:
        return self.alpha.shape[-1]

    def validate(self, floor: float = 0.0, tol: float = 1e-12) -> None:
        a = np.asarray(self.alpha)
        if np.any(a < 0) or np.any(np.abs(a.sum(axis=-1) - 1.0) > tol):
            raise ParameterizationError("priors are not on the simplex")
        if np.any(self.var <= 0) or np.any(self.var < floor):
            raise ParameterizationError("variance below floor")


@dataclass(frozen=True)
class MdnHead:
    n_kernels: int = 2
    var_floor: float = 1e-6

    @property
    def raw_dim(self) -> int:
        return 3 * self.n_kernels


def mixture(alpha, mu, var) -> MixtureParams:
    return MixtureParams(np.asarray(alpha, dtype=float), np.asarray(mu, dtype=float),
                         np.asarray(var, dtype=float))


def softmax(logits: np.ndarray) -> np.ndarray:
    z = logits - logits.max(axis=-1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=-1, keepdims=True)


def _split(head: MdnHead, raw):
    raw = np.asarray(raw, dtype=np.float64)
    N = head.n_kernels
    if raw.shape[-1] != 3 * N:
        raise ParameterizationError(f"raw output has {raw.shape[-1]} entries, expected {3 * N}")
    if not np.all(np.isfinite(raw)):
        raise ParameterizationError("non-finite raw network output")
    return raw[..., :N], raw[..., N:2 * N], raw[..., 2 * N:]


def variance_link(s: np.ndarray, floor: float) -> np.ndarray:
    return np.maximum(np.exp(np.minimum(s, _S_MAX)), floor)


def variance_link_grad(s: np.ndarray, floor: float) -> np.ndarray:
    """d var / d s; zero where the floor is active."""
    v = np.exp(np.minimum(s, _S_MAX))
    return np.where(v > floor, v, 0.0)


def to_params(head: MdnHead, raw) -> MixtureParams:
    logits, means, s = _split(head, raw)
    return MixtureParams(softmax(logits), means.copy(), variance_link(s, head.var_floor))


def _log_kernels(p: MixtureParams, t):
    t = np.asarray(t, dtype=np.float64)[..., None]
    with np.errstate(divide="ignore"):
        log_a = np.log(p.alpha)
    return log_a - 0.5 * (LOG_2PI + np.log(p.var) + (t - p.mu) ** 2 / p.var)


def _logsumexp(x):
    m = np.max(x, axis=-1, keepdims=True)
    m = np.where(np.isfinite(m), m, 0.0)
    return (m + np.log(np.sum(np.exp(x - m), axis=-1, keepdims=True)))[..., 0]


def log_density(p: MixtureParams, t):
    return _logsumexp(_log_kernels(p, t))


def density(p: MixtureParams, t):
    """Mixture density sum_i alpha_i N(t; mu_i, var_i)."""
    return np.exp(log_density(p, t))


def nll(p: MixtureParams, t):
    """-ln density, capped at NLL_PENALTY when the density underflows."""
    v = -log_density(p, t)
    return np.where(np.isfinite(v), np.minimum(v, NLL_PENALTY), NLL_PENALTY)[()]


def responsibilities(p: MixtureParams, t) -> np.ndarray:
    lk = _log_kernels(p, t)
    return np.exp(lk - _logsumexp(lk)[..., None])


def _nll_kernel_grads(p: MixtureParams, s, floor, t):
    """Per-sample nll plus gradients wrt means and log-variances."""
    lk = _log_kernels(p, t)
    lse = _logsumexp(lk)
    post = np.exp(lk - lse[..., None])
    diff = p.mu - np.asarray(t, dtype=np.float64)[..., None]
    g_mu = post * diff / p.var
    # d nll / d var_i = post_i/2 * (1/var - diff^2/var^2)
    g_var = 0.5 * post * (1.0 / p.var - diff ** 2 / p.var ** 2)
    g_s = g_var * variance_link_grad(s, floor)
    return -lse, post, g_mu, g_s


def nll_and_grad_raw(head: MdnHead, raw, t):
    """(nll, d nll / d raw) in one pass; batched over leading axes."""
    logits, _, s = _split(head, raw)
    p = to_params(head, raw)
    val, post, g_mu, g_s = _nll_kernel_grads(p, s, head.var_floor, t)
    g_logit = p.alpha - post
    return val, np.concatenate((g_logit, g_mu, g_s), axis=-1)


def nll_grad_raw(head: MdnHead, raw, t) -> np.ndarray:
    grad = nll_and_grad_raw(head, raw, t)[1]
    if not np.all(np.isfinite(grad)):
        raise ParameterizationError("non-finite nll gradient")
    return grad


def tied_params(raw2, priors, floor: float) -> MixtureParams:
    """Mixture whose priors are supplied externally; raw2 = [means, log-vars]."""
    raw2 = np.asarray(raw2, dtype=np.float64)
    N = raw2.shape[-1] // 2
    if not np.all(np.isfinite(raw2)):
        raise ParameterizationError("non-finite raw network output")
    priors = np.broadcast_to(np.asarray(priors, dtype=np.float64), raw2[..., :N].shape)
    return MixtureParams(priors.copy(), raw2[..., :N].copy(), variance_link(raw2[..., N:], floor))


def tied_nll_and_grad_raw(raw2, priors, floor: float, t):
    p = tied_params(raw2, priors, floor)
    N = p.n_kernels
    val, _, g_mu, g_s = _nll_kernel_grads(p, raw2[..., N:], floor, t)
    return val, np.concatenate((g_mu, g_s), axis=-1)


def moments(p: MixtureParams):
    """(mean, variance) of the mixture (law of total variance)."""
    mean = np.sum(p.alpha * p.mu, axis=-1)
    var = np.sum(p.alpha * (p.var + (p.mu - mean[..., None]) ** 2), axis=-1)
    return mean[()], var[()]


def most_probable(p: MixtureParams):
    """Mean of the highest-prior kernel; ties go to the lowest index."""
    i = np.argmax(p.alpha, axis=-1)
    return np.take_along_axis(p.mu, np.asarray(i)[..., None], axis=-1)[..., 0][()]


def sample(p: MixtureParams, rng: np.random.Generator, size=None):
    """Draw from a single mixture: kernel by prior, then its Gaussian."""
    if p.alpha.ndim != 1:
        raise ValueError("sample expects a single mixture")
    k = rng.choice(p.n_kernels, size=size, p=p.alpha)
    z = rng.standard_normal(size=size)
    return (p.mu[k] + np.sqrt(p.var[k]) * z)[()]
