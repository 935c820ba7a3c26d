"""Offline pretraining, the online control loop and paired comparison runs."""
from __future__ import annotations

import copy
import json
import logging
from collections import deque
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import baseline as bl
from . import mdn, nn_core, plants
from .config import RunConfig
from .control_law import cost_at, phi, recursive_u, solve_u_direct, solve_u_direct_batch
from .dual_models import (ForwardModel, InverseController, StateVector, control_pdf,
                          forward_nll, output_pdf, train_controller, train_forward)
from .stability import monitor
from .trace import SimTrace, summarize, write_trace

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class Example:
    plant: Callable       # (y_prev, u, eps) -> output caused by the decision u
    noise: plants.NoiseMixture
    ref_coeff: float
    delay: int            # 0: y_k depends on u_k; 1: y_k depends on u_{k-1}


EXAMPLES = {
    1: Example(plants.plant1_output, plants.EXAMPLE1_NOISE, 0.25, 0),
    2: Example(plants.plant2_output, plants.EXAMPLE2_NOISE, 0.32, 1),
}


class RunHalted(RuntimeError):
    pass


# --------------------------------------------------------------------------
# deterministic input streams

_STREAMS = ("noise", "reference", "excitation", "excitation_noise", "pretrain_reference",
            "init_mdn", "init_baseline")


def rngs(cfg: RunConfig) -> dict[str, np.random.Generator]:
    children = np.random.SeedSequence(cfg.seed).spawn(len(_STREAMS))
    return {name: np.random.default_rng(s) for name, s in zip(_STREAMS, children)}


def noise_mixture(cfg: RunConfig) -> plants.NoiseMixture:
    nm = EXAMPLES[cfg.example].noise
    return plants.NoiseMixture(nm.means, nm.variances, tuple(cfg.noise_weights))


def reference_sequence(cfg: RunConfig, length: int, rng) -> np.ndarray:
    r = plants.reference_signal(cfg.reference, length, rng, path=cfg.reference_file or None)
    return cfg.ref_offset + cfg.ref_scale * r


def desired_sequence(cfg: RunConfig, r: np.ndarray) -> np.ndarray:
    rm = plants.ReferenceModel(EXAMPLES[cfg.example].ref_coeff, 0)
    return np.array([plants.reference_step(rm, v) for v in r])


@dataclass
class Streams:
    eps: np.ndarray
    r: np.ndarray


def run_streams(cfg: RunConfig) -> Streams:
    g = rngs(cfg)
    eps = plants.noise_sample(noise_mixture(cfg), g["noise"], size=cfg.run_length + 1)
    return Streams(np.asarray(eps), reference_sequence(cfg, cfg.run_length, g["reference"]))


# --------------------------------------------------------------------------
# pretraining

@dataclass
class Models:
    fm: ForwardModel
    ic: InverseController
    bp: bl.BaselinePair
    replay: dict[str, np.ndarray]
    metrics: dict = field(default_factory=dict)


def simulate_open_loop(cfg: RunConfig, u_seq, eps_seq):
    """Regressors (z, u) and resulting outputs for a fixed control sequence."""
    ex = EXAMPLES[cfg.example]
    n, m = cfg.lags
    ys, us, X, Y = [0.0], [], [], []
    for u, e in zip(u_seq, eps_seq):
        z = StateVector.from_history(ys, us, n, m).vector()
        y = float(ex.plant(ys[-1], u, e))
        X.append(np.append(z, u))
        Y.append(y)
        ys.append(y)
        us.append(float(u))
    return np.array(X), np.array(Y)


def _mixture_mean(fm, X):
    return mdn.moments(output_pdf(fm, X[:, :-1], X[:, -1]))[0]


def pretrain(cfg: RunConfig) -> Models:
    """Identify both forward models offline and fit both controllers."""
    g = rngs(cfg)
    w = cfg.weights
    L = cfg.pretrain_length
    u_exc = plants.excitation(L, g["excitation"], hold=cfg.excitation_hold)
    eps = plants.noise_sample(noise_mixture(cfg), g["excitation_noise"], size=L)
    X, Y = simulate_open_loop(cfg, u_exc, eps)
    n_train = int(round(0.8 * L))
    Xt, Yt, Xh, Yh = X[:n_train], Y[:n_train], X[n_train:], Y[n_train:]

    fm = ForwardModel.create(cfg.lags, cfg.hidden, cfg.kernels, g["init_mdn"], cfg.var_floor)
    ic = InverseController.create(cfg.lags, cfg.hidden, cfg.kernels, g["init_mdn"],
                                  cfg.controller_var_floor)
    bp = bl.BaselinePair.create(cfg.lags, cfg.hidden, cfg.Q, g["init_baseline"], cfg.u_bounds)

    m = {"nll_initial": forward_nll(fm, Xt[:, :-1], Xt[:, -1], Yt)}
    try:
        m["nll_final"] = train_forward(fm, Xt[:, :-1], Xt[:, -1], Yt, iters=cfg.pretrain_iters)
    except nn_core.DivergenceError as exc:
        raise RunHalted(f"forward pretraining diverged: {exc}") from exc
    m["nll_heldout"] = forward_nll(fm, Xh[:, :-1], Xh[:, -1], Yh)
    m["rmse_heldout"] = float(np.sqrt(np.mean((_mixture_mean(fm, Xh) - Yh) ** 2)))

    Z = Xt[:, :-1]
    yd = desired_sequence(cfg, reference_sequence(cfg, n_train, g["pretrain_reference"]))
    u_star = solve_u_direct_batch(fm, Z, yd, w, cfg.u_bounds)
    priors = output_pdf(fm, Z, u_star).alpha
    m["controller_nll_final"] = train_controller(ic, Z, yd, u_star, priors,
                                                 iters=cfg.pretrain_iters)

    m["baseline_mse_final"] = bl.baseline_train_forward(bp, Z, Xt[:, -1], Yt,
                                                        iters=cfg.pretrain_iters)
    y_hat = nn_core.forward(bp.forward, Xh)[:, 0]
    m["baseline_rmse_heldout"] = float(np.sqrt(np.mean((y_hat - Yh) ** 2)))
    m["baseline_controller_loss_final"] = bl.baseline_train_controller(
        bp, Z, yd, iters=cfg.pretrain_iters)

    for model in (fm, ic):
        model.train_state = None
    bp.forward_state = bp.controller_state = None

    B = cfg.buffer_size
    replay = {"X": Xt[-B:], "Y": Yt[-B:], "Z": Z[-B:], "yd": yd[-B:],
              "u_star": u_star[-B:], "priors": priors[-B:]}
    log.info("pretrain example %d seed %d: %s", cfg.example, cfg.seed, m)
    return Models(fm, ic, bp, replay, m)


SNAPSHOT_FILES = {"forward": "forward.bin", "controller": "controller.bin",
                  "baseline_forward": "baseline_forward.bin",
                  "baseline_controller": "baseline_controller.bin"}


def save_models(models: Models, directory) -> Path:
    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    nets = {"forward": models.fm.net, "controller": models.ic.net,
            "baseline_forward": models.bp.forward, "baseline_controller": models.bp.controller}
    for tag, net in nets.items():
        nn_core.save_network(d / SNAPSHOT_FILES[tag], net, tag)
    np.savez(d / "replay.npz", **models.replay)
    (d / "pretrain_metrics.json").write_text(json.dumps(models.metrics, indent=2, sort_keys=True))
    return d


def load_models(cfg: RunConfig, directory) -> Models:
    d = Path(directory)
    nets = {}
    for tag, fname in SNAPSHOT_FILES.items():
        net, stored = nn_core.load_network(d / fname)
        if stored != tag:
            raise ValueError(f"{fname} is tagged {stored!r}, expected {tag!r}")
        nets[tag] = net
    fm = ForwardModel(nets["forward"], mdn.MdnHead(cfg.kernels, cfg.var_floor), cfg.lags)
    ic = InverseController(nets["controller"], cfg.kernels, cfg.lags, cfg.controller_var_floor)
    bp = bl.BaselinePair(nets["baseline_forward"], nets["baseline_controller"], cfg.Q,
                         cfg.lags, cfg.u_bounds)
    with np.load(d / "replay.npz") as z:
        replay = {k: z[k] for k in z.files}
    metrics_path = d / "pretrain_metrics.json"
    metrics = json.loads(metrics_path.read_text()) if metrics_path.exists() else {}
    return Models(fm, ic, bp, replay, metrics)


# --------------------------------------------------------------------------
# online policies

class MdnPolicy:
    """Steps 1-3 of the online algorithm in ``decide``, step 5 in ``observe``."""

    method = "mdn"

    def __init__(self, fm: ForwardModel, ic: InverseController, cfg: RunConfig, replay=None):
        self.fm, self.ic, self.cfg, self.w = fm, ic, cfg, cfg.weights
        B = cfg.buffer_size
        self.fbuf = deque(maxlen=B)
        self.cbuf = deque(maxlen=B)
        if replay is not None:
            self.fbuf.extend(zip(replay["X"], replay["Y"]))
            self.cbuf.extend(zip(replay["Z"], replay["yd"], replay["u_star"], replay["priors"]))
        self.chi_prev = None
        self.u_star_prev = 0.0
        self.u_prev = 0.0
        self.counts = {"recursive": 0, "direct": 0, "guard": 0, "reanchor": 0}
        self.k = 0

    def _optimal_u(self, z, yd):
        cfg, fm, w = self.cfg, self.fm, self.w
        lo, hi = cfg.u_bounds
        chi = np.append(z, yd)
        if cfg.control_solver == "recursive" and self.chi_prev is not None:
            step = recursive_u(self.u_star_prev, self.chi_prev, chi, fm, w)
            if not step.guard_ok:
                self.counts["guard"] += 1
            elif lo <= step.u <= hi:
                denom = 2 * w.Q + step.derivs.dphi_du
                newton = (phi(fm, z, step.u, yd, w) + 2 * w.Q * step.u) / denom
                if abs(newton) <= cfg.reanchor_tol:
                    self.counts["recursive"] += 1
                    return step.u, chi
                self.counts["reanchor"] += 1
            else:
                self.counts["reanchor"] += 1
        self.counts["direct"] += 1
        return solve_u_direct(fm, z, yd, w, cfg.u_bounds), chi

    def decide(self, z: np.ndarray, yd: float) -> dict:
        cfg, fm, ic = self.cfg, self.fm, self.ic
        u_star, chi = self._optimal_u(z, yd)

        priors = output_pdf(fm, z, u_star).alpha
        self.cbuf.append((z, yd, u_star, priors))
        Zc, Yc, Uc, Pc = map(np.array, zip(*self.cbuf))
        nll_c = train_controller(ic, Zc, Yc, Uc, Pc, iters=cfg.online_updates)

        tied = output_pdf(fm, z, self.u_prev).alpha
        u = float(np.clip(mdn.most_probable(control_pdf(ic, z, yd, tied)), *cfg.u_bounds))
        if not np.isfinite(u):
            raise RunHalted("non-finite control")
        self.chi_prev, self.u_star_prev, self.u_prev = chi, u_star, u

        out = {"u": u, "u_star": u_star, "nll_controller": nll_c,
               "J": cost_at(fm, z, yd, u, self.w)}
        if self.k % cfg.stability_period == 0:
            rep = monitor(fm, z, u, yd, self.w)
            out.update(spectral_norm=rep.spectral_norm, spectral_radius=rep.spectral_radius,
                       stable_flag=rep.stable)
        self.k += 1
        return out

    def observe(self, z, u, y) -> float:
        self.fbuf.append((np.append(z, u), y))
        X, Y = map(np.array, zip(*self.fbuf))
        return train_forward(self.fm, X[:, :-1], X[:, -1], Y, iters=self.cfg.online_updates)


class BaselinePolicy:
    method = "baseline"

    def __init__(self, bp: bl.BaselinePair, cfg: RunConfig, replay=None):
        self.bp, self.cfg = bp, cfg
        B = cfg.buffer_size
        self.fbuf = deque(maxlen=B)
        self.cbuf = deque(maxlen=B)
        if replay is not None:
            self.fbuf.extend(zip(replay["X"], replay["Y"]))
            self.cbuf.extend(zip(replay["Z"], replay["yd"]))

    def decide(self, z, yd) -> dict:
        self.cbuf.append((z, yd))
        Zc, Yc = map(np.array, zip(*self.cbuf))
        loss = bl.baseline_train_controller(self.bp, Zc, Yc, iters=self.cfg.online_updates)
        u = bl.baseline_control(self.bp, z, yd)
        if not np.isfinite(u):
            raise RunHalted("non-finite control")
        y_hat = bl.baseline_predict(self.bp, z, u)
        return {"u": u, "nll_controller": loss, "J": (y_hat - yd) ** 2 + self.bp.Q * u ** 2}

    def observe(self, z, u, y) -> float:
        self.fbuf.append((np.append(z, u), y))
        X, Y = map(np.array, zip(*self.fbuf))
        return bl.baseline_train_forward(self.bp, X[:, :-1], X[:, -1], Y,
                                         iters=self.cfg.online_updates)


def make_policy(method: str, models: Models, cfg: RunConfig):
    """Policy over private copies of the networks; the snapshot stays untouched."""
    if method == "mdn":
        return MdnPolicy(copy.deepcopy(models.fm), copy.deepcopy(models.ic), cfg, models.replay)
    if method == "baseline":
        return BaselinePolicy(copy.deepcopy(models.bp), cfg, models.replay)
    raise ValueError(f"unknown method {method!r}")


# --------------------------------------------------------------------------
# closed loop

_HALT_ERRORS = (RunHalted, FloatingPointError, nn_core.DivergenceError,
                mdn.ParameterizationError, ValueError)


def run_online(cfg: RunConfig, models: Models, method: str = "mdn",
               streams: Streams | None = None) -> SimTrace:
    """Closed-loop run; rows are indexed by plant time k.

    With a one-step input delay (example 2) row k holds y_k, produced by the
    previous row's control, and u_k, chosen after observing y_k to track
    y^d_{k+1}.  Otherwise u_k is chosen before y_k to track y^d_k.
    """
    ex = EXAMPLES[cfg.example]
    streams = streams or run_streams(cfg)
    policy = make_policy(method, models, cfg)
    trace = SimTrace(method)
    rm = plants.ReferenceModel(ex.ref_coeff, ex.delay)
    n, m = cfg.lags
    ys, us = [0.0], []
    z_pending = None
    for k in range(cfg.run_length):
        try:
            yd_k = plants.reference_step(rm, streams.r[k])
            extra = {}
            if ex.delay:
                u_prev = us[-1] if us else 0.0
                z_prev = z_pending if z_pending is not None else np.zeros(n + m)
                y_k = float(ex.plant(ys[-1], u_prev, streams.eps[k]))
                nll_f = policy.observe(z_prev, u_prev, y_k)
                ys.append(y_k)
                z = StateVector.from_history(ys, us, n, m).vector()
                info = policy.decide(z, rm.preview())
                us.append(info["u"])
                z_pending = z
            else:
                z = StateVector.from_history(ys, us, n, m).vector()
                info = policy.decide(z, yd_k)
                y_k = float(ex.plant(ys[-1], info["u"], streams.eps[k]))
                nll_f = policy.observe(z, info["u"], y_k)
                ys.append(y_k)
                us.append(info["u"])
            if not np.isfinite(y_k):
                raise RunHalted("non-finite plant output")
            extra = {c: info.get(c) for c in ("spectral_norm", "spectral_radius", "stable_flag")}
            trace.append(k=k, r=float(streams.r[k]), yd=yd_k, y=y_k, u=info["u"], J=info["J"],
                         nll_forward=nll_f, nll_controller=info["nll_controller"], **extra)
        except _HALT_ERRORS as exc:
            trace.failure = f"step {k}: {exc}"
            log.error("%s run halted at %s", method, trace.failure)
            break
    if isinstance(policy, MdnPolicy):
        log.info("mdn control-law usage: %s", policy.counts)
    return trace


@dataclass
class Comparison:
    traces: dict[str, SimTrace]
    summary: dict[str, dict]
    paths: dict[str, Path] = field(default_factory=dict)


def compare(cfg: RunConfig, models: Models | None = None, out_dir=None) -> Comparison:
    """MDN and baseline on identical noise and reference streams."""
    models = models or pretrain(cfg)
    streams = run_streams(cfg)
    traces = {meth: run_online(cfg, models, meth, streams) for meth in ("mdn", "baseline")}
    summary = {meth: summarize(t, cfg.window) for meth, t in traces.items()}
    cmp = Comparison(traces, summary)
    if out_dir is not None:
        d = Path(out_dir)
        for meth, t in traces.items():
            cmp.paths[meth] = write_trace(d / f"trace_{meth}.csv", t)
        (d / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return cmp
