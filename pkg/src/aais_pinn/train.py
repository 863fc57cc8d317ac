"""Optimizers and the resampling training loop."""

from __future__ import annotations

import hashlib
import json
import logging
import time
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .pde import PoissonProblem, compute_metrics
from .pinn import LossSpec, MlpField, MlpParams, init_params, loss_and_gradient
from .samplers import Uniform, propose_points
from .target import ResidualTarget

log = logging.getLogger(__name__)


class NonFiniteParametersError(FloatingPointError):
    pass


@dataclass
class AdamState:
    m: np.ndarray
    v: np.ndarray
    t: int = 0

    @classmethod
    def fresh(cls, n: int) -> "AdamState":
        return cls(np.zeros(n), np.zeros(n), 0)


def adam_step(theta, grad, state: AdamState, lr: float, beta1: float = 0.9,
              beta2: float = 0.999, eps: float = 1e-8):
    """Bias-corrected Adam update; returns ``(theta, state)``."""
    t = state.t + 1
    m = beta1 * state.m + (1.0 - beta1) * grad
    v = beta2 * state.v + (1.0 - beta2) * grad * grad
    m_hat = m / (1.0 - beta1 ** t)
    v_hat = v / (1.0 - beta2 ** t)
    return theta - lr * m_hat / (np.sqrt(v_hat) + eps), AdamState(m, v, t)


@dataclass
class LbfgsResult:
    theta: np.ndarray
    loss: float
    iterations: int
    status: str                 # "max_iters" | "converged" | "line_search" | "non_finite"
    losses: list = field(default_factory=list)


def _two_loop(g, S, Y):
    q = g.copy()
    alphas = []
    for s, y in zip(reversed(S), reversed(Y)):
        rho = 1.0 / np.dot(y, s)
        a = rho * np.dot(s, q)
        q -= a * y
        alphas.append((rho, a))
    s, y = S[-1], Y[-1]
    q *= np.dot(s, y) / np.dot(y, y)
    for (s, y), (rho, a) in zip(zip(S, Y), reversed(alphas)):
        b = rho * np.dot(y, q)
        q += (a - b) * s
    return -q


def lbfgs_minimize(fun, theta0, max_iters: int, history: int = 10,
                   lr_scale: float = 1.0, max_halvings: int = 20, c1: float = 1e-4,
                   grad_tol: float = 1e-10) -> LbfgsResult:
    """L-BFGS with backtracking Armijo search starting at ``lr_scale``.

    ``fun(theta)`` returns ``(loss, grad)``. Non-finite trial points count as
    rejected steps; a non-finite start aborts immediately.
    """
    theta = np.array(theta0, dtype=float)
    f, g = fun(theta)
    if not (np.isfinite(f) and np.all(np.isfinite(g))):
        log.warning("L-BFGS: non-finite loss or gradient at the start point")
        return LbfgsResult(theta, f, 0, "non_finite")
    S, Y = deque(maxlen=history), deque(maxlen=history)
    losses = [f]
    status = "max_iters"
    it = 0
    for it in range(max_iters):
        if np.linalg.norm(g) < grad_tol:
            status = "converged"
            break
        if S:
            d = _two_loop(g, S, Y)
        else:
            d = -g * min(1.0, 1.0 / np.sum(np.abs(g)))
        slope = np.dot(g, d)
        if slope >= 0:
            S.clear(); Y.clear()
            d = -g * min(1.0, 1.0 / np.sum(np.abs(g)))
            slope = np.dot(g, d)
        step = lr_scale
        for _ in range(max_halvings + 1):
            trial = theta + step * d
            f_new, g_new = fun(trial)
            if np.isfinite(f_new) and np.all(np.isfinite(g_new)) and f_new <= f + c1 * step * slope:
                break
            step *= 0.5
        else:
            status = "line_search"
            break
        s, y = trial - theta, g_new - g
        if np.dot(s, y) > 1e-10 * np.dot(y, y):
            S.append(s)
            Y.append(y)
        theta, f, g = trial, f_new, g_new
        losses.append(f)
    else:
        it = max_iters
    return LbfgsResult(theta, f, it, status, losses)


@dataclass
class TrainConfig:
    n_interior: int = 2000
    n_boundary: int = 500
    n_adaptive: int = 500
    iterations: int = 5
    epochs_adam_pre: int = 500
    epochs_opt_pre: int = 1000
    epochs_adam: int = 500
    epochs_opt: int = 1000
    lr_adam: float = 1e-4
    lr_opt: float = 0.3
    sampler: object = field(default_factory=Uniform)
    seed: int = 0
    interior_weight: float = 1.0
    boundary_weight: float = 1.0
    n_test_uniform: int = 10000
    n_test_gauss: int = 1000
    test_seed: int = 20240101

    def __post_init__(self):
        for name in ("n_interior", "n_boundary", "n_adaptive"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.n_adaptive > self.n_interior:
            raise ValueError("n_adaptive cannot exceed n_interior")
        if self.iterations < 0:
            raise ValueError("iterations must be nonnegative")


def dataset_hash(points) -> str:
    return hashlib.sha256(np.ascontiguousarray(points, dtype="<f8").tobytes()).hexdigest()[:16]


@dataclass
class RunRecord:
    entries: list = field(default_factory=list)

    def to_jsonl(self) -> str:
        return "".join(json.dumps(e) + "\n" for e in self.entries)

    @property
    def losses(self):
        return [e["loss"] for e in self.entries]

    @property
    def final(self) -> dict:
        return self.entries[-1]


def _check_finite(theta):
    if not np.all(np.isfinite(theta)):
        raise NonFiniteParametersError("non-finite network parameter encountered")


def train_stage(params: MlpParams, spec: LossSpec, adam_epochs: int, opt_epochs: int,
                lr_adam: float, lr_opt: float) -> tuple[MlpParams, float]:
    """Full-batch Adam epochs followed by L-BFGS iterations."""
    sizes = params.layer_sizes
    theta = params.flatten()

    def fun(th):
        return loss_and_gradient(MlpParams.unflatten(sizes, th), spec)

    state = AdamState.fresh(theta.size)
    f = None
    for _ in range(adam_epochs):
        f, g = fun(theta)
        theta, state = adam_step(theta, g, state, lr_adam)
        _check_finite(theta)
    if opt_epochs > 0:
        res = lbfgs_minimize(fun, theta, opt_epochs, lr_scale=lr_opt)
        theta = res.theta
        _check_finite(theta)
    f = fun(theta)[0]
    return MlpParams.unflatten(sizes, theta), f


def resample_train(problem: PoissonProblem, layer_sizes, cfg: TrainConfig,
                   progress=None):
    """Pretrain on uniform points, then alternate adaptive resampling and
    retraining for ``cfg.iterations`` rounds. Returns ``(params, record)``.

    Each round keeps a uniform random subset of ``n_interior - n_adaptive``
    interior points, appends ``n_adaptive`` points from the sampler, and
    redraws every boundary point.
    """
    if layer_sizes[0] != problem.dim:
        raise ValueError("network input size must match the problem dimension")
    rng = np.random.default_rng(cfg.seed)
    test_pts, test_vals = problem.build_test_set(
        cfg.n_test_uniform, cfg.n_test_gauss, np.random.default_rng(cfg.test_seed))
    params = init_params(layer_sizes, rng)
    interior = problem.sample_interior(cfg.n_interior, rng)
    boundary = problem.sample_boundary(cfg.n_boundary, rng)
    record = RunRecord()
    t0 = time.perf_counter()

    def make_spec():
        return LossSpec(problem, interior, boundary,
                        np.full(interior.shape[0], cfg.interior_weight),
                        np.full(boundary.shape[0], cfg.boundary_weight))

    def log_entry(it, loss_value, extra):
        m = compute_metrics(MlpField(params), test_pts, test_vals)
        entry = {"iteration": it, "loss": loss_value, "e_r": m.e_r, "e_inf": m.e_inf,
                 "dataset": dataset_hash(interior), "n_interior": int(interior.shape[0]),
                 "boundary": dataset_hash(boundary)}
        entry.update(extra)
        entry["wall_time"] = time.perf_counter() - t0
        record.entries.append(entry)
        if progress:
            progress(entry)

    params, f = train_stage(params, make_spec(), cfg.epochs_adam_pre, cfg.epochs_opt_pre,
                            cfg.lr_adam, cfg.lr_opt)
    log_entry(0, f, {})
    for it in range(1, cfg.iterations + 1):
        Q = ResidualTarget(MlpField(params), problem)
        new, info = propose_points(cfg.sampler, Q, cfg.n_adaptive, rng, return_info=True)
        keep = rng.permutation(interior.shape[0])[:cfg.n_interior - cfg.n_adaptive]
        interior = np.vstack([interior[keep], new])
        boundary = problem.sample_boundary(cfg.n_boundary, rng)
        params, f = train_stage(params, make_spec(), cfg.epochs_adam, cfg.epochs_opt,
                                cfg.lr_adam, cfg.lr_opt)
        extra = {}
        if "proposal" in info:
            extra["proposal"] = info["proposal"].to_dict()
            extra["components"] = info["proposal"].n_components
            extra["aais_ess"] = info["trace"].best.ess_final
        if info.get("degenerate"):
            extra["degenerate"] = True
        log_entry(it, f, extra)
    return params, record
