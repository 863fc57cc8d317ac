"""Annealed adaptive importance sampling with Gaussian / Student-t mixtures.

The sampler grows a mixture proposal one component at a time. Each rung of
the annealing ladder targets ``q^(1-lam) Q^lam``; new components are seeded
at the heaviest importance-weighted draw, refined by EM, then merged into or
blended with the current proposal.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field, replace

import numpy as np

from .em import em_step, weights_from_logs
from .mixture import ComponentKind, MixtureModel
from .target import AnnealedTarget, TargetDensity

log = logging.getLogger(__name__)


def default_sigma0(d: int, n: int) -> np.ndarray:
    """Initial candidate covariance: ``100 n^-2 I`` in 1D, ``0.1 I`` otherwise."""
    if d < 1:
        raise ValueError("dimension must be positive")
    value = 100.0 * n ** -2.0 if d < 2 else 0.1
    return value * np.eye(d)


@dataclass
class AaisConfig:
    n_search: int = 10000                    # N_S
    n_proposal: int | None = None            # N_A, default floor(0.1 N_S)
    n_candidate: int | None = None           # n, default floor(0.1 N_A)
    t_accept: float = 0.15                   # T_a
    t_merge: float = 0.85                    # T_m
    delete_fraction: float = 0.01            # T_d = delete_fraction / M
    update_weight: float = 0.5               # sigma
    cycle_limit: int = 10                    # C_u
    ladder: tuple = (0.7, 0.9, 1.0)
    ess_ladder: tuple = (0.9, 0.88, 0.85)
    iter_ladder: tuple = (100, 100, 100)
    sigma0: np.ndarray | None = None
    kind: ComponentKind = field(default_factory=lambda: ComponentKind.student_t(3.0))
    merge_rule: str = "moment"               # or "literal"

    def __post_init__(self):
        self.ladder = tuple(float(v) for v in self.ladder)
        self.ess_ladder = tuple(float(v) for v in self.ess_ladder)
        self.iter_ladder = tuple(int(v) for v in self.iter_ladder)
        if not len(self.ladder) == len(self.ess_ladder) == len(self.iter_ladder) >= 1:
            raise ValueError("annealing, ESS and iteration ladders must have equal length")
        if any(b < a for a, b in zip(self.ladder, self.ladder[1:])) or self.ladder[-1] != 1.0:
            raise ValueError("annealing ladder must be non-decreasing and end at 1.0")
        for name in ("t_accept", "t_merge", "update_weight"):
            v = getattr(self, name)
            if not 0.0 < v < 1.0:
                raise ValueError(f"{name} must lie in (0, 1)")
        if any(not 0.0 < v < 1.0 for v in self.ess_ladder):
            raise ValueError("ESS thresholds must lie in (0, 1)")
        if self.merge_rule not in ("moment", "literal"):
            raise ValueError(f"unknown merge rule {self.merge_rule!r}")
        if self.n_proposal is None:
            self.n_proposal = max(1, math.floor(0.1 * self.n_search))
        if self.n_candidate is None:
            self.n_candidate = max(2, math.floor(0.1 * self.n_proposal))
        if min(self.n_search, self.n_proposal, self.n_candidate) < 1:
            raise ValueError("search sizes must be positive")

    def covariance0(self, d: int) -> np.ndarray:
        if self.sigma0 is not None:
            return np.atleast_2d(np.asarray(self.sigma0, dtype=float))
        return default_sigma0(d, self.n_candidate)

    def with_kind(self, kind: ComponentKind) -> "AaisConfig":
        return replace(self, kind=kind)


@dataclass
class TraceRecord:
    rung: int
    iter: int
    ess: float             # against the rung's annealed target
    ess_final: float       # against the untempered target
    components: int
    lam: float

    def to_dict(self) -> dict:
        return {"rung": self.rung, "iter": self.iter, "lam": self.lam,
                "ess": self.ess, "ess_final": self.ess_final,
                "components": self.components}


@dataclass
class AaisTrace:
    records: list = field(default_factory=list)
    best_index: int = -1
    degenerate_candidates: int = 0

    def to_jsonl(self) -> str:
        return "".join(json.dumps(r.to_dict()) + "\n" for r in self.records)

    @property
    def best(self) -> TraceRecord:
        return self.records[self.best_index]


class FlatTargetError(RuntimeError):
    """The target vanished on every search point."""


def _safe_ess(batch) -> float:
    return 0.0 if batch.degenerate else batch.ess


def _weighted_batch(target: TargetDensity, proposal: MixtureModel, n: int, rng):
    x = proposal.sample(n, rng)
    return weights_from_logs(x, target.log_density(x), proposal.log_pdf(x))


def _refine(target, model, cfg, rng, cycles):
    """Up to ``cycles`` rounds of sample / ESS / one EM step, stopping once
    the pre-update ESS reaches ``t_accept``. Returns ``(model, passes)``."""
    passes = 0
    for _ in range(cycles):
        batch = _weighted_batch(target, model, cfg.n_candidate, rng)
        model = em_step(model, batch)
        passes += 1
        if _safe_ess(batch) >= cfg.t_accept:
            break
    return model, passes


def initial_proposal(Q: TargetDensity, cfg: AaisConfig, rng: np.random.Generator,
                     return_passes: bool = False):
    """Single-component starting proposal at the best uniform search point."""
    pts = Q.domain.sample_uniform(cfg.n_search, rng)
    logq = Q.log_density(pts)
    if np.all(np.isneginf(logq)):
        raise FlatTargetError("flat target on search set")
    start = pts[int(np.argmax(logq))]
    q0 = MixtureModel.single(start, cfg.covariance0(Q.dim), cfg.kind)
    q0, passes = _refine(Q, q0, cfg, rng, cfg.cycle_limit + 1)
    return (q0, passes) if return_passes else q0


def spawn_candidate(Qk: TargetDensity, q: MixtureModel, cfg: AaisConfig,
                    rng: np.random.Generator, batch=None, return_info: bool = False):
    """New one-component candidate seeded at the heaviest weighted draw.

    ``batch`` may carry an already-weighted sample of ``q`` against ``Qk``;
    otherwise ``n_proposal`` fresh points are drawn.
    """
    if batch is None:
        batch = _weighted_batch(Qk, q, cfg.n_proposal, rng)
    degenerate = batch.degenerate
    if degenerate:
        log.warning("degenerate weights while spawning; seeding at a uniform point")
        start = Qk.domain.sample_uniform(1, rng)[0]
    else:
        start = batch.points[int(np.argmax(batch.log_raw))]
    p = MixtureModel.single(start, cfg.covariance0(q.dim), q.kind)
    p, passes = _refine(Qk, p, cfg, rng, cfg.cycle_limit)
    if return_info:
        return p, {"seed_point": start, "degenerate": degenerate, "passes": passes}
    return p


def merge_components(mean_a, cov_a, mean_b, cov_b, rule: str = "moment"):
    """Merged (mean, cov) of two components.

    ``moment`` matches the first two moments of an equal-weight pair;
    ``literal`` sums the means and the covariances.
    """
    if rule == "literal":
        return mean_a + mean_b, cov_a + cov_b
    diff = mean_a - mean_b
    return 0.5 * (mean_a + mean_b), 0.5 * (cov_a + cov_b) + 0.25 * np.outer(diff, diff)


def merge_scores(q: MixtureModel, p_star: MixtureModel, n: int, rng):
    """``alpha_m * ESS(p_m; p_star)`` for each component of ``q``."""
    x = p_star.sample(n, rng)
    log_p = p_star.log_pdf(x)
    logs = q.component_log_pdfs(x)
    scores = np.empty(q.n_components)
    for m in range(q.n_components):
        batch = weights_from_logs(x, logs[:, m], log_p)
        scores[m] = q.weights[m] * _safe_ess(batch)
    return scores


def update_proposal(q: MixtureModel, p_star: MixtureModel, cfg: AaisConfig,
                    rng: np.random.Generator, return_branch: bool = False):
    """Merge ``p_star`` into its best-matching component or blend it in."""
    scores = merge_scores(q, p_star, cfg.n_candidate, rng)
    if np.any(scores > cfg.t_merge):
        m = int(np.argmax(scores))
        mean, cov = merge_components(q.means[m], q.covs[m], p_star.means[0],
                                     p_star.covs[0], cfg.merge_rule)
        means = q.means.copy()
        covs = q.covs.copy()
        means[m], covs[m] = mean, cov
        out = MixtureModel(q.weights, means, covs, q.kind)
        branch = "merge"
    else:
        s = cfg.update_weight
        weights = np.concatenate([s * q.weights, [1.0 - s]])
        means = np.concatenate([q.means, p_star.means])
        covs = np.concatenate([q.covs, p_star.covs])
        out = MixtureModel(weights, means, covs, q.kind, normalize=False)
        branch = "blend"
    return (out, branch) if return_branch else out


def delete_threshold(m_current: int, fraction: float = 0.01) -> float:
    return fraction / m_current


def delete_components(q: MixtureModel, m_current: int | None = None,
                      fraction: float = 0.01) -> MixtureModel:
    """Drop components with weight strictly below ``fraction / M``; renormalize.

    If nothing survives, the heaviest component is kept with weight 1.
    """
    m_current = q.n_components if m_current is None else m_current
    keep = q.weights >= delete_threshold(m_current, fraction)
    if keep.all():
        return q
    if not keep.any():
        keep = np.zeros(q.n_components, bool)
        keep[int(np.argmax(q.weights))] = True
    return MixtureModel(q.weights[keep], q.means[keep], q.covs[keep], q.kind)


def run_aais(Q: TargetDensity, cfg: AaisConfig, rng: np.random.Generator):
    """Full annealed loop. Returns ``(best_proposal, trace)``.

    The annealed target of each rung is frozen against the proposal held at
    rung entry. Every recorded iterate is also scored against the untempered
    target on the same draws, and the best of those is returned.
    """
    q = initial_proposal(Q, cfg, rng)
    trace = AaisTrace()
    models = []

    def evaluate(target: AnnealedTarget, model):
        x = model.sample(cfg.n_proposal, rng)
        log_base = Q.log_density(x)
        log_model = model.log_pdf(x)
        log_frozen = log_model if target.proposal is model else target.proposal.log_pdf(x)
        batch = weights_from_logs(x, target.combine(log_frozen, log_base), log_model)
        final = weights_from_logs(x, log_base, log_model)
        return batch, _safe_ess(final)

    def record(rung, it, lam, batch, ess_final, model):
        trace.records.append(TraceRecord(rung, it, _safe_ess(batch), ess_final,
                                         model.n_components, lam))
        models.append(model)

    for k, (lam, eta, c_k) in enumerate(zip(cfg.ladder, cfg.ess_ladder, cfg.iter_ladder)):
        Qk = AnnealedTarget(q, Q, lam)
        batch, ess_final = evaluate(Qk, q)
        record(k, 0, lam, batch, ess_final, q)
        for j in range(c_k):
            if _safe_ess(batch) >= eta:
                break
            p, info = spawn_candidate(Qk, q, cfg, rng, batch=batch, return_info=True)
            trace.degenerate_candidates += int(info["degenerate"])
            q_next = update_proposal(q, p, cfg, rng)
            for _ in range(2):
                q_next = em_step(q_next, _weighted_batch(Qk, q_next, cfg.n_proposal, rng))
            q = delete_components(q_next, fraction=cfg.delete_fraction)
            batch, ess_final = evaluate(Qk, q)
            record(k, j + 1, lam, batch, ess_final, q)
    finals = np.array([r.ess_final for r in trace.records])
    trace.best_index = int(np.argmax(finals))
    return models[trace.best_index], trace
