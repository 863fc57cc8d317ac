"""Collocation-point proposal strategies: uniform, RAD and AAIS."""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .aais import AaisConfig, run_aais
from .target import TargetDensity

log = logging.getLogger(__name__)


class ProposalMassError(RuntimeError):
    """Too many AAIS draws fell outside the domain."""


@dataclass(frozen=True)
class Uniform:
    name = "uniform"


@dataclass(frozen=True)
class Rad:
    n_search: int = 10000
    name = "rad"

    def __post_init__(self):
        if self.n_search < 1:
            raise ValueError("RAD search size must be positive")


@dataclass(frozen=True)
class Aais:
    cfg: AaisConfig = field(default_factory=AaisConfig)
    name = "aais"


def rad_probabilities(values):
    """Selection probabilities ``Q(x_i) / sum_j Q(x_j)``; ``None`` if all zero."""
    values = np.asarray(values, dtype=float)
    total = values.sum()
    if not total > 0:
        return None
    return values / total


def rad_select(values, n: int, rng: np.random.Generator):
    """Indices of ``n`` candidates drawn without replacement in proportion to
    ``values``. Zero-valued candidates are only used once the positive ones
    run out; an all-zero batch falls back to a uniform subset."""
    values = np.asarray(values, dtype=float)
    p = rad_probabilities(values)
    if p is None:
        log.warning("RAD: target vanished on every candidate; uniform fallback")
        return rng.choice(values.size, size=n, replace=False)
    positive = np.flatnonzero(p > 0)
    if positive.size >= n:
        return rng.choice(values.size, size=n, replace=False, p=p)
    rest = np.flatnonzero(p == 0)
    extra = rng.choice(rest, size=n - positive.size, replace=False)
    return np.concatenate([positive, extra])


def propose_points(spec, Q: TargetDensity, n: int, rng: np.random.Generator,
                   return_info: bool = False):
    """``n`` new collocation points strictly inside ``Q.domain``."""
    if n < 1:
        raise ValueError("need at least one point")
    if not isinstance(spec, (Uniform, Rad, Aais)):
        raise TypeError(f"unknown sampler spec {spec!r}")
    info = {"sampler": spec.name}
    if isinstance(spec, Uniform):
        pts = Q.domain.sample_uniform(n, rng)
    elif isinstance(spec, Rad):
        if spec.n_search < n:
            raise ValueError("RAD search size must be at least the number of points")
        cand = Q.domain.sample_uniform(spec.n_search, rng)
        vals = np.exp(Q.log_density(cand))
        info["degenerate"] = rad_probabilities(vals) is None
        pts = cand[rad_select(vals, n, rng)]
    elif isinstance(spec, Aais):
        model, trace = run_aais(Q, spec.cfg, rng)
        info.update(proposal=model, trace=trace)
        pts = np.empty((0, Q.dim))
        drawn = 0
        while pts.shape[0] < n:
            if drawn > 100 * n:
                raise ProposalMassError("proposal mass outside domain")
            batch = model.sample(n, rng)
            drawn += n
            pts = np.vstack([pts, batch[Q.domain.contains(batch)]])
        pts = pts[:n]
    return (pts, info) if return_info else pts
