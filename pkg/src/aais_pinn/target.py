"""Unnormalized target densities over box domains.

Every target exposes ``log_density`` on a batch of points; ``eval`` is the
exponentiated convenience form. Points outside the box have density zero.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.special import logsumexp

from .mixture import MixtureModel

# log of the smallest positive double (subnormal edge)
LOG_UNDERFLOW = -745.0


@dataclass(frozen=True)
class BoxDomain:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float))
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float))
        if lo.shape != hi.shape or not np.all(lo < hi):
            raise ValueError("box bounds must satisfy lower < upper componentwise")
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @classmethod
    def cube(cls, d: int, lo: float = -1.0, hi: float = 1.0) -> "BoxDomain":
        return cls(np.full(d, lo), np.full(d, hi))

    @property
    def dim(self) -> int:
        return self.lower.shape[0]

    @property
    def volume(self) -> float:
        return float(np.prod(self.upper - self.lower))

    def contains(self, x, strict: bool = True):
        x = np.atleast_2d(x)
        if strict:
            return np.all((x > self.lower) & (x < self.upper), axis=1)
        return np.all((x >= self.lower) & (x <= self.upper), axis=1)

    def sample_uniform(self, n: int, rng: np.random.Generator):
        """Uniform draws in the open box (endpoints redrawn; measure zero)."""
        x = self.lower + (self.upper - self.lower) * rng.random((n, self.dim))
        bad = ~self.contains(x)
        while np.any(bad):
            k = int(bad.sum())
            x[bad] = self.lower + (self.upper - self.lower) * rng.random((k, self.dim))
            bad = ~self.contains(x)
        return x


class TargetDensity:
    """Base class: subclasses implement ``_log_density`` for in-domain points."""

    domain: BoxDomain

    @property
    def dim(self) -> int:
        return self.domain.dim

    def _log_density(self, x):
        raise NotImplementedError

    def log_density(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        if x.shape[1] != self.dim:
            raise ValueError("point dimension does not match target domain")
        out = np.full(x.shape[0], -np.inf)
        inside = self.domain.contains(x, strict=False)
        if np.any(inside):
            out[inside] = self._log_density(x[inside])
        return out

    def eval(self, x):
        x = np.asarray(x, dtype=float)
        vals = np.exp(self.log_density(x))
        return float(vals[0]) if x.ndim == 1 else vals

    __call__ = eval


class PeaksTarget(TargetDensity):
    """Sum of isotropic bumps ``sum_i exp(-K |x - c_i|^2)``."""

    def __init__(self, centers, sharpness: float, domain: BoxDomain | None = None):
        self.centers = np.atleast_2d(np.asarray(centers, dtype=float))
        self.sharpness = float(sharpness)
        self.domain = domain or BoxDomain.cube(self.centers.shape[1])

    def _log_density(self, x):
        sq = np.sum((x[:, None, :] - self.centers[None]) ** 2, axis=2)
        return logsumexp(-self.sharpness * sq, axis=1)


class MixtureTarget(TargetDensity):
    """A mixture density (optionally scaled) used as a target."""

    def __init__(self, model: MixtureModel, domain: BoxDomain, scale: float = 1.0):
        self.model = model
        self.domain = domain
        self.log_scale = float(np.log(scale))

    def _log_density(self, x):
        return self.model.log_pdf(x) + self.log_scale


class FunctionTarget(TargetDensity):
    """Wraps a vectorized nonnegative function of ``(n, d)`` points."""

    def __init__(self, fn, domain: BoxDomain):
        self.fn = fn
        self.domain = domain

    def _log_density(self, x):
        with np.errstate(divide="ignore"):
            return np.log(np.asarray(self.fn(x), dtype=float))


class AnnealedTarget(TargetDensity):
    """``q(x)^(1-lam) * Q(x)^lam`` evaluated in log space.

    Where ``log q`` falls below the double-precision underflow edge it is
    clamped to ``LOG_UNDERFLOW``; the clamp touches only the proposal factor.
    """

    def __init__(self, proposal: MixtureModel, base: TargetDensity, lam: float,
                 log_floor: float = LOG_UNDERFLOW):
        if not 0.0 <= lam <= 1.0:
            raise ValueError("annealing exponent must lie in [0, 1]")
        self.proposal = proposal
        self.base = base
        self.lam = float(lam)
        self.log_floor = log_floor
        self.domain = base.domain

    def combine(self, log_q, log_base):
        """Annealed log density from precomputed proposal/base log values."""
        lam = self.lam
        if lam == 1.0:
            return np.array(log_base, dtype=float)
        log_q = np.maximum(np.asarray(log_q, dtype=float), self.log_floor)
        if lam == 0.0:
            return log_q
        with np.errstate(invalid="ignore"):
            return (1.0 - lam) * log_q + lam * np.asarray(log_base)

    def _log_density(self, x):
        return self.combine(self.proposal.log_pdf(x), self.base.log_density(x))


def eval_annealed(t: AnnealedTarget, x):
    return t.eval(x)


class ResidualTarget(TargetDensity):
    """Squared interior PDE residual ``|N(x; u)|^2`` of a field."""

    def __init__(self, field, problem):
        if field.dim != problem.dim:
            raise ValueError("field and problem dimensions differ")
        self.field = field
        self.problem = problem
        self.domain = problem.domain

    def residual(self, x):
        return self.problem.interior_operator(self.field, x)

    def _log_density(self, x):
        r = self.residual(x)
        with np.errstate(divide="ignore"):
            return 2.0 * np.log(np.abs(r))


def residual_target(field, problem) -> ResidualTarget:
    return ResidualTarget(field, problem)
