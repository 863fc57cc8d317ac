"""Importance weights, effective sample size and weighted EM updates."""

from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import logsumexp

from .mixture import MixtureModel

log = logging.getLogger(__name__)


class DegenerateWeightsError(ValueError):
    """All importance weights in a batch are zero."""


@dataclass
class WeightedSamples:
    """A batch of points with raw (log) and normalized importance weights.

    ``degenerate`` is set when every raw weight is zero; the normalized
    weights then fall back to ``1/N``.
    """

    points: np.ndarray
    log_raw: np.ndarray
    weights: np.ndarray
    degenerate: bool = False

    @property
    def raw(self):
        return np.exp(self.log_raw)

    def __len__(self):
        return self.points.shape[0]

    @property
    def ess(self) -> float:
        return ess_from_log(self.log_raw)


def weights_from_logs(points, log_target, log_proposal) -> WeightedSamples:
    """Build a weighted batch from precomputed log target / proposal values."""
    points = np.atleast_2d(points)
    log_target = np.asarray(log_target, dtype=float)
    log_proposal = np.asarray(log_proposal, dtype=float)
    if points.shape[0] == 0:
        raise ValueError("importance weights need at least one point")
    with np.errstate(invalid="ignore"):
        log_raw = log_target - log_proposal
    # q underflowed to zero but Q did not: weight is huge but must stay finite
    log_raw = np.where(np.isnan(log_raw), -np.inf, log_raw)
    log_raw = np.minimum(log_raw, np.finfo(float).max)
    if np.all(np.isneginf(log_raw)):
        n = points.shape[0]
        return WeightedSamples(points, log_raw, np.full(n, 1.0 / n), degenerate=True)
    weights = np.exp(log_raw - logsumexp(log_raw))
    return WeightedSamples(points, log_raw, weights)


def importance_weights(target, proposal: MixtureModel, points) -> WeightedSamples:
    points = np.atleast_2d(np.asarray(points, dtype=float))
    return weights_from_logs(points, target.log_density(points), proposal.log_pdf(points))


def ess(raw_weights) -> float:
    """Normalized effective sample size ``(sum w)^2 / (N sum w^2)``.

    Equals 1 iff all raw weights are equal and ``1/N`` for a single nonzero
    weight. Invariant under positive rescaling.
    """
    w = np.asarray(raw_weights, dtype=float).ravel()
    if w.size == 0:
        raise ValueError("ESS of an empty batch")
    if np.any(w < 0):
        raise ValueError("raw importance weights must be nonnegative")
    top = w.max()
    if top <= 0:
        raise DegenerateWeightsError("degenerate weight batch")
    w = w / top
    return float(w.sum() ** 2 / (w.size * np.dot(w, w)))


def ess_from_log(log_raw) -> float:
    """ESS from log raw weights; avoids overflow for extreme ratios."""
    lw = np.asarray(log_raw, dtype=float).ravel()
    if lw.size == 0:
        raise ValueError("ESS of an empty batch")
    if np.all(np.isneginf(lw)):
        raise DegenerateWeightsError("degenerate weight batch")
    val = np.exp(2.0 * logsumexp(lw) - logsumexp(2.0 * lw) - np.log(lw.size))
    return float(min(val, 1.0))


def responsibilities(model: MixtureModel, points):
    """``(N, M)`` posterior component probabilities, rows summing to one."""
    wl = model.weighted_log_pdfs(points)
    return np.exp(wl - logsumexp(wl, axis=1, keepdims=True))


def weighted_log_likelihood(model: MixtureModel, samples: WeightedSamples) -> float:
    return float(np.dot(samples.weights, model.log_pdf(samples.points)))


def student_t_delta(x, mean, cov, dof: float):
    """``(v + d) / (v + (x - mu)^T cov^{-1} (x - mu))`` for one or many points."""
    x = np.asarray(x, dtype=float)
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    d = mean.shape[0]
    chol = np.linalg.cholesky(np.atleast_2d(cov))
    diff = x.reshape(-1, d) - mean
    z = solve_triangular(chol, diff.T, lower=True, check_finite=False)
    out = (dof + d) / (dof + np.sum(z * z, axis=0))
    return float(out[0]) if x.ndim == 1 else out


def _m_step(model, points, w, rho, delta=None):
    X = points
    resp = w[:, None] * rho                      # (N, M)
    alpha = resp.sum(axis=0)
    alpha = alpha / alpha.sum()
    M, d = model.means.shape
    means = model.means.copy()
    covs = model.covs.copy()
    for m in range(M):
        if alpha[m] <= 0.0:
            continue
        r = resp[:, m]
        u = r if delta is None else r * delta[:, m]
        mu = u @ X / u.sum()
        diff = X - mu
        covs[m] = (u[:, None] * diff).T @ diff / alpha[m]
        means[m] = mu
    return MixtureModel(alpha, means, covs, model.kind)


def em_step_gaussian(model: MixtureModel, samples: WeightedSamples) -> MixtureModel:
    """One weighted EM update of a Gaussian mixture.

    Components whose new weight is exactly zero keep their parameters and
    carry weight 0 until a delete pass removes them.
    """
    if model.kind.is_t:
        raise ValueError("em_step_gaussian needs a Gaussian mixture")
    rho = responsibilities(model, samples.points)
    return _m_step(model, samples.points, samples.weights, rho)


def em_step_student_t(model: MixtureModel, samples: WeightedSamples) -> MixtureModel:
    """One weighted EM update of a Student-t mixture with fixed dof.

    Location uses ``delta``-reweighted means; the scale update divides the
    ``delta``-weighted scatter by the new mixture weight.
    """
    if not model.kind.is_t:
        raise ValueError("em_step_student_t needs a Student-t mixture")
    X = samples.points
    rho = responsibilities(model, X)
    delta = np.empty_like(rho)
    for m in range(model.n_components):
        delta[:, m] = student_t_delta(X, model.means[m], model.covs[m], model.kind.dof)
    return _m_step(model, X, samples.weights, rho, delta)


def em_step(model: MixtureModel, samples: WeightedSamples) -> MixtureModel:
    if model.kind.is_t:
        return em_step_student_t(model, samples)
    return em_step_gaussian(model, samples)
