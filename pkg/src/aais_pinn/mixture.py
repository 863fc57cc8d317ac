"""Finite Gaussian / Student-t mixtures: evaluation, sampling, serialization."""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np
from scipy.linalg import solve_triangular
from scipy.special import gammaln, logsumexp

JITTER_EPS = 1e-8
JITTER_RETRIES = 3


class FactorizationError(np.linalg.LinAlgError):
    """Raised when a covariance stays indefinite after jitter."""


@dataclass(frozen=True)
class ComponentKind:
    """Component family. ``dof`` is only meaningful for Student-t."""

    name: str = "gaussian"
    dof: float | None = None

    def __post_init__(self):
        if self.name not in ("gaussian", "student-t"):
            raise ValueError(f"unknown component kind {self.name!r}")
        if self.name == "student-t":
            if self.dof is None or not self.dof > 2:
                raise ValueError("Student-t components need dof > 2")

    @classmethod
    def gaussian(cls) -> "ComponentKind":
        return cls("gaussian")

    @classmethod
    def student_t(cls, dof: float = 3.0) -> "ComponentKind":
        return cls("student-t", float(dof))

    @property
    def is_t(self) -> bool:
        return self.name == "student-t"


GAUSSIAN = ComponentKind.gaussian()


def regularized_cholesky(cov):
    """Lower Cholesky factor of ``cov``, adding diagonal jitter on failure.

    Jitter is ``eps * trace(cov) / d`` with ``eps`` starting at 1e-8 and
    growing 100x per retry. A zero-trace matrix uses unit scale.
    Returns ``(cov_used, chol)``.
    """
    cov = np.array(cov, dtype=float)
    cov = 0.5 * (cov + cov.T)
    d = cov.shape[0]
    try:
        return cov, np.linalg.cholesky(cov)
    except np.linalg.LinAlgError:
        pass
    scale = np.trace(cov) / d
    if not np.isfinite(scale) or scale <= 0:
        scale = 1.0
    eps = JITTER_EPS
    for _ in range(JITTER_RETRIES):
        jittered = cov + eps * scale * np.eye(d)
        try:
            return jittered, np.linalg.cholesky(jittered)
        except np.linalg.LinAlgError:
            eps *= 100.0
    raise FactorizationError("covariance is not positive definite after jitter")


def _mahalanobis_sq(chol, mean, x):
    diff = np.atleast_2d(x) - mean
    z = solve_triangular(chol, diff.T, lower=True, check_finite=False)
    return np.sum(z * z, axis=0)


def _log_norm_const(kind: ComponentKind, chol, d: int) -> float:
    half_logdet = np.sum(np.log(np.diag(chol)))
    if kind.is_t:
        v = kind.dof
        return (gammaln(0.5 * (v + d)) - gammaln(0.5 * v)
                - 0.5 * d * np.log(v * np.pi) - half_logdet)
    return -0.5 * d * np.log(2.0 * np.pi) - half_logdet


def _log_kernel(kind: ComponentKind, maha, d: int):
    if kind.is_t:
        v = kind.dof
        return -0.5 * (v + d) * np.log1p(maha / v)
    return -0.5 * maha


def component_log_pdf(kind: ComponentKind, mean, cov, x):
    """Log density of one Gaussian or location-scale Student-t component.

    ``x`` may be a single point of shape ``(d,)`` (returns a float) or a
    batch of shape ``(n, d)``. For Student-t, ``cov`` is the scale matrix.
    """
    mean = np.atleast_1d(np.asarray(mean, dtype=float))
    cov = np.atleast_2d(np.asarray(cov, dtype=float))
    _, chol = regularized_cholesky(cov)
    x = np.asarray(x, dtype=float)
    single = x.ndim == 1
    d = mean.shape[0]
    maha = _mahalanobis_sq(chol, mean, x.reshape(-1, d))
    out = _log_norm_const(kind, chol, d) + _log_kernel(kind, maha, d)
    return float(out[0]) if single else out


class MixtureModel:
    """Weighted mixture of Gaussian or Student-t components.

    Instances are treated as immutable; every update returns a new model.
    Covariances are symmetrized and Cholesky-factored (with jitter) at
    construction.
    """

    def __init__(self, weights, means, covs, kind: ComponentKind = GAUSSIAN,
                 normalize: bool = True):
        weights = np.atleast_1d(np.asarray(weights, dtype=float)).copy()
        means = np.atleast_2d(np.asarray(means, dtype=float)).copy()
        covs = np.asarray(covs, dtype=float)
        if covs.ndim == 2:
            covs = covs[None]
        M, d = means.shape
        if weights.shape != (M,) or covs.shape != (M, d, d):
            raise ValueError("inconsistent mixture parameter shapes")
        if M < 1:
            raise ValueError("mixture needs at least one component")
        if np.any(weights < 0) or not np.all(np.isfinite(weights)):
            raise ValueError("mixture weights must be finite and nonnegative")
        total = weights.sum()
        if total <= 0:
            raise ValueError("mixture weights sum to zero")
        if normalize:
            weights = weights / total
        chols = np.empty_like(covs)
        fixed = np.empty_like(covs)
        for m in range(M):
            fixed[m], chols[m] = regularized_cholesky(covs[m])
        self.kind = kind
        self.weights = weights
        self.means = means
        self.covs = fixed
        self.chols = chols
        for arr in (self.weights, self.means, self.covs, self.chols):
            arr.setflags(write=False)
        self._log_norms = np.array(
            [_log_norm_const(kind, chols[m], d) for m in range(M)])

    @classmethod
    def single(cls, mean, cov, kind: ComponentKind = GAUSSIAN) -> "MixtureModel":
        mean = np.atleast_1d(np.asarray(mean, dtype=float))
        cov = np.atleast_2d(np.asarray(cov, dtype=float))
        return cls([1.0], mean[None], cov[None], kind)

    @property
    def dim(self) -> int:
        return self.means.shape[1]

    @property
    def n_components(self) -> int:
        return self.means.shape[0]

    def __len__(self):
        return self.n_components

    def __repr__(self):
        return (f"MixtureModel(kind={self.kind.name}, dim={self.dim}, "
                f"components={self.n_components})")

    def _check_points(self, x):
        x = np.asarray(x, dtype=float)
        single = x.ndim == 1
        x = np.atleast_2d(x)
        if x.shape[1] != self.dim:
            raise ValueError(
                f"point dimension {x.shape[1]} does not match mixture dimension {self.dim}")
        return x, single

    def component_log_pdfs(self, x):
        """``(n, M)`` matrix of per-component log densities (no weights)."""
        x, _ = self._check_points(x)
        out = np.empty((x.shape[0], self.n_components))
        for m in range(self.n_components):
            maha = _mahalanobis_sq(self.chols[m], self.means[m], x)
            out[:, m] = self._log_norms[m] + _log_kernel(self.kind, maha, self.dim)
        return out

    def weighted_log_pdfs(self, x):
        with np.errstate(divide="ignore"):
            return self.component_log_pdfs(x) + np.log(self.weights)

    def log_pdf(self, x):
        """Log mixture density, via a max-shifted log-sum-exp."""
        x, single = self._check_points(x)
        out = logsumexp(self.weighted_log_pdfs(x), axis=1)
        return float(out[0]) if single else out

    def pdf(self, x):
        return np.exp(self.log_pdf(x))

    def sample(self, n: int, rng: np.random.Generator, return_labels: bool = False):
        """Draw ``n`` points. Component first, then ``mean + L z`` (scaled by
        ``sqrt(v / chi2_v)`` for Student-t)."""
        if n < 0:
            raise ValueError("sample count must be nonnegative")
        labels = rng.choice(self.n_components, size=n, p=self.weights)
        z = rng.standard_normal((n, self.dim))
        x = np.einsum("nij,nj->ni", self.chols[labels], z)
        if self.kind.is_t:
            chi2 = rng.chisquare(self.kind.dof, size=n)
            x *= np.sqrt(self.kind.dof / chi2)[:, None]
        x += self.means[labels]
        return (x, labels) if return_labels else x

    def component(self, m: int) -> "MixtureModel":
        """Component ``m`` as a normalized single-component model."""
        return MixtureModel([1.0], self.means[m:m + 1], self.covs[m:m + 1], self.kind)

    def to_dict(self) -> dict:
        out = {"kind": self.kind.name}
        if self.kind.is_t:
            out["dof"] = self.kind.dof
        out["dim"] = self.dim
        out["components"] = [
            {"weight": float(self.weights[m]),
             "mean": [float(v) for v in self.means[m]],
             "cov": [float(v) for v in self.covs[m].ravel()]}
            for m in range(self.n_components)
        ]
        return out

    def to_json(self, **kwargs) -> str:
        return json.dumps(self.to_dict(), **kwargs)

    @classmethod
    def from_dict(cls, data: dict) -> "MixtureModel":
        d = int(data["dim"])
        kind = ComponentKind(data["kind"], data.get("dof"))
        comps = data["components"]
        weights = [c["weight"] for c in comps]
        means = np.array([c["mean"] for c in comps], dtype=float).reshape(-1, d)
        covs = np.array([c["cov"] for c in comps], dtype=float).reshape(-1, d, d)
        return cls(weights, means, covs, kind)

    @classmethod
    def from_json(cls, text: str) -> "MixtureModel":
        return cls.from_dict(json.loads(text))


def mixture_density(model: MixtureModel, x):
    return model.pdf(x)


def sample_mixture(model: MixtureModel, n: int, rng: np.random.Generator):
    return model.sample(n, rng)
