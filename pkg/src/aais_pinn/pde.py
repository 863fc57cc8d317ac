"""Multi-peak Poisson problems on ``(-1, 1)^d`` with closed-form solutions."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .target import BoxDomain


class DegenerateReferenceError(ValueError):
    pass


@dataclass(frozen=True)
class PoissonProblem:
    """``-Lap u = f`` in the box, ``u = g`` on its boundary.

    ``form="product"`` uses ``u* = sum_i exp(-K |x - c_i|^2)``;
    ``form="literal_sum"`` uses ``sum_i sum_j exp(-K (x_j - c_ij)^2)``.
    """

    centers: np.ndarray
    sharpness: float
    form: str = "product"
    name: str = "poisson"

    def __post_init__(self):
        c = np.atleast_2d(np.asarray(self.centers, dtype=float))
        object.__setattr__(self, "centers", c)
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")
        if self.form not in ("product", "literal_sum"):
            raise ValueError(f"unknown solution form {self.form!r}")
        if not np.all(self.domain.contains(c, strict=True)):
            raise ValueError("peak centers must lie inside the domain")

    @property
    def dim(self) -> int:
        return self.centers.shape[1]

    @property
    def domain(self) -> BoxDomain:
        return BoxDomain.cube(self.dim)

    def _diffs(self, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return x[:, None, :] - self.centers[None]          # (n, c, d)

    def exact_solution(self, x):
        K = self.sharpness
        diff = self._diffs(x)
        if self.form == "product":
            out = np.exp(-K * np.sum(diff ** 2, axis=2)).sum(axis=1)
        else:
            out = np.exp(-K * diff ** 2).sum(axis=(1, 2))
        return out[0] if np.ndim(x) == 1 else out

    def exact_gradient(self, x):
        K = self.sharpness
        diff = self._diffs(x)
        if self.form == "product":
            bump = np.exp(-K * np.sum(diff ** 2, axis=2))
            out = -2.0 * K * np.einsum("nc,ncd->nd", bump, diff)
        else:
            out = (-2.0 * K * diff * np.exp(-K * diff ** 2)).sum(axis=1)
        return out[0] if np.ndim(x) == 1 else out

    def source_term(self, x):
        """``f = -Lap u*``; per bump ``exp(-K r^2) (2Kd - 4K^2 r^2)``."""
        K = self.sharpness
        diff = self._diffs(x)
        if self.form == "product":
            r2 = np.sum(diff ** 2, axis=2)
            out = (np.exp(-K * r2) * (2.0 * K * self.dim - 4.0 * K * K * r2)).sum(axis=1)
        else:
            t2 = diff ** 2
            out = (np.exp(-K * t2) * (2.0 * K - 4.0 * K * K * t2)).sum(axis=(1, 2))
        return out[0] if np.ndim(x) == 1 else out

    def exact_laplacian(self, x):
        """Sum of the diagonal second derivatives of ``u*``, coordinate by coordinate."""
        K = self.sharpness
        diff = self._diffs(x)
        if self.form == "product":
            bump = np.exp(-K * np.sum(diff ** 2, axis=2))[:, :, None]
        else:
            bump = np.exp(-K * diff ** 2)
        out = (bump * (4.0 * K * K * diff ** 2 - 2.0 * K)).sum(axis=(1, 2))
        return out[0] if np.ndim(x) == 1 else out

    def on_boundary(self, x, tol: float = 1e-12):
        x = np.atleast_2d(x)
        inside = np.all(np.abs(x) <= 1.0 + tol, axis=1)
        touching = np.any(np.abs(np.abs(x) - 1.0) <= tol, axis=1)
        return inside & touching

    def boundary_term(self, x):
        if not np.all(self.on_boundary(x)):
            raise ValueError("boundary_term evaluated off the boundary")
        return self.exact_solution(x)

    def interior_operator(self, field, x):
        """Residual ``-Lap u - f``; zero for the exact solution."""
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return -field.laplacian(x) - self.source_term(x)

    def boundary_operator(self, field, x):
        x = np.atleast_2d(np.asarray(x, dtype=float))
        return field.value(x) - self.exact_solution(x)

    def sample_interior(self, n: int, rng: np.random.Generator):
        return self.domain.sample_uniform(n, rng)

    def sample_boundary(self, n: int, rng: np.random.Generator):
        """Face chosen uniformly among the ``2d`` faces, then uniform on it."""
        d = self.dim
        faces = rng.integers(0, 2 * d, size=n)
        x = rng.uniform(-1.0, 1.0, size=(n, d))
        axis = faces // 2
        x[np.arange(n), axis] = np.where(faces % 2 == 0, -1.0, 1.0)
        # other coordinates must stay off the faces
        hit = (np.abs(x) == 1.0).sum(axis=1) > 1
        while np.any(hit):
            idx = np.flatnonzero(hit)
            redraw = rng.uniform(-1.0, 1.0, size=(idx.size, d))
            redraw[np.arange(idx.size), axis[idx]] = x[idx, axis[idx]]
            x[idx] = redraw
            hit = (np.abs(x) == 1.0).sum(axis=1) > 1
        return x

    def bump_width(self) -> float:
        return 1.0 / np.sqrt(2.0 * self.sharpness)

    def build_test_set(self, n_uniform: int, n_gauss_per_peak: int,
                       rng: np.random.Generator, sigma_test: float | None = None):
        """Uniform interior points plus per-center Gaussian clouds.

        Gaussian draws use ``N(c_i, sigma_test^2 I)`` and are rejected
        outside the box. Returns ``(points, exact_values)``.
        """
        s = self.bump_width() if sigma_test is None else sigma_test
        parts = [self.sample_interior(n_uniform, rng)]
        for c in self.centers:
            got = np.empty((0, self.dim))
            while got.shape[0] < n_gauss_per_peak:
                need = n_gauss_per_peak - got.shape[0]
                draw = c + s * rng.standard_normal((need, self.dim))
                got = np.vstack([got, draw[self.domain.contains(draw)]])
            parts.append(got)
        pts = np.vstack(parts)
        return pts, self.exact_solution(pts)


class ExactField:
    """The closed-form solution exposed through the field interface."""

    def __init__(self, problem: PoissonProblem):
        self.problem = problem

    @property
    def dim(self) -> int:
        return self.problem.dim

    def value(self, x):
        return np.atleast_1d(self.problem.exact_solution(np.atleast_2d(x)))

    def gradient(self, x):
        return np.atleast_2d(self.problem.exact_gradient(np.atleast_2d(x)))

    def laplacian(self, x):
        return np.atleast_1d(self.problem.exact_laplacian(np.atleast_2d(x)))

    def derivatives(self, x):
        return self.value(x), self.gradient(x), self.laplacian(x)


class ZeroField:
    def __init__(self, dim: int):
        self.dim = dim

    def value(self, x):
        return np.zeros(np.atleast_2d(x).shape[0])

    def gradient(self, x):
        return np.zeros_like(np.atleast_2d(x), dtype=float)

    def laplacian(self, x):
        return self.value(x)

    def derivatives(self, x):
        return self.value(x), self.gradient(x), self.laplacian(x)


@dataclass(frozen=True)
class Metrics:
    e_r: float
    e_inf: float


def compute_metrics(field, points, exact_values) -> Metrics:
    """Relative L2 and max-abs error of ``field`` on a test set."""
    exact = np.asarray(exact_values, dtype=float)
    norm = np.sqrt(np.sum(exact ** 2))
    if norm == 0:
        raise DegenerateReferenceError("degenerate reference: exact values all zero")
    err = field.value(points) - exact
    return Metrics(float(np.sqrt(np.sum(err ** 2)) / norm), float(np.max(np.abs(err))))


def nine_peak_centers():
    # 3x3 grid at {-0.5, 0, 0.5}^2
    i = np.arange(9)
    return np.stack([-0.5 + (i % 3) / 2.0, -0.5 + (i // 3) / 2.0], axis=1)


def _two_peak_5d():
    return np.array([[0.5 * (-1) ** i, 0.5 * (-1) ** i, 0, 0, 0] for i in (1, 2)], float)


def _two_peak_9d():
    c = np.zeros((2, 9))
    c[:, 0] = [0.5, -0.5]
    c[:, 1] = 0.5
    return c


PRESETS = {
    "poisson2d-1p": lambda form="product": PoissonProblem([[0.5, 0.5]], 1000.0, form, "poisson2d-1p"),
    "poisson2d-9p": lambda form="product": PoissonProblem(nine_peak_centers(), 1000.0, form, "poisson2d-9p"),
    "poisson5d-2p": lambda form="product": PoissonProblem(_two_peak_5d(), 100.0, form, "poisson5d-2p"),
    "poisson9d-2p": lambda form="product": PoissonProblem(_two_peak_9d(), 100.0, form, "poisson9d-2p"),
    "poisson15d-1p": lambda form="product": PoissonProblem(np.zeros((1, 15)), 10.0, form, "poisson15d-1p"),
}


def get_problem(name: str, form: str = "product") -> PoissonProblem:
    try:
        return PRESETS[name](form)
    except KeyError:
        raise KeyError(f"unknown problem preset {name!r}; choose from {sorted(PRESETS)}") from None
