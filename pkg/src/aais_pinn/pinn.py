"""Dense tanh networks with exact input Laplacians and loss gradients.

Input derivatives use second-order Taylor mode: for every input coordinate
``j`` a stream ``(dz/dx_j, d2z/dx_j^2)`` rides along the value through each
layer. Parameter gradients come from a reverse sweep over that recorded
forward computation, so the Laplacian term of the loss is differentiated
exactly.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

CHUNK = 4096


@dataclass
class MlpParams:
    layer_sizes: list
    weights: list          # W_l with shape (fan_in, fan_out)
    biases: list

    def __post_init__(self):
        sizes = [int(s) for s in self.layer_sizes]
        if len(sizes) < 2 or sizes[-1] != 1 or min(sizes) < 1:
            raise ValueError("layer sizes must be [d, h_1, ..., h_L, 1]")
        if len(self.weights) != len(sizes) - 1 or len(self.biases) != len(sizes) - 1:
            raise ValueError("one weight matrix and bias vector per layer")
        for W, b, m, k in zip(self.weights, self.biases, sizes[:-1], sizes[1:]):
            if W.shape != (m, k) or b.shape != (k,):
                raise ValueError("parameter shapes inconsistent with layer sizes")
        self.layer_sizes = sizes

    @property
    def dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def size(self) -> int:
        return sum(W.size + b.size for W, b in zip(self.weights, self.biases))

    def flatten(self) -> np.ndarray:
        return np.concatenate([p.ravel() for W, b in zip(self.weights, self.biases)
                               for p in (W, b)])

    @classmethod
    def unflatten(cls, layer_sizes, theta) -> "MlpParams":
        theta = np.asarray(theta, dtype=np.float64)
        weights, biases, pos = [], [], 0
        for m, k in zip(layer_sizes[:-1], layer_sizes[1:]):
            weights.append(theta[pos:pos + m * k].reshape(m, k).copy())
            pos += m * k
            biases.append(theta[pos:pos + k].copy())
            pos += k
        if pos != theta.size:
            raise ValueError("parameter vector length does not match layer sizes")
        return cls(list(layer_sizes), weights, biases)

    @classmethod
    def zeros(cls, layer_sizes) -> "MlpParams":
        n = sum(m * k + k for m, k in zip(layer_sizes[:-1], layer_sizes[1:]))
        return cls.unflatten(layer_sizes, np.zeros(n))

    def save(self, path) -> None:
        """Write ``<path>.bin`` (float64 little-endian) and ``<path>.json``."""
        base = Path(path).with_suffix("")
        theta = self.flatten().astype("<f8")
        base.with_suffix(".bin").write_bytes(theta.tobytes())
        header = {"layer_sizes": self.layer_sizes, "dtype": "<f8", "count": int(theta.size)}
        base.with_suffix(".json").write_text(json.dumps(header, indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "MlpParams":
        base = Path(path).with_suffix("")
        header = json.loads(base.with_suffix(".json").read_text())
        theta = np.frombuffer(base.with_suffix(".bin").read_bytes(), dtype="<f8")
        if theta.size != header["count"]:
            raise ValueError("checkpoint length does not match its header")
        return cls.unflatten(header["layer_sizes"], theta.astype(np.float64))


def init_params(layer_sizes, rng: np.random.Generator) -> MlpParams:
    """Glorot-uniform weights, zero biases."""
    weights, biases = [], []
    for m, k in zip(layer_sizes[:-1], layer_sizes[1:]):
        limit = np.sqrt(6.0 / (m + k))
        weights.append(rng.uniform(-limit, limit, size=(m, k)))
        biases.append(np.zeros(k))
    return MlpParams(list(layer_sizes), weights, biases)


def forward(params: MlpParams, x):
    x = np.asarray(x, dtype=float)
    z = np.atleast_2d(x)
    if z.shape[1] != params.dim:
        raise ValueError("input dimension does not match the network")
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        z = z @ W + b
        if l < last:
            z = np.tanh(z)
    out = z[:, 0]
    return float(out[0]) if x.ndim == 1 else out


def _taylor_forward(params: MlpParams, X, streams: bool):
    """Forward pass carrying per-coordinate first/second derivative streams.

    Activations are stacked with shape ``(1 + 2k, n, width)``: the value,
    ``k`` first-derivative streams, then ``k`` second-derivative streams
    (``k = d`` when ``streams`` is set, else 0). Returns the output-layer
    stack and a tape of ``(layer_input, h, s, preactivation)``.
    """
    n, d = X.shape
    k = d if streams else 0
    T = np.zeros((1 + 2 * k, n, d))
    T[0] = X
    if k:
        T[1 + np.arange(d), :, np.arange(d)] = 1.0
    tape = []
    last = len(params.weights) - 1
    for l, (W, b) in enumerate(zip(params.weights, params.biases)):
        A = (T.reshape(-1, W.shape[0]) @ W).reshape(1 + 2 * k, n, W.shape[1])
        A[0] += b
        if l == last:
            tape.append((T, None, None, None))
            return A, tape
        h = np.tanh(A[0])
        s = 1.0 - h * h
        tape.append((T, h, s, A))
        T = np.empty_like(A)
        T[0] = h
        if k:
            da = A[1:1 + k]
            np.multiply(s, da, out=T[1:1 + k])
            np.multiply(s, A[1 + k:], out=T[1 + k:])
            T[1 + k:] -= (2.0 * h * s) * (da * da)


def _reverse(params: MlpParams, tape, B):
    """Parameter gradients from the output-stack adjoint ``B``."""
    grads_W = [None] * len(params.weights)
    grads_b = [None] * len(params.weights)
    k = (B.shape[0] - 1) // 2
    for l in range(len(params.weights) - 1, -1, -1):
        T = tape[l][0]
        W = params.weights[l]
        m = W.shape[1]
        grads_W[l] = T.reshape(-1, W.shape[0]).T @ B.reshape(-1, m)
        grads_b[l] = B[0].sum(axis=0)
        if l == 0:
            break
        G = (B.reshape(-1, m) @ W.T).reshape(1 + 2 * k, -1, W.shape[0])
        _, h, s, A = tape[l - 1]
        B = np.empty_like(G)
        if k:
            dH, d2H = G[1:1 + k], G[1 + k:]
            da, d2a = A[1:1 + k], A[1 + k:]
            da2_d2H = da * da * d2H
            s_bar = np.sum(da * dH + d2a * d2H, axis=0) - 2.0 * h * np.sum(da2_d2H, axis=0)
            h_bar = G[0] - 2.0 * s * np.sum(da2_d2H, axis=0) - 2.0 * h * s_bar
            np.multiply(s, dH, out=B[1:1 + k])
            B[1:1 + k] -= (4.0 * h * s) * (da * d2H)
            np.multiply(s, d2H, out=B[1 + k:])
        else:
            h_bar = G[0]
        np.multiply(s, h_bar, out=B[0])
    return grads_W, grads_b


def input_derivatives(params: MlpParams, x):
    """``(value, gradient, laplacian)`` at a point or a batch of points."""
    x = np.asarray(x, dtype=float)
    X = np.atleast_2d(x)
    if X.shape[1] != params.dim:
        raise ValueError("input dimension does not match the network")
    vals, grads, laps = [], [], []
    for start in range(0, X.shape[0], CHUNK):
        out, _ = _taylor_forward(params, X[start:start + CHUNK], True)
        d = params.dim
        vals.append(out[0, :, 0])
        grads.append(out[1:1 + d, :, 0].T)
        laps.append(out[1 + d:, :, 0].sum(axis=0))
    if not vals:
        return np.zeros(0), np.zeros((0, params.dim)), np.zeros(0)
    u, g, lap = np.concatenate(vals), np.vstack(grads), np.concatenate(laps)
    if x.ndim == 1:
        return float(u[0]), g[0], float(lap[0])
    return u, g, lap


class MlpField:
    """Field interface over a parameter set."""

    def __init__(self, params: MlpParams):
        self.params = params

    @property
    def dim(self) -> int:
        return self.params.dim

    def value(self, x):
        return np.atleast_1d(forward(self.params, np.atleast_2d(x)))

    def gradient(self, x):
        return input_derivatives(self.params, np.atleast_2d(x))[1]

    def laplacian(self, x):
        return input_derivatives(self.params, np.atleast_2d(x))[2]

    def derivatives(self, x):
        return input_derivatives(self.params, np.atleast_2d(x))


@dataclass
class LossSpec:
    """Collocation sets, their weights and the problem supplying the operators."""

    problem: object
    interior: np.ndarray
    boundary: np.ndarray = None
    interior_weights: np.ndarray = None
    boundary_weights: np.ndarray = None
    _f: np.ndarray = field(init=False, repr=False)
    _g: np.ndarray = field(init=False, repr=False)

    def __post_init__(self):
        d = self.problem.dim
        self.interior = np.atleast_2d(np.asarray(self.interior, dtype=float)).reshape(-1, d)
        if self.boundary is None:
            self.boundary = np.zeros((0, d))
        self.boundary = np.asarray(self.boundary, dtype=float).reshape(-1, d)
        if self.interior.shape[0] == 0:
            raise ValueError("loss needs at least one interior point")
        if self.interior_weights is None:
            self.interior_weights = np.ones(self.interior.shape[0])
        if self.boundary_weights is None:
            self.boundary_weights = np.ones(self.boundary.shape[0])
        if np.any(self.interior_weights <= 0) or np.any(self.boundary_weights <= 0):
            raise ValueError("collocation weights must be positive")
        self._f = np.atleast_1d(self.problem.source_term(self.interior))
        self._g = (np.atleast_1d(self.problem.exact_solution(self.boundary))
                   if self.boundary.shape[0] else np.zeros(0))


def _loss_parts(params: MlpParams, spec: LossSpec, want_grad: bool):
    n_in, n_b = spec.interior.shape[0], spec.boundary.shape[0]
    total = 0.0
    gW = [np.zeros_like(W) for W in params.weights]
    gb = [np.zeros_like(b) for b in params.biases]

    def accumulate(parts):
        for l, (w_, b_) in enumerate(zip(*parts)):
            gW[l] += w_
            gb[l] += b_

    for start in range(0, n_in, CHUNK):
        sl = slice(start, start + CHUNK)
        out, tape = _taylor_forward(params, spec.interior[sl], True)
        d = params.dim
        r = -out[1 + d:, :, 0].sum(axis=0) - spec._f[sl]
        w = spec.interior_weights[sl] / n_in
        total += float(np.dot(w, r * r))
        if want_grad:
            B = np.zeros_like(out)
            B[1 + d:, :, 0] = -2.0 * w * r
            accumulate(_reverse(params, tape, B))
    for start in range(0, n_b, CHUNK):
        sl = slice(start, start + CHUNK)
        out, tape = _taylor_forward(params, spec.boundary[sl], False)
        e = out[0, :, 0] - spec._g[sl]
        w = spec.boundary_weights[sl] / n_b
        total += float(np.dot(w, e * e))
        if want_grad:
            accumulate(_reverse(params, tape, (2.0 * w * e)[None, :, None]))
    if not want_grad:
        return total, None
    flat = np.concatenate([p.ravel() for W, b in zip(gW, gb) for p in (W, b)])
    return total, flat


def loss(params: MlpParams, spec: LossSpec) -> float:
    """Weighted mean-square interior residual plus boundary mismatch."""
    return _loss_parts(params, spec, False)[0]


def loss_gradient(params: MlpParams, spec: LossSpec) -> np.ndarray:
    return _loss_parts(params, spec, True)[1]


def loss_and_gradient(params: MlpParams, spec: LossSpec):
    return _loss_parts(params, spec, True)
