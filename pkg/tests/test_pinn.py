import json

import numpy as np
import pytest

from aais_pinn.pde import get_problem
from aais_pinn.pinn import (
    CHUNK,
    LossSpec,
    MlpField,
    MlpParams,
    forward,
    init_params,
    input_derivatives,
    loss,
    loss_and_gradient,
    loss_gradient,
)


def random_net(sizes, seed):
    # scaled-up weights and nonzero biases so every tanh regime is exercised
    rng = np.random.default_rng(seed)
    p = init_params(sizes, rng)
    for W in p.weights:
        W *= 1.5
    for b in p.biases:
        b += 0.3 * rng.normal(size=b.shape)
    return p


def fd_input(params, x, h=1e-3):
    d = x.shape[1]
    g = np.empty_like(x)
    lap = np.zeros(x.shape[0])
    f0 = forward(params, x)
    for j in range(d):
        e = np.zeros(d)
        e[j] = h
        fp, fm = forward(params, x + e), forward(params, x - e)
        fp2, fm2 = forward(params, x + 2 * e), forward(params, x - 2 * e)
        g[:, j] = (-fp2 + 8 * fp - 8 * fm + fm2) / (12 * h)
        lap += (-fp2 + 16 * fp - 30 * f0 + 16 * fm - fm2) / (12 * h * h)
    return g, lap


def fd_loss_gradient(params, spec, h=1e-5):
    theta = params.flatten()
    out = np.empty_like(theta)
    for i in range(theta.size):
        e = np.zeros_like(theta)
        e[i] = h
        lp = loss(MlpParams.unflatten(params.layer_sizes, theta + e), spec)
        lm = loss(MlpParams.unflatten(params.layer_sizes, theta - e), spec)
        out[i] = (lp - lm) / (2 * h)
    return out


def test_glorot_init():
    p = init_params([3, 50, 1], np.random.default_rng(0))
    limit = np.sqrt(6 / 53)
    assert np.all(np.abs(p.weights[0]) <= limit) and np.all(p.biases[0] == 0)
    assert p.size == 3 * 50 + 50 + 50 + 1


def test_zero_params_give_zero_field():
    p = MlpParams.zeros([2, 8, 8, 1])
    u, g, lap = input_derivatives(p, np.random.default_rng(0).uniform(-1, 1, (10, 2)))
    assert np.all(u == 0) and np.all(g == 0) and np.all(lap == 0)


def test_linear_network_has_zero_laplacian():
    rng = np.random.default_rng(1)
    W = rng.normal(size=(3, 1))
    p = MlpParams([3, 1], [W], [np.array([0.2])])
    x = rng.normal(size=(7, 3))
    u, g, lap = input_derivatives(p, x)
    np.testing.assert_allclose(u, x @ W[:, 0] + 0.2)
    np.testing.assert_allclose(g, np.tile(W[:, 0], (7, 1)))
    np.testing.assert_array_equal(lap, 0.0)


def test_one_hidden_unit_closed_form():
    # u = tanh(a.x); lap u = -2 |a|^2 tanh sech^2
    a = np.array([0.7, -1.3])
    p = MlpParams([2, 1, 1], [a[:, None], np.ones((1, 1))], [np.zeros(1), np.zeros(1)])
    x = np.array([[0.3, 0.4], [-0.5, 0.1]])
    t = np.tanh(x @ a)
    u, g, lap = input_derivatives(p, x)
    np.testing.assert_allclose(u, t, rtol=1e-15)
    np.testing.assert_allclose(g, (1 - t * t)[:, None] * a, rtol=1e-14)
    np.testing.assert_allclose(lap, -2 * (a @ a) * t * (1 - t * t), rtol=1e-14)


@pytest.mark.parametrize("sizes", [[2, 8, 8, 1], [5, 16, 1]])
def test_input_derivatives_match_fd(sizes):
    for seed in range(5):
        p = random_net(sizes, seed)
        x = np.random.default_rng(100 + seed).uniform(-1, 1, (10, sizes[0]))
        _, g, lap = input_derivatives(p, x)
        fd_g, fd_lap = fd_input(p, x)
        np.testing.assert_allclose(g, fd_g, rtol=1e-5)
        np.testing.assert_allclose(lap, fd_lap, rtol=1e-5)


def test_scalar_and_batch_agree():
    p = random_net([2, 8, 1], 0)
    x = np.array([0.1, -0.3])
    u, g, lap = input_derivatives(p, x)
    ub, gb, lapb = input_derivatives(p, x[None])
    assert u == ub[0] and lap == lapb[0]
    np.testing.assert_array_equal(g, gb[0])
    assert forward(p, x) == pytest.approx(u, rel=1e-15)


def test_chunking_consistent():
    p = random_net([2, 8, 1], 2)
    x = np.random.default_rng(0).uniform(-1, 1, (CHUNK + 17, 2))
    u, _, lap = input_derivatives(p, x)
    u2, _, lap2 = input_derivatives(p, x[-17:])
    np.testing.assert_allclose(u[-17:], u2, rtol=1e-14)
    np.testing.assert_allclose(lap[-17:], lap2, rtol=1e-12)


def test_dimension_checked():
    p = random_net([2, 4, 1], 0)
    with pytest.raises(ValueError):
        forward(p, np.zeros((3, 3)))
    with pytest.raises(ValueError):
        input_derivatives(p, np.zeros((3, 3)))


@pytest.mark.parametrize("sizes,problem", [([2, 8, 8, 1], "poisson2d-1p"),
                                           ([5, 16, 1], "poisson5d-2p")])
def test_loss_gradient_matches_fd(sizes, problem):
    prob = get_problem(problem)
    for seed in range(3):
        rng = np.random.default_rng(seed)
        p = random_net(sizes, seed)
        spec = LossSpec(prob, prob.sample_interior(12, rng), prob.sample_boundary(6, rng),
                        rng.uniform(0.5, 2, 12), rng.uniform(0.5, 2, 6))
        g = loss_gradient(p, spec)
        fd = fd_loss_gradient(p, spec)
        big = np.abs(g) > 1e-8
        np.testing.assert_allclose(g[big], fd[big], rtol=1e-4)


def test_loss_value_by_hand():
    prob = get_problem("poisson2d-1p")
    p = random_net([2, 6, 1], 3)
    rng = np.random.default_rng(4)
    xi, xb = prob.sample_interior(9, rng), prob.sample_boundary(5, rng)
    wi, wb = rng.uniform(0.5, 2, 9), rng.uniform(0.5, 2, 5)
    field = MlpField(p)
    r = prob.interior_operator(field, xi)
    e = prob.boundary_operator(field, xb)
    expected = np.mean(wi * r * r) + np.mean(wb * e * e)
    spec = LossSpec(prob, xi, xb, wi, wb)
    assert loss(p, spec) == pytest.approx(expected, rel=1e-12)
    value, grad = loss_and_gradient(p, spec)
    assert value == pytest.approx(expected, rel=1e-12) and grad.shape == (p.size,)


def test_interior_only_loss():
    prob = get_problem("poisson2d-1p")
    p = random_net([2, 6, 1], 5)
    xi = prob.sample_interior(9, np.random.default_rng(0))
    r = prob.interior_operator(MlpField(p), xi)
    assert loss(p, LossSpec(prob, xi)) == pytest.approx(np.mean(r * r), rel=1e-12)


def test_loss_spec_validation():
    prob = get_problem("poisson2d-1p")
    with pytest.raises(ValueError):
        LossSpec(prob, np.zeros((0, 2)))
    with pytest.raises(ValueError):
        LossSpec(prob, np.zeros((2, 2)), interior_weights=np.array([1.0, 0.0]))


def test_flatten_round_trip():
    p = random_net([3, 5, 4, 1], 0)
    q = MlpParams.unflatten(p.layer_sizes, p.flatten())
    for a, b in zip(p.weights + p.biases, q.weights + q.biases):
        np.testing.assert_array_equal(a, b)
    with pytest.raises(ValueError):
        MlpParams.unflatten([3, 5, 1], np.zeros(3))


def test_checkpoint_round_trip(tmp_path):
    p = random_net([2, 7, 1], 1)
    p.save(tmp_path / "ckpt")
    header = json.loads((tmp_path / "ckpt.json").read_text())
    assert header["layer_sizes"] == [2, 7, 1] and header["count"] == p.size
    raw = (tmp_path / "ckpt.bin").read_bytes()
    assert len(raw) == 8 * p.size
    np.testing.assert_array_equal(np.frombuffer(raw, "<f8"), p.flatten())
    q = MlpParams.load(tmp_path / "ckpt.bin")
    np.testing.assert_array_equal(q.flatten(), p.flatten())


def test_bad_layer_sizes():
    with pytest.raises(ValueError):
        init_params([2, 3, 2], np.random.default_rng(0))
