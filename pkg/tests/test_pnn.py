import math

import numpy as np
import pytest

from helpers import design
from leadtime.distributions import SIGMA_FLOOR, Gaussian
from leadtime.optim import AdamState
from leadtime.pnn import (
    MLPConfig,
    MLPModel,
    TrainingTrace,
    forward_dist,
    init_mlp,
    loss_and_grads,
    softplus,
    softplus_inv,
    train_pnn,
)


def hetero(n=2000, seed=0):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-3, 3, n)
    return design(x, rng.normal(0.0, np.sqrt(1 + x**2)))


def test_softplus_values():
    assert softplus(0.0) == pytest.approx(math.log(2.0), abs=1e-15)
    for v in (1e-3, 0.5, 3.0, 40.0):
        assert softplus(softplus_inv(v)) == pytest.approx(v, rel=1e-12)


def test_init_is_deterministic_and_shaped():
    cfg = MLPConfig(seed=3)
    a, b = init_mlp(cfg, 12), init_mlp(cfg, 12)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])
    shapes = {k: v.shape for k, v in a.params.items() if k.startswith("W")}
    assert shapes == {"W0": (12, 256), "W1": (256, 256), "Wmu": (256, 1), "Wsig": (256, 1)}
    limit = math.sqrt(6.0 / (12 + 256))
    assert np.abs(a.params["W0"]).max() <= limit
    assert np.all(a.params["b0"] == 0)


def test_initial_sigma_matches_target_std():
    model = init_mlp(MLPConfig(hidden=(4,)), 2, target_std=2.5, zero_weights=True)
    _, sigma = model.forward(np.zeros((1, 2)))
    assert sigma[0] == pytest.approx(2.5, rel=1e-9)


def test_zero_weights_give_constant_gaussian():
    model = init_mlp(MLPConfig(hidden=(5, 5)), 3, zero_weights=True)
    model.params["bsig"] = np.array([0.3])
    model.params["bmu"] = np.array([1.5])
    X = np.random.default_rng(0).normal(size=(10, 3))
    mu, sigma = model.forward(X)
    np.testing.assert_allclose(mu, 1.5)
    np.testing.assert_allclose(sigma, softplus(0.3) + SIGMA_FLOOR)


def test_hand_set_forward_pass():
    p = {
        "W0": np.array([[1.0, -1.0], [2.0, 0.5]]),
        "b0": np.array([0.0, 1.0]),
        "Wmu": np.array([[1.0], [2.0]]),
        "bmu": np.array([0.5]),
        "Wsig": np.array([[0.5], [-1.0]]),
        "bsig": np.array([0.25]),
    }
    model = MLPModel(p, 1)
    # x = (1, 1): hidden pre = (3, 0.5) -> relu (3, 0.5); mu = 3 + 1 + 0.5; z = 1.5 - 0.5 + 0.25
    d = forward_dist(model, [1.0, 1.0])
    assert isinstance(d, Gaussian)
    assert d.mu == pytest.approx(4.5)
    assert d.sigma == pytest.approx(math.log1p(math.exp(1.25)) + SIGMA_FLOOR)
    # x = (-1, 0): hidden pre = (-1, 2) -> (0, 2); mu = 4.5; z = -2 + 0.25
    d = forward_dist(model, [-1.0, 0.0])
    assert d.mu == pytest.approx(4.5)
    assert d.sigma == pytest.approx(math.log1p(math.exp(-1.75)) + SIGMA_FLOOR)


def test_dimension_mismatch():
    model = init_mlp(MLPConfig(hidden=(3,)), 2)
    with pytest.raises(ValueError):
        model.forward(np.zeros((1, 3)))


def test_backprop_matches_finite_differences():
    rng = np.random.default_rng(0)
    model = init_mlp(MLPConfig(hidden=(8, 8), seed=1), 4)
    for k in model.params:
        model.params[k] = model.params[k] + 0.1 * rng.normal(size=model.params[k].shape)
    X = rng.normal(size=(16, 4))
    y = rng.normal(size=16)
    _, grads = loss_and_grads(model, X, y, 0.01)
    h = 1e-4
    for k, P in model.params.items():
        fd = np.zeros_like(P)
        for idx in np.ndindex(P.shape):
            old = P[idx]
            P[idx] = old + h
            up, _ = loss_and_grads(model, X, y, 0.01)
            P[idx] = old - h
            down, _ = loss_and_grads(model, X, y, 0.01)
            P[idx] = old
            fd[idx] = (up - down) / (2 * h)
        rel = np.linalg.norm(grads[k] - fd) / max(np.linalg.norm(fd), 1e-8)
        assert rel < 1e-4, k


def test_adam_single_step_closed_form():
    params = {"w": np.array([1.0, -2.0, 0.5])}
    g = np.array([0.3, -0.1, 2.0])
    state = AdamState.like(params)
    state.update(params, {"w": g}, lr=0.01)
    m = 0.1 * g
    v = 0.001 * g * g
    expected = np.array([1.0, -2.0, 0.5]) - 0.01 * (m / 0.1) / (np.sqrt(v / 0.001) + 1e-8)
    np.testing.assert_allclose(params["w"], expected, atol=1e-12)
    # second step, same gradient
    state.update(params, {"w": g}, lr=0.01)
    m2 = 0.9 * m + 0.1 * g
    v2 = 0.999 * v + 0.001 * g * g
    expected = expected - 0.01 * (m2 / (1 - 0.81)) / (np.sqrt(v2 / (1 - 0.999**2)) + 1e-8)
    np.testing.assert_allclose(params["w"], expected, atol=1e-12)


def test_constant_target_converges():
    X = np.random.default_rng(0).normal(size=(64, 3))
    c = 5.0
    model = train_pnn(design(X, np.full(64, c)), MLPConfig(epochs=500))
    mu, sigma = model.forward(X)
    assert np.all(np.abs(mu - c) < 0.05 * c)
    assert np.all(sigma < 0.01)


def test_huge_l2_flattens_network():
    dm = hetero(256, seed=1)
    model = train_pnn(dm, MLPConfig(hidden=(16, 16), l2=1e6, learning_rate=1e-2, epochs=100))
    for k in model.weight_names():
        assert np.abs(model.params[k]).max() < 0.05
    mu, _ = model.forward(np.linspace(-3, 3, 50)[:, None])
    assert mu.std() < 0.05 * dm.y.std()


def test_heteroscedastic_ratio():
    model = train_pnn(hetero(), MLPConfig(hidden=(64, 64), l2=1e-4, learning_rate=1e-3, epochs=100))
    _, sigma = model.forward(np.array([[0.0], [3.0]]))
    assert 2.2 <= sigma[1] / sigma[0] <= 4.2


def test_loss_decreases_over_first_epochs():
    trace = TrainingTrace()
    train_pnn(hetero(), MLPConfig(epochs=10), trace)
    assert len(trace.epoch_loss) == 10
    assert trace.epoch_loss[-1] < trace.epoch_loss[0]


def test_batch_equals_rowwise_and_round_trip():
    model = train_pnn(hetero(300), MLPConfig(hidden=(8,), epochs=2))
    X = np.linspace(-3, 3, 17)[:, None]
    batch = model.predict_dists(X)
    rows = [model.predict_dist(x) for x in X[::-1]][::-1]
    # BLAS may block a single row differently from a batch, so compare to rounding
    for a, b in zip(batch, rows):
        assert (a.mu, a.sigma) == pytest.approx((b.mu, b.sigma), rel=1e-12, abs=1e-14)
    again = MLPModel.from_dict(model.to_dict())
    assert again.predict_dists(X) == batch


def test_training_is_deterministic():
    dm = hetero(300)
    cfg = MLPConfig(hidden=(8,), epochs=3, seed=4)
    a, b = train_pnn(dm, cfg), train_pnn(dm, cfg)
    for k in a.params:
        np.testing.assert_array_equal(a.params[k], b.params[k])


def test_config_validation():
    with pytest.raises(ValueError):
        MLPConfig(hidden=(0,))
    with pytest.raises(ValueError):
        MLPConfig(l2=-1.0)
