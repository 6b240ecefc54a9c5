"""Fully connected network with a Gaussian output layer, trained by NLL.

Plain numpy: ReLU hidden layers, a linear mean head and a softplus scale head,
reverse-mode gradients written out by hand, and Adam on shuffled minibatches.
The network sees standardised targets; ``y_mean``/``y_scale`` map its outputs
back to minutes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List, Sequence

import numpy as np
from scipy.special import expit

from .distributions import SIGMA_FLOOR, Gaussian
from .errors import NumericalError
from .optim import AdamState

_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class MLPConfig:
    hidden: Sequence[int] = (256, 256)
    l2: float = 0.01
    learning_rate: float = 1e-4
    epochs: int = 100
    batch_size: int = 128
    seed: int = 0

    def __post_init__(self):
        if any(w < 1 for w in self.hidden):
            raise ValueError("hidden widths must be >= 1")
        if self.l2 < 0:
            raise ValueError("l2 must be >= 0")
        if self.batch_size < 1 or self.epochs < 0:
            raise ValueError("batch_size must be >= 1 and epochs >= 0")


def softplus(z):
    return np.logaddexp(0.0, z)


def softplus_inv(v: float) -> float:
    return float(v + math.log(-math.expm1(-v)))


@dataclass
class MLPModel:
    """Parameters keyed ``W0, b0, ..., Wmu, bmu, Wsig, bsig``."""

    params: Dict[str, np.ndarray]
    n_hidden: int
    activation: str = "relu"
    y_mean: float = 0.0
    y_scale: float = 1.0

    @property
    def input_dim(self) -> int:
        return self.params["W0"].shape[0] if self.n_hidden else self.params["Wmu"].shape[0]

    def weight_names(self) -> List[str]:
        return [f"W{i}" for i in range(self.n_hidden)] + ["Wmu", "Wsig"]

    def network(self, X):
        """Raw head outputs ``(mu, sigma)`` in standardised target units."""
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.input_dim:
            raise ValueError(f"expected {self.input_dim} inputs, got {X.shape[1]}")
        h = X
        for i in range(self.n_hidden):
            h = np.maximum(h @ self.params[f"W{i}"] + self.params[f"b{i}"], 0.0)
        mu = (h @ self.params["Wmu"] + self.params["bmu"])[:, 0]
        sigma = softplus((h @ self.params["Wsig"] + self.params["bsig"])[:, 0]) + SIGMA_FLOOR
        return mu, sigma

    def forward(self, X):
        """Return ``(mu, sigma)`` arrays in target units for a batch of rows."""
        mu, sigma = self.network(X)
        return self.y_mean + self.y_scale * mu, np.maximum(self.y_scale * sigma, SIGMA_FLOOR)

    def predict_dists(self, X) -> List[Gaussian]:
        mu, sigma = self.forward(X)
        return [Gaussian(float(m), float(s)) for m, s in zip(mu, sigma)]

    def predict_dist(self, x) -> Gaussian:
        return self.predict_dists(np.asarray(x, dtype=float)[None, :])[0]

    def to_dict(self) -> dict:
        return {
            "n_hidden": self.n_hidden,
            "activation": self.activation,
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
            "params": {k: {"shape": list(v.shape), "data": v.ravel().tolist()} for k, v in self.params.items()},
        }

    @classmethod
    def from_dict(cls, d: dict) -> "MLPModel":
        params = {k: np.asarray(v["data"], dtype=float).reshape(v["shape"]) for k, v in d["params"].items()}
        return cls(params, d["n_hidden"], d.get("activation", "relu"), d.get("y_mean", 0.0), d.get("y_scale", 1.0))


def forward_dist(model: MLPModel, x) -> Gaussian:
    return model.predict_dist(x)


def init_mlp(config: MLPConfig, input_dim: int, target_std: float = 1.0, zero_weights: bool = False) -> MLPModel:
    """Glorot-uniform weights, zero biases, scale-head bias matching ``target_std``."""
    if input_dim < 1:
        raise ValueError("input_dim must be >= 1")
    rng = np.random.default_rng(config.seed)
    widths = [input_dim, *config.hidden]
    params = {}

    def glorot(fan_in, fan_out):
        if zero_weights:
            return np.zeros((fan_in, fan_out))
        limit = math.sqrt(6.0 / (fan_in + fan_out))
        return rng.uniform(-limit, limit, size=(fan_in, fan_out))

    for i, (a, b) in enumerate(zip(widths[:-1], widths[1:])):
        params[f"W{i}"] = glorot(a, b)
        params[f"b{i}"] = np.zeros(b)
    params["Wmu"] = glorot(widths[-1], 1)
    params["bmu"] = np.zeros(1)
    params["Wsig"] = glorot(widths[-1], 1)
    params["bsig"] = np.array([softplus_inv(max(target_std - SIGMA_FLOOR, 1e-3))])
    return MLPModel(params, len(config.hidden))


def loss_and_grads(model: MLPModel, X, y, l2: float):
    """Mean Gaussian NLL plus ``l2 * sum ||W||^2`` over weight matrices, and its gradient.

    ``y`` is in the network's (standardised) units.
    """
    p = model.params
    acts = [np.asarray(X, dtype=float)]
    for i in range(model.n_hidden):
        acts.append(np.maximum(acts[-1] @ p[f"W{i}"] + p[f"b{i}"], 0.0))
    h = acts[-1]
    mu = (h @ p["Wmu"] + p["bmu"])[:, 0]
    zs = (h @ p["Wsig"] + p["bsig"])[:, 0]
    sigma = softplus(zs) + SIGMA_FLOOR
    B = len(y)
    resid = y - mu
    nll = _HALF_LOG_2PI + np.log(sigma) + 0.5 * (resid / sigma) ** 2
    penalty = sum(float(np.sum(p[k] ** 2)) for k in model.weight_names())
    loss = float(nll.mean()) + l2 * penalty

    d_mu = (-resid / sigma**2 / B)[:, None]
    d_sigma = (1.0 / sigma - resid**2 / sigma**3) / B
    d_zs = (d_sigma * expit(zs))[:, None]
    g = {
        "Wmu": h.T @ d_mu,
        "bmu": d_mu.sum(axis=0),
        "Wsig": h.T @ d_zs,
        "bsig": d_zs.sum(axis=0),
    }
    dh = d_mu @ p["Wmu"].T + d_zs @ p["Wsig"].T
    for i in reversed(range(model.n_hidden)):
        dz = dh * (acts[i + 1] > 0)
        g[f"W{i}"] = acts[i].T @ dz
        g[f"b{i}"] = dz.sum(axis=0)
        dh = dz @ p[f"W{i}"].T
    for k in model.weight_names():
        g[k] = g[k] + 2.0 * l2 * p[k]
    return loss, g


@dataclass
class TrainingTrace:
    epoch_loss: List[float] = field(default_factory=list)


def train_pnn(dm, config: MLPConfig = MLPConfig(), trace: TrainingTrace = None) -> MLPModel:
    X = np.asarray(dm.X, dtype=float)
    y_raw = np.asarray(dm.y, dtype=float)
    y_mean, y_scale = float(y_raw.mean()), float(y_raw.std())
    if y_scale == 0.0:
        y_scale = 1.0
    y = (y_raw - y_mean) / y_scale
    # sigma starts near the target spread: std(y) in target units
    model = init_mlp(config, X.shape[1], float(np.std(y)))
    model.y_mean, model.y_scale = y_mean, y_scale
    adam = AdamState.like(model.params)
    rng = np.random.default_rng(config.seed + 1)
    n = len(y)
    for epoch in range(config.epochs):
        order = rng.permutation(n)
        total = 0.0
        for b, start in enumerate(range(0, n, config.batch_size)):
            rows = order[start:start + config.batch_size]
            loss, grads = loss_and_grads(model, X[rows], y[rows], config.l2)
            if not math.isfinite(loss):
                raise NumericalError(f"non-finite loss at epoch {epoch}, batch {b}")
            adam.update(model.params, grads, config.learning_rate)
            total += loss * len(rows)
        if trace is not None:
            trace.epoch_loss.append(total / n)
    return model
