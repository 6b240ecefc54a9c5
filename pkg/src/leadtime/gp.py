"""Sparse variational Gaussian process regression with an ARD RBF kernel.

Unwhitened parameterisation: the variational posterior over inducing outputs
``u = f(Z)`` is ``N(m, L L^T)``.  The evidence lower bound is estimated on
minibatches and ascended with Adam; its gradient is derived by hand with
respect to every parameter, including the inducing inputs.  Adam moves in
whitened coordinates ``m = Lk v``, ``L = Lk Lv`` with ``Lk = chol(K_MM)``,
and the fitted model is stored unwhitened.

Targets are standardised internally and predictions mapped back, so the zero
prior mean sits at the training mean.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Dict, List

import numpy as np
from scipy.linalg import cho_solve, cholesky, solve_triangular

from .distributions import Gaussian
from .errors import NumericalError
from .optim import AdamState

JITTER = 1e-6
MAX_JITTER = 1e-2
_LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True)
class SVGPConfig:
    inducing: int = 100
    batch_size: int = 1000
    learning_rate: float = 0.01
    steps: int = 2000
    seed: int = 0
    train_hyperparameters: bool = True

    def __post_init__(self):
        if self.inducing < 1 or self.batch_size < 1 or self.steps < 0:
            raise ValueError("inducing and batch_size must be >= 1, steps >= 0")


def rbf(variance: float, lengthscales, A, B) -> np.ndarray:
    """``variance * exp(-0.5 * sum_d (a_d - b_d)^2 / l_d^2)`` for all row pairs."""
    A = np.atleast_2d(np.asarray(A, dtype=float)) / lengthscales
    B = np.atleast_2d(np.asarray(B, dtype=float)) / lengthscales
    sq = (A * A).sum(1)[:, None] + (B * B).sum(1)[None, :] - 2.0 * A @ B.T
    return variance * np.exp(-0.5 * np.maximum(sq, 0.0))


@dataclass
class RBFKernel:
    variance: float
    lengthscales: np.ndarray

    def __call__(self, A, B) -> np.ndarray:
        return rbf(self.variance, self.lengthscales, A, B)


def kernel_matrix(kernel: RBFKernel, A, B) -> np.ndarray:
    return kernel(A, B)


@dataclass
class SVGPModel:
    kernel: RBFKernel
    noise_variance: float
    Z: np.ndarray
    m: np.ndarray
    L: np.ndarray
    jitter: float = JITTER
    y_mean: float = 0.0
    y_scale: float = 1.0
    elbo_trace: List[float] = field(default_factory=list)

    @property
    def M(self) -> int:
        return self.Z.shape[0]

    def params(self) -> Dict[str, np.ndarray]:
        """Unconstrained coordinates; the factor diagonal is stored as its log."""
        L = np.tril(self.L).copy()
        L[np.diag_indices_from(L)] = np.log(np.diag(self.L))
        return {
            "log_variance": np.array(math.log(self.kernel.variance)),
            "log_lengthscales": np.log(self.kernel.lengthscales),
            "log_noise": np.array(math.log(self.noise_variance)),
            "Z": self.Z.copy(),
            "m": self.m.copy(),
            "L": L,
        }

    @classmethod
    def from_params(cls, p, jitter=JITTER, y_mean=0.0, y_scale=1.0) -> "SVGPModel":
        L = np.tril(p["L"]).copy()
        L[np.diag_indices_from(L)] = np.exp(np.diag(p["L"]))
        kern = RBFKernel(float(np.exp(p["log_variance"])), np.exp(p["log_lengthscales"]))
        return cls(kern, float(np.exp(p["log_noise"])), p["Z"].copy(), p["m"].copy(), L, jitter, y_mean, y_scale)

    def _standardise(self, y):
        return (np.asarray(y, dtype=float) - self.y_mean) / self.y_scale

    def kmm_cholesky(self):
        return _stable_cholesky(self.kernel(self.Z, self.Z), self.jitter)

    def predict_latent(self, X):
        """Standardised-scale predictive mean and variance of ``y`` (noise included)."""
        X = np.atleast_2d(np.asarray(X, dtype=float))
        if X.shape[1] != self.Z.shape[1]:
            raise ValueError(f"expected {self.Z.shape[1]} features, got {X.shape[1]}")
        Lk, _ = self.kmm_cholesky()
        Kmx = self.kernel(self.Z, X)
        A = cho_solve((Lk, True), Kmx)
        mean = A.T @ self.m
        SA = self.L.T @ A
        var = self.kernel.variance - np.sum(Kmx * A, axis=0) + np.sum(SA * SA, axis=0)
        if np.any(var < -1e-9):
            raise NumericalError(f"negative predictive variance {var.min():.3g}")
        return mean, np.maximum(var, 0.0) + self.noise_variance

    def predict_moments(self, X):
        mean, var = self.predict_latent(X)
        return mean * self.y_scale + self.y_mean, var * self.y_scale**2

    def predict_dists(self, X) -> List[Gaussian]:
        mean, var = self.predict_moments(X)
        return [Gaussian(float(mu), float(math.sqrt(v))) for mu, v in zip(mean, var)]

    def predict_dist(self, x) -> Gaussian:
        return self.predict_dists(np.asarray(x, dtype=float)[None, :])[0]

    def to_dict(self) -> dict:
        return {
            "variance": self.kernel.variance,
            "lengthscales": self.kernel.lengthscales.tolist(),
            "noise_variance": self.noise_variance,
            "Z": self.Z.tolist(),
            "m": self.m.tolist(),
            "L": self.L.tolist(),
            "jitter": self.jitter,
            "y_mean": self.y_mean,
            "y_scale": self.y_scale,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "SVGPModel":
        return cls(RBFKernel(d["variance"], np.asarray(d["lengthscales"], dtype=float)),
                   d["noise_variance"], np.asarray(d["Z"], dtype=float).reshape(len(d["Z"]), -1),
                   np.asarray(d["m"], dtype=float), np.asarray(d["L"], dtype=float),
                   d["jitter"], d["y_mean"], d["y_scale"])


def _stable_cholesky(K, jitter):
    """Cholesky of ``K + jitter I``, escalating jitter tenfold up to ``MAX_JITTER``."""
    eye = np.eye(K.shape[0])
    while True:
        try:
            return cholesky(K + jitter * eye, lower=True), jitter
        except np.linalg.LinAlgError:
            jitter *= 10.0
            if jitter > MAX_JITTER * (1 + 1e-9):
                raise NumericalError("inducing covariance is not positive definite even with jitter 1e-2") from None


def _kl(Lk, Binv, m, L):
    M = len(m)
    S = L @ L.T
    logdet_k = 2.0 * np.sum(np.log(np.diag(Lk)))
    logdet_s = 2.0 * np.sum(np.log(np.abs(np.diag(L))))
    return 0.5 * (np.sum(Binv * S) + m @ Binv @ m - M + logdet_k - logdet_s)


def kl_divergence(model: SVGPModel) -> float:
    Lk, _ = model.kmm_cholesky()
    Binv = cho_solve((Lk, True), np.eye(model.M))
    return float(_kl(Lk, Binv, model.m, model.L))


def _kernel_grads(W, P, Q, ls, grads, key_p, key_q):
    """Chain ``W = G * K`` through an RBF block ``K(P, Q)`` into ``grads``."""
    inv_l2 = 1.0 / ls**2
    rows = W.sum(1)
    cols = W.sum(0)
    WQ = W @ Q
    WtP = W.T @ P
    grads["log_variance"] = grads["log_variance"] + W.sum()
    sqdist = rows @ (P * P) - 2.0 * np.sum(P * WQ, axis=0) + cols @ (Q * Q)
    grads["log_lengthscales"] = grads["log_lengthscales"] + sqdist * inv_l2
    if key_p:
        grads[key_p] = grads[key_p] - (P * rows[:, None] - WQ) * inv_l2
    if key_q:
        grads[key_q] = grads[key_q] + (WtP - Q * cols[:, None]) * inv_l2


def _unpack(params):
    v = float(np.exp(params["log_variance"]))
    ls = np.exp(params["log_lengthscales"])
    noise = float(np.exp(params["log_noise"]))
    L = np.tril(params["L"]).copy()
    diag = np.exp(np.diag(params["L"]))
    L[np.diag_indices(len(diag))] = diag
    return v, ls, noise, L, diag


def _elbo_core(v, ls, noise, Z, m, L, Lk, Xb, yb, N, need_grad):
    """ELBO for a given inducing Cholesky ``Lk``; gradients are raw (``L`` entrywise)."""
    Xb = np.atleast_2d(np.asarray(Xb, dtype=float))
    yb = np.asarray(yb, dtype=float)
    B = len(yb)
    if B == 0:
        raise ValueError("empty batch")
    M = len(m)
    Binv = cho_solve((Lk, True), np.eye(M))
    Kzx = rbf(v, ls, Z, Xb)
    A = Binv @ Kzx
    mu = A.T @ m
    LtA = L.T @ A
    qvar = v - np.sum(Kzx * A, axis=0) + np.sum(LtA * LtA, axis=0)
    r = yb - mu
    c = N / B
    ell = -0.5 * _LOG_2PI - 0.5 * math.log(noise) - (r * r + qvar) / (2.0 * noise)
    value = float(c * ell.sum() - _kl(Lk, Binv, m, L))
    if not need_grad:
        return value, None

    S = L @ L.T
    Bm = Binv @ m
    AAt = A @ A.T
    BS = Binv @ S
    g = {
        "log_variance": np.array(-(c / (2.0 * noise)) * B * v),
        "log_lengthscales": np.zeros_like(ls),
        "log_noise": np.array(c * np.sum(-0.5 + (r * r + qvar) / (2.0 * noise))),
        "Z": np.zeros_like(Z),
        "m": (c / noise) * (A @ r) - Bm,
        "L": np.tril(-(c / noise) * AAt @ L - Binv @ L) + np.diag(1.0 / np.diag(L)),
    }
    G_zx = (c / noise) * (np.outer(Bm, r) + A - BS @ A)
    G_zz_f = (-(c / noise) * np.outer(Bm, A @ r) - (c / (2.0 * noise)) * AAt
              + (c / (2.0 * noise)) * (AAt @ BS.T + BS @ AAt))
    G_zz_kl = 0.5 * (-BS @ Binv - np.outer(Bm, Bm) + Binv)
    _kernel_grads(G_zx * Kzx, Z, Xb, ls, g, "Z", None)
    g["Kzz"] = G_zz_f - G_zz_kl
    return value, g


def _finish_kzz(g, Kzz, Z, ls):
    _kernel_grads(g.pop("Kzz") * Kzz, Z, Z, ls, g, "Z", "Z")


def elbo_and_grad(params: Dict[str, np.ndarray], Xb, yb, N: int, jitter: float = JITTER,
                  need_grad: bool = True):
    """ELBO of a standardised-target batch and its gradient in unconstrained coordinates."""
    v, ls, noise, L, diag = _unpack(params)
    Z = params["Z"]
    Kzz = rbf(v, ls, Z, Z)
    Lk, _ = _stable_cholesky(Kzz, jitter)
    value, g = _elbo_core(v, ls, noise, Z, params["m"], L, Lk, Xb, yb, N, need_grad)
    if not need_grad:
        return value, None
    _finish_kzz(g, Kzz, Z, ls)
    g["L"][np.diag_indices_from(L)] *= diag
    return value, g


def cholesky_backward(Lk, gLk):
    """Gradient with respect to a symmetric matrix from the gradient on its Cholesky factor."""
    P = np.tril(Lk.T @ np.tril(gLk))
    P[np.diag_indices_from(P)] *= 0.5
    S = solve_triangular(Lk, solve_triangular(Lk, P.T, trans=1, lower=True).T, trans=1, lower=True)
    return 0.5 * (S + S.T)


def whiten(params: Dict[str, np.ndarray], jitter: float = JITTER) -> Dict[str, np.ndarray]:
    """Swap ``m, L`` for ``v = Lk^-1 m`` and ``Lv = Lk^-1 L`` (same log-diagonal convention)."""
    v, ls, _, L, _ = _unpack(params)
    Lk, _ = _stable_cholesky(rbf(v, ls, params["Z"], params["Z"]), jitter)
    out = dict(params)
    out["m"] = solve_triangular(Lk, params["m"], lower=True)
    Lv = solve_triangular(Lk, L, lower=True)
    Lv[np.diag_indices_from(Lv)] = np.log(np.diag(Lv))
    out["L"] = np.tril(Lv)
    return out


def unwhiten(wparams: Dict[str, np.ndarray], jitter: float = JITTER) -> Dict[str, np.ndarray]:
    v, ls, _, Lv, _ = _unpack(wparams)
    Lk, _ = _stable_cholesky(rbf(v, ls, wparams["Z"], wparams["Z"]), jitter)
    out = dict(wparams)
    out["m"] = Lk @ wparams["m"]
    L = Lk @ Lv
    L[np.diag_indices_from(L)] = np.log(np.diag(L))
    out["L"] = L
    return out


def whitened_elbo_and_grad(wparams: Dict[str, np.ndarray], Xb, yb, N: int, jitter: float = JITTER,
                           need_grad: bool = True):
    """ELBO and gradient in whitened variational coordinates.

    The objective is the same unwhitened ELBO; only the coordinates Adam moves in
    change, which removes the conditioning of ``K_MM`` from the variational steps.
    """
    v, ls, noise, Lv, diag = _unpack(wparams)
    Z = wparams["Z"]
    Kzz = rbf(v, ls, Z, Z)
    Lk, _ = _stable_cholesky(Kzz, jitter)
    wm = wparams["m"]
    m = Lk @ wm
    L = Lk @ Lv
    value, g = _elbo_core(v, ls, noise, Z, m, L, Lk, Xb, yb, N, need_grad)
    if not need_grad:
        return value, None
    g_m, g_L = g["m"], np.tril(g["L"])
    g["Kzz"] = g["Kzz"] + cholesky_backward(Lk, np.outer(g_m, wm) + g_L @ Lv.T)
    _finish_kzz(g, Kzz, Z, ls)
    g["m"] = Lk.T @ g_m
    g_Lv = np.tril(Lk.T @ g_L)
    g_Lv[np.diag_indices_from(g_Lv)] *= diag
    g["L"] = g_Lv
    return value, g


def elbo(model: SVGPModel, X, y, N: int = None) -> float:
    """ELBO of a batch on the original target scale (standardised internally)."""
    y = model._standardise(y)
    N = len(y) if N is None else N
    value, _ = elbo_and_grad(model.params(), X, y, N, model.jitter, need_grad=False)
    return value


def optimal_variational(model: SVGPModel, X, y) -> SVGPModel:
    """Closed-form optimal ``q(u)`` for the full data at fixed hyperparameters."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = model._standardise(y)
    Kmm = model.kernel(model.Z, model.Z) + model.jitter * np.eye(model.M)
    Kmn = model.kernel(model.Z, X)
    P = Kmm + Kmn @ Kmn.T / model.noise_variance
    Lp = cholesky(P, lower=True)
    m = Kmm @ cho_solve((Lp, True), Kmn @ y) / model.noise_variance
    S = Kmm @ cho_solve((Lp, True), Kmm)
    L = cholesky(0.5 * (S + S.T), lower=True)
    return SVGPModel(model.kernel, model.noise_variance, model.Z.copy(), m, L, model.jitter,
                     model.y_mean, model.y_scale)


def init_svgp(X, y, config: SVGPConfig) -> SVGPModel:
    X = np.asarray(X, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    y_mean, y_scale = float(y.mean()), float(y.std())
    if y_scale == 0.0:
        y_scale = 1.0
    ys = (y - y_mean) / y_scale
    rng = np.random.default_rng(config.seed)
    M = min(config.inducing, n)
    Z = X[np.sort(rng.choice(n, size=M, replace=False))].copy()
    kern = RBFKernel(float(ys.var()) or 1.0, np.maximum(X.std(axis=0), 1e-3))
    Lk, jitter = _stable_cholesky(kern(Z, Z), JITTER)
    return SVGPModel(kern, 0.1 * (float(ys.var()) or 1.0), Z, np.zeros(M), Lk, jitter, y_mean, y_scale)


def fit_svgp(dm, config: SVGPConfig = SVGPConfig(), model: SVGPModel = None) -> SVGPModel:
    """Adam ascent of the minibatch ELBO, starting from ``model`` or a fresh init."""
    X = np.asarray(dm.X, dtype=float)
    y = np.asarray(dm.y, dtype=float)
    if model is None:
        model = init_svgp(X, y, config)
    ys = model._standardise(y)
    n = len(y)
    batch = min(config.batch_size, n)
    params = whiten(model.params(), model.jitter)
    trainable = list(params) if config.train_hyperparameters else ["m", "L"]
    adam = AdamState.like({k: params[k] for k in trainable})
    rng = np.random.default_rng(config.seed + 1)
    trace = []
    for step in range(config.steps):
        rows = rng.choice(n, size=batch, replace=False) if batch < n else np.arange(n)
        value, grads = whitened_elbo_and_grad(params, X[rows], ys[rows], n, model.jitter)
        if not math.isfinite(value):
            raise NumericalError(f"non-finite ELBO at step {step}")
        trace.append(value)
        sub = {k: params[k] for k in trainable}
        adam.update(sub, {k: grads[k] for k in trainable}, config.learning_rate, maximize=True)
        params.update(sub)
    fitted = SVGPModel.from_params(unwhiten(params, model.jitter), model.jitter, model.y_mean, model.y_scale)
    fitted.elbo_trace = trace
    return fitted
