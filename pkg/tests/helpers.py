"""Shared fixtures and independent oracles for the test suite."""

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from leadtime.dataset import DesignMatrix


def design(X, y, statusquo=None) -> DesignMatrix:
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        X = X[:, None]
    names = [f"x{j}" for j in range(X.shape[1])]
    return DesignMatrix(X, np.asarray(y, dtype=float), names, {}, statusquo)


def two_clusters(n=400, seed=0, exact=True):
    """Exponential scale 2 for x < 0 and scale 8 for x > 0."""
    rng = np.random.default_rng(seed)
    side = np.arange(n) % 2 == 1
    if exact:
        x = np.where(side, 1.0, -1.0)
    else:
        x = np.where(side, rng.uniform(0.05, 1.0, n), rng.uniform(-1.0, -0.05, n))
    y = rng.exponential(np.where(side, 8.0, 2.0))
    return design(x, y), side


def exact_gp(X, y, Xs, variance, lengthscales, noise):
    """Closed-form GP regression: log marginal likelihood and predictive moments of y*."""
    X, Xs = np.atleast_2d(X), np.atleast_2d(Xs)
    ls = np.asarray(lengthscales, dtype=float)

    def k(A, B):
        d = ((A[:, None, :] - B[None, :, :]) / ls) ** 2
        return variance * np.exp(-0.5 * d.sum(-1))

    K = k(X, X) + noise * np.eye(len(y))
    c, low = cho_factor(K, lower=True)
    alpha = cho_solve((c, low), y)
    lml = -0.5 * y @ alpha - np.log(np.diag(c)).sum() - 0.5 * len(y) * np.log(2 * np.pi)
    Ks = k(Xs, X)
    mean = Ks @ alpha
    var = variance - np.einsum("ij,ji->i", Ks, cho_solve((c, low), Ks.T)) + noise
    return lml, mean, var


def brute_force_isotonic(y, w=None):
    """Least-squares non-decreasing fit by exhaustive search over contiguous poolings.

    Costs equal to rounding are resolved toward the finest pooling, which is the
    unique optimum when a tie is only a floating-point artefact.
    """
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if w is None else np.asarray(w, dtype=float)
    n = len(y)
    feasible = []
    for mask in range(1 << (n - 1)):
        cuts = [0] + [i + 1 for i in range(n - 1) if mask >> i & 1] + [n]
        fit = np.empty(n)
        for a, b in zip(cuts[:-1], cuts[1:]):
            fit[a:b] = np.sum(w[a:b] * y[a:b]) / np.sum(w[a:b])
        if np.all(np.diff(fit) >= 0):
            feasible.append((np.sum(w * (y - fit) ** 2), len(cuts), fit))
    best = min(c for c, _, _ in feasible)
    ties = [(k, fit) for c, k, fit in feasible if c <= best + 1e-12 * (1.0 + best)]
    return max(ties, key=lambda t: t[0])[1]
