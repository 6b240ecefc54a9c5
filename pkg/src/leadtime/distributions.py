"""Parametric predictive distributions and their scoring geometry.

Every parametric family is handled in unconstrained internal coordinates:
``(mu, log sigma)`` for the Gaussian and ``log scale`` for the Exponential.
The per-family classes below carry vectorised helpers (``nll``, ``grad``,
``fisher``) used by the boosting code; the small frozen dataclasses are the
per-sample predictive objects handed to users.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence, Tuple, Union

import numpy as np
from scipy import special

SIGMA_FLOOR = 1e-4
_HALF_LOG_2PI = 0.5 * math.log(2.0 * math.pi)


@dataclass(frozen=True)
class Gaussian:
    mu: float
    sigma: float

    def __post_init__(self):
        if not self.sigma > 0:
            raise ValueError(f"sigma must be positive, got {self.sigma}")

    kind = "gaussian"

    @property
    def theta(self) -> np.ndarray:
        return np.array([self.mu, math.log(self.sigma)])

    def params(self) -> dict:
        return {"mu": self.mu, "sigma": self.sigma}


@dataclass(frozen=True)
class Exponential:
    scale: float

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")

    kind = "exponential"

    @property
    def theta(self) -> np.ndarray:
        return np.array([math.log(self.scale)])

    def params(self) -> dict:
        return {"scale": self.scale}


@dataclass(frozen=True)
class QuantileSet:
    """Predicted quantiles at a fixed set of levels, optionally with a mean."""

    levels: Tuple[float, ...]
    values: Tuple[float, ...]
    mean: Optional[float] = None

    kind = "quantiles"

    def __post_init__(self):
        levels = np.asarray(self.levels, dtype=float)
        if len(self.levels) != len(self.values) or len(self.levels) == 0:
            raise ValueError("levels and values must be nonempty and equally long")
        if np.any(np.diff(levels) <= 0):
            raise ValueError("quantile levels must be strictly increasing")
        if np.any((levels <= 0) | (levels >= 1)):
            raise ValueError("quantile levels must lie in (0, 1)")

    def params(self) -> dict:
        out = {f"q{lv:g}": v for lv, v in zip(self.levels, self.values)}
        if self.mean is not None:
            out["mean"] = self.mean
        return out


PredictiveDistribution = Union[Gaussian, Exponential, QuantileSet]


class GaussianFamily:
    """Vectorised Gaussian scoring in ``theta = (mu, log sigma)``."""

    name = "gaussian"
    n_params = 2

    @staticmethod
    def nll(theta, y):
        mu, log_sigma = theta[..., 0], theta[..., 1]
        z = (y - mu) * np.exp(-log_sigma)
        return _HALF_LOG_2PI + log_sigma + 0.5 * z * z

    @staticmethod
    def grad(theta, y):
        mu, log_sigma = theta[..., 0], theta[..., 1]
        resid = y - mu
        inv_var = np.exp(-2.0 * log_sigma)
        return np.stack([-resid * inv_var, 1.0 - resid * resid * inv_var], axis=-1)

    @staticmethod
    def fisher(theta):
        theta = np.asarray(theta, dtype=float)
        inv_var = np.exp(-2.0 * theta[..., 1])
        out = np.zeros(theta.shape[:-1] + (2, 2))
        out[..., 0, 0] = inv_var
        out[..., 1, 1] = 2.0
        return out

    @staticmethod
    def natural_grad(theta, y):
        # diag Fisher: invert elementwise
        g = GaussianFamily.grad(theta, y)
        sigma2 = np.exp(2.0 * theta[..., 1])
        return np.stack([g[..., 0] * sigma2, 0.5 * g[..., 1]], axis=-1)

    @staticmethod
    def mle(y):
        y = np.asarray(y, dtype=float)
        sd = float(np.std(y))
        if len(np.unique(y)) < 2 or sd < SIGMA_FLOOR:
            sd = SIGMA_FLOOR
        return np.array([float(np.mean(y)), math.log(sd)])

    @staticmethod
    def to_dist(theta) -> Gaussian:
        return Gaussian(float(theta[0]), max(math.exp(float(theta[1])), SIGMA_FLOOR))

    @staticmethod
    def check_targets(y):
        if not np.all(np.isfinite(y)):
            raise ValueError("targets must be finite")


class ExponentialFamily:
    """Vectorised Exponential scoring in ``theta = (log scale,)``."""

    name = "exponential"
    n_params = 1

    @staticmethod
    def nll(theta, y):
        log_s = theta[..., 0]
        return log_s + y * np.exp(-log_s)

    @staticmethod
    def grad(theta, y):
        return (1.0 - y * np.exp(-theta[..., 0]))[..., None]

    @staticmethod
    def fisher(theta):
        theta = np.asarray(theta, dtype=float)
        return np.ones(theta.shape[:-1] + (1, 1))

    @staticmethod
    def natural_grad(theta, y):
        return ExponentialFamily.grad(theta, y)

    @staticmethod
    def mle(y):
        return np.array([math.log(float(np.mean(y)))])

    @staticmethod
    def to_dist(theta) -> Exponential:
        return Exponential(math.exp(float(theta[0])))

    @staticmethod
    def check_targets(y):
        if not np.all(np.isfinite(y)):
            raise ValueError("targets must be finite")
        if np.any(np.asarray(y) < 0):
            raise ValueError("exponential family requires non-negative targets")


FAMILIES = {"gaussian": GaussianFamily, "exponential": ExponentialFamily}


def family_of(dist):
    if isinstance(dist, Gaussian):
        return GaussianFamily
    if isinstance(dist, Exponential):
        return ExponentialFamily
    raise TypeError(f"{type(dist).__name__} is not a parametric distribution")


def _check_y(dist, y):
    if not math.isfinite(y):
        raise ValueError(f"target must be finite, got {y}")
    if isinstance(dist, Exponential) and y < 0:
        raise ValueError(f"exponential target must be non-negative, got {y}")


def nll_and_grad(dist, y: float):
    """Negative log-likelihood of ``y`` and its gradient in internal coordinates."""
    _check_y(dist, y)
    fam = family_of(dist)
    theta = dist.theta
    return float(fam.nll(theta, y)), fam.grad(theta, y)


def fisher_and_natural_grad(dist, y: float):
    _check_y(dist, y)
    fam = family_of(dist)
    theta = dist.theta
    fisher = fam.fisher(theta)
    grad = fam.grad(theta, y)
    return fisher, np.linalg.solve(fisher, grad)


def cdf(dist, y: float) -> float:
    if isinstance(dist, Gaussian):
        return float(special.ndtr((y - dist.mu) / dist.sigma))
    if isinstance(dist, Exponential):
        if y < 0:
            return 0.0
        return float(-math.expm1(-y / dist.scale))
    raise TypeError("cdf is defined for parametric distributions only")


def quantile(dist, p: float) -> float:
    if not 0.0 < p < 1.0:
        raise ValueError(f"quantile level must be in (0, 1), got {p}")
    if isinstance(dist, Gaussian):
        return dist.mu + dist.sigma * float(special.ndtri(p))
    if isinstance(dist, Exponential):
        return -dist.scale * math.log1p(-p)
    if isinstance(dist, QuantileSet):
        return float(np.interp(p, dist.levels, dist.values))
    raise TypeError(f"unsupported distribution {type(dist).__name__}")


def summary(dist) -> Tuple[float, float]:
    """Return ``(mean, median)`` of a predictive distribution."""
    if isinstance(dist, Gaussian):
        return dist.mu, dist.mu
    if isinstance(dist, Exponential):
        return dist.scale, dist.scale * math.log(2.0)
    if isinstance(dist, QuantileSet):
        has_median = dist.levels[0] <= 0.5 <= dist.levels[-1]
        if not has_median and dist.mean is None:
            raise ValueError("quantile set has neither a mean nor a level bracketing 0.5")
        median = float(np.interp(0.5, dist.levels, dist.values)) if has_median else dist.mean
        mean = dist.mean if dist.mean is not None else median
        return float(mean), float(median)
    raise TypeError(f"unsupported distribution {type(dist).__name__}")


def quantiles(dist, levels: Sequence[float]) -> np.ndarray:
    return np.array([quantile(dist, p) for p in levels])
