"""Natural gradient boosting for parametric predictive distributions."""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Tuple

import numpy as np

from .distributions import FAMILIES
from .errors import NumericalError
from .tree import RegressionTree, TreeConfig, fit_tree

LINE_SEARCH_GRID = 2.0 ** -np.arange(11)


@dataclass(frozen=True)
class NGBoostConfig:
    family: str = "exponential"
    n_estimators: int = 500
    learning_rate: float = 0.01
    tree: TreeConfig = TreeConfig(max_depth=3, min_samples_split=2, min_samples_leaf=1, max_features="all")
    subsample: float = 1.0
    natural_gradient: bool = True

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ValueError(f"unknown family {self.family!r}")
        if not 0.0 < self.learning_rate <= 1.0:
            raise ValueError("learning_rate must be in (0, 1]")
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")


@dataclass
class Stage:
    trees: Tuple[RegressionTree, ...]
    rho: float

    def output(self, X) -> np.ndarray:
        return np.column_stack([t.predict(X) for t in self.trees])


@dataclass
class NGBoostModel:
    family: str
    theta0: np.ndarray
    learning_rate: float
    n_features: int
    stages: List[Stage] = field(default_factory=list)
    train_nll: List[float] = field(default_factory=list)

    @property
    def dist_family(self):
        return FAMILIES[self.family]

    def _check(self, X):
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        if X.shape[1] != self.n_features:
            raise ValueError(f"expected {self.n_features} features, got {X.shape[1]}")
        return X

    def predict_theta(self, X, n_stages=None) -> np.ndarray:
        X = self._check(X)
        theta = np.tile(self.theta0, (X.shape[0], 1))
        for stage in self.stages[:n_stages]:
            theta += self.learning_rate * stage.rho * stage.output(X)
        return theta

    def predict_dists(self, X) -> list:
        fam = self.dist_family
        return [fam.to_dist(row) for row in self.predict_theta(X)]

    def predict_dist(self, x):
        return self.predict_dists(np.asarray(x, dtype=float)[None, :])[0]


def marginal_mle(family: str, y) -> np.ndarray:
    fam = FAMILIES[family]
    y = np.asarray(y, dtype=float)
    if y.size == 0:
        raise ValueError("need at least one target")
    fam.check_targets(y)
    return fam.mle(y)


def line_search(theta, direction, family: str, y) -> float:
    """Pick the step from ``{1, 1/2, ..., 1/1024}`` minimising total NLL.

    Falls back to the smallest step when no grid value beats the current NLL.
    """
    fam = FAMILIES[family]
    theta = np.asarray(theta, dtype=float)
    direction = np.asarray(direction, dtype=float)
    if not np.all(np.isfinite(direction)):
        raise NumericalError("line search direction is not finite")
    current = fam.nll(theta, y).sum()
    losses = np.array([fam.nll(theta + rho * direction, y).sum() for rho in LINE_SEARCH_GRID])
    best = int(np.argmin(losses))
    if not losses[best] < current:
        return float(LINE_SEARCH_GRID[-1])
    return float(LINE_SEARCH_GRID[best])


def fit_ngboost(dm, config: NGBoostConfig = NGBoostConfig(), seed: int = 0) -> NGBoostModel:
    X = np.ascontiguousarray(dm.X, dtype=float)
    y = np.asarray(dm.y, dtype=float)
    fam = FAMILIES[config.family]
    theta0 = marginal_mle(config.family, y)
    model = NGBoostModel(config.family, theta0, config.learning_rate, X.shape[1])
    rng = np.random.default_rng(seed)
    n = len(y)
    theta = np.tile(theta0, (n, 1))
    model.train_nll.append(float(fam.nll(theta, y).mean()))
    n_sub = max(1, int(round(config.subsample * n)))

    for m in range(config.n_estimators):
        if n_sub < n:
            rows = np.sort(rng.choice(n, size=n_sub, replace=False))
        else:
            rows = np.arange(n)
        if config.natural_gradient:
            step = -fam.natural_grad(theta[rows], y[rows])
        else:
            step = -fam.grad(theta[rows], y[rows])
        if not np.all(np.isfinite(step)):
            raise NumericalError(f"non-finite gradient at boosting stage {m}")
        trees = tuple(fit_tree(X[rows], step[:, k], config.tree, rng) for k in range(fam.n_params))
        stage = Stage(trees, 1.0)
        direction = stage.output(X)
        stage.rho = line_search(theta[rows], direction[rows], config.family, y[rows])
        theta = theta + config.learning_rate * stage.rho * direction
        loss = float(fam.nll(theta, y).mean())
        if not np.isfinite(loss):
            raise NumericalError(f"non-finite NLL at boosting stage {m}")
        model.stages.append(stage)
        model.train_nll.append(loss)
    return model


def stage_to_dict(stage: Stage) -> dict:
    return {"rho": stage.rho, "trees": [t.to_dict() for t in stage.trees]}


def model_to_dict(model: NGBoostModel) -> dict:
    return {
        "family": model.family,
        "theta0": model.theta0.tolist(),
        "learning_rate": model.learning_rate,
        "n_features": model.n_features,
        "stages": [stage_to_dict(s) for s in model.stages],
    }


def model_from_dict(d: dict) -> NGBoostModel:
    stages = [Stage(tuple(RegressionTree.from_dict(t) for t in s["trees"]), s["rho"]) for s in d["stages"]]
    return NGBoostModel(d["family"], np.asarray(d["theta0"], dtype=float), d["learning_rate"],
                        d["n_features"], stages)
