"""Gradient boosted trees under squared and pinball loss, and the Q-GB composite.

The composite fits separate boosted models for a lower quantile, the median,
the mean and an upper quantile, optionally plus a grid of extra quantile
levels used to draw a full calibration curve.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional, Sequence

import numpy as np

from .distributions import QuantileSet
from .errors import NumericalError
from .tree import RegressionTree, TreeConfig, fit_tree

DEFAULT_TREE = TreeConfig(max_depth=13, min_samples_split=10, min_samples_leaf=5, max_features=3)


@dataclass(frozen=True)
class GBConfig:
    loss: str = "squared"  # or "pinball"
    alpha: Optional[float] = None
    learning_rate: float = 0.007
    n_estimators: int = 200
    subsample: float = 0.65
    tree: TreeConfig = DEFAULT_TREE

    def __post_init__(self):
        if self.loss not in ("squared", "pinball"):
            raise ValueError(f"unknown loss {self.loss!r}")
        if self.loss == "pinball" and not (self.alpha is not None and 0.0 < self.alpha < 1.0):
            raise ValueError("pinball loss needs alpha in (0, 1)")
        if not 0.0 < self.subsample <= 1.0:
            raise ValueError("subsample must be in (0, 1]")
        if self.n_estimators < 0:
            raise ValueError("n_estimators must be >= 0")

    def with_loss(self, loss: str, alpha: Optional[float] = None) -> "GBConfig":
        return replace(self, loss=loss, alpha=alpha)


@dataclass
class GBModel:
    init_value: float
    learning_rate: float
    loss: str
    alpha: Optional[float]
    trees: List[RegressionTree] = field(default_factory=list)

    def predict(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=float)
        if X.ndim == 1:
            X = X[None, :]
        out = np.full(X.shape[0], self.init_value)
        for t in self.trees:
            out += self.learning_rate * t.predict(X)
        return out

    def to_dict(self) -> dict:
        return {
            "init_value": self.init_value,
            "learning_rate": self.learning_rate,
            "loss": self.loss,
            "alpha": self.alpha,
            "trees": [t.to_dict() for t in self.trees],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "GBModel":
        return cls(d["init_value"], d["learning_rate"], d["loss"], d["alpha"],
                   [RegressionTree.from_dict(t) for t in d["trees"]])

    def __eq__(self, other):
        if not isinstance(other, GBModel):
            return NotImplemented
        return (self.init_value == other.init_value and self.learning_rate == other.learning_rate
                and self.loss == other.loss and self.alpha == other.alpha
                and len(self.trees) == len(other.trees)
                and all(a == b for a, b in zip(self.trees, other.trees)))


def pinball_loss(alpha: float, y, q):
    """Quantile loss; works elementwise on arrays."""
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must be in (0, 1)")
    diff = np.asarray(y, dtype=float) - np.asarray(q, dtype=float)
    out = np.where(diff >= 0, alpha * diff, (alpha - 1.0) * diff)
    return float(out) if out.ndim == 0 else out


def pseudo_residuals(loss: str, alpha: Optional[float], y, F) -> np.ndarray:
    if loss == "squared":
        return y - F
    # zero exactly at y == F
    return np.where(y > F, alpha, np.where(y < F, alpha - 1.0, 0.0))


def _refit_leaves(tree: RegressionTree, leaf_of, residual, alpha) -> RegressionTree:
    values = tree.value.copy()
    order = np.argsort(leaf_of, kind="stable")
    leaves, starts = np.unique(leaf_of[order], return_index=True)
    bounds = np.append(starts, len(order))
    for leaf, lo, hi in zip(leaves, bounds[:-1], bounds[1:]):
        values[leaf] = np.quantile(residual[order[lo:hi]], alpha, method="inverted_cdf")
    return tree.with_leaf_values(values)


def fit_gb(dm, config: GBConfig = GBConfig(), seed: int = 0) -> GBModel:
    X = np.ascontiguousarray(dm.X, dtype=float)
    y = np.asarray(dm.y, dtype=float)
    n = len(y)
    if config.loss == "squared":
        init = float(np.mean(y))
    else:
        init = float(np.quantile(y, config.alpha))
    model = GBModel(init, config.learning_rate, config.loss, config.alpha)
    rng = np.random.default_rng(seed)
    F = np.full(n, init)
    n_sub = max(1, int(round(config.subsample * n)))
    for m in range(config.n_estimators):
        rows = np.sort(rng.permutation(n)[:n_sub]) if n_sub < n else np.arange(n)
        resid = pseudo_residuals(config.loss, config.alpha, y[rows], F[rows])
        tree = fit_tree(X[rows], resid, config.tree, rng)
        if config.loss == "pinball":
            tree = _refit_leaves(tree, tree.apply(X[rows]), y[rows] - F[rows], config.alpha)
        # squared loss: CART leaf means already equal the mean residual
        step = tree.predict(X)
        if not np.all(np.isfinite(step)):
            raise NumericalError(f"non-finite tree output at boosting stage {m}")
        F += config.learning_rate * step
        model.trees.append(tree)
    return model


@dataclass
class QGBModel:
    lower: GBModel
    median: GBModel
    mean: GBModel
    upper: GBModel
    levels: tuple
    grid: Dict[float, GBModel] = field(default_factory=dict)

    def quantile_models(self) -> Dict[float, GBModel]:
        models = dict(self.grid)
        models[self.levels[0]] = self.lower
        models[0.5] = self.median
        models[self.levels[1]] = self.upper
        return dict(sorted(models.items()))

    def predict_raw(self, X):
        """Unrepaired quantile matrix (rows x levels), level list and mean vector."""
        models = self.quantile_models()
        levels = list(models)
        Q = np.column_stack([m.predict(X) for m in models.values()])
        return Q, levels, self.mean.predict(X)

    def predict_dists(self, X) -> List[QuantileSet]:
        Q, levels, mean = self.predict_raw(X)
        Q = repair(Q)
        lv = tuple(float(v) for v in levels)
        return [QuantileSet(lv, tuple(float(v) for v in row), float(mu)) for row, mu in zip(Q, mean)]

    def predict_dist(self, x) -> QuantileSet:
        return self.predict_dists(np.asarray(x, dtype=float)[None, :])[0]

    def to_dict(self) -> dict:
        return {
            "levels": list(self.levels),
            "lower": self.lower.to_dict(),
            "median": self.median.to_dict(),
            "mean": self.mean.to_dict(),
            "upper": self.upper.to_dict(),
            "grid": [[lv, m.to_dict()] for lv, m in sorted(self.grid.items())],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "QGBModel":
        return cls(GBModel.from_dict(d["lower"]), GBModel.from_dict(d["median"]),
                   GBModel.from_dict(d["mean"]), GBModel.from_dict(d["upper"]),
                   tuple(d["levels"]), {lv: GBModel.from_dict(m) for lv, m in d["grid"]})


def repair(values) -> np.ndarray:
    """Monotone rearrangement of predicted quantiles; rows are sorted independently."""
    return np.sort(np.asarray(values, dtype=float), axis=-1)


def fit_qgb(dm, alpha_low: float = 0.05, alpha_high: float = 0.95, config: GBConfig = GBConfig(),
            seed: int = 0, grid: Optional[Sequence[float]] = None) -> QGBModel:
    if not 0.0 < alpha_low < 0.5 < alpha_high < 1.0:
        raise ValueError("interval levels must satisfy 0 < low < 0.5 < high < 1")
    lower = fit_gb(dm, config.with_loss("pinball", alpha_low), seed)
    median = fit_gb(dm, config.with_loss("pinball", 0.5), seed)
    mean = fit_gb(dm, config.with_loss("squared"), seed)
    upper = fit_gb(dm, config.with_loss("pinball", alpha_high), seed)
    fitted = {alpha_low: lower, 0.5: median, alpha_high: upper}
    extra = {}
    for lv in grid or ():
        lv = round(float(lv), 10)
        extra[lv] = fitted[lv] if lv in fitted else fit_gb(dm, config.with_loss("pinball", lv), seed)
    return QGBModel(lower, median, mean, upper, (alpha_low, alpha_high), extra)
