"""PIT values, calibration curves, and isotonic recalibration of predictive CDFs."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .distributions import Exponential, Gaussian, QuantileSet, cdf, quantile, summary

CURVE_LEVELS = tuple(np.round(np.arange(1, 20) * 0.05, 10))
RECAL_GRID = tuple(np.round(np.arange(1, 100) * 0.01, 10))
_EDGE = 1e-9


def pit(dist, y: float) -> float:
    """Predicted CDF at the realised value."""
    if isinstance(dist, (Gaussian, Exponential)):
        return cdf(dist, y)
    if isinstance(dist, QuantileSet):
        levels, values = dist.levels, dist.values
        if len(levels) < 2:
            raise ValueError("PIT of a quantile set needs at least two levels")
        if y <= values[0]:
            return float(levels[0])
        if y >= values[-1]:
            return float(levels[-1])
        j = int(np.searchsorted(values, y, side="right"))
        i = j - 1
        frac = (y - values[i]) / (values[j] - values[i])
        return float(levels[i] + frac * (levels[j] - levels[i]))
    raise TypeError(f"unsupported distribution {type(dist).__name__}")


def pits(dists, y) -> np.ndarray:
    return np.array([pit(d, float(v)) for d, v in zip(dists, y)])


@dataclass(frozen=True)
class CalibrationCurve:
    levels: tuple
    empirical: tuple
    n_eval: int

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["level", "empirical"])
        for p, e in zip(self.levels, self.empirical):
            w.writerow([repr(float(p)), repr(float(e))])
        return buf.getvalue()


def calibration_curve(pit_values, levels: Sequence[float] = CURVE_LEVELS) -> CalibrationCurve:
    u = np.asarray(pit_values, dtype=float)
    if u.size == 0:
        raise ValueError("need at least one PIT value")
    levels = np.asarray(levels, dtype=float)
    if np.any(np.diff(levels) <= 0):
        raise ValueError("levels must be strictly increasing")
    counts = (u[None, :] <= levels[:, None]).sum(axis=1)
    return CalibrationCurve(tuple(levels.tolist()), tuple((counts / u.size).tolist()), int(u.size))


def calibration_error(curve: CalibrationCurve) -> float:
    """Mean absolute gap between empirical frequency and nominal level."""
    return float(np.mean(np.abs(np.asarray(curve.empirical) - np.asarray(curve.levels))))


def pool_adjacent_violators(y, weights=None) -> np.ndarray:
    """Weighted least-squares non-decreasing fit to ``y``."""
    y = np.asarray(y, dtype=float)
    w = np.ones_like(y) if weights is None else np.asarray(weights, dtype=float)
    means, wsum, sizes = [], [], []
    for yi, wi in zip(y, w):
        means.append(yi)
        wsum.append(wi)
        sizes.append(1)
        while len(means) > 1 and means[-2] > means[-1]:
            m2, w2, s2 = means.pop(), wsum.pop(), sizes.pop()
            total = wsum[-1] + w2
            means[-1] = (means[-1] * wsum[-1] + m2 * w2) / total
            wsum[-1] = total
            sizes[-1] += s2
    return np.repeat(means, sizes)


@dataclass(frozen=True)
class CalibrationMap:
    """Non-decreasing piecewise-linear map on [0, 1] with f(0)=0 and f(1)=1."""

    x: tuple
    y: tuple

    def __call__(self, p):
        return np.interp(p, self.x, self.y)

    def inverse(self, q: float) -> float:
        """Smallest input whose output reaches ``q``."""
        xs, ys = np.asarray(self.x), np.asarray(self.y)
        k = int(np.searchsorted(ys, q, side="left"))
        if k == 0:
            return float(xs[0])
        if k >= len(ys):
            return float(xs[-1])
        frac = (q - ys[k - 1]) / (ys[k] - ys[k - 1])
        return float(xs[k - 1] + frac * (xs[k] - xs[k - 1]))

    def to_dict(self) -> dict:
        return {"x": list(self.x), "y": list(self.y)}

    @classmethod
    def from_dict(cls, d: dict) -> "CalibrationMap":
        return cls(tuple(d["x"]), tuple(d["y"]))

    @classmethod
    def identity(cls) -> "CalibrationMap":
        return cls((0.0, 1.0), (0.0, 1.0))


def fit_isotonic(pit_values) -> CalibrationMap:
    """Isotonic fit of the empirical CDF of the PITs against the predicted level."""
    u = np.sort(np.asarray(pit_values, dtype=float))
    n = u.size
    if n == 0:
        raise ValueError("need at least one PIT value")
    target = np.arange(1, n + 1) / n
    xs, first, counts = np.unique(u, return_index=True, return_counts=True)
    ys = np.add.reduceat(target, first) / counts
    fitted = pool_adjacent_violators(ys, counts)
    inside = (xs > 0.0) & (xs < 1.0)
    x = np.concatenate([[0.0], xs[inside], [1.0]])
    y = np.concatenate([[0.0], np.clip(fitted[inside], 0.0, 1.0), [1.0]])
    return CalibrationMap(tuple(x.tolist()), tuple(y.tolist()))


def recalibrate(dist, cmap: CalibrationMap, grid: Sequence[float] = RECAL_GRID) -> QuantileSet:
    """Quantiles of the recalibrated CDF ``cmap(F(y))`` at the grid levels."""
    raw_levels = [min(max(cmap.inverse(p), _EDGE), 1.0 - _EDGE) for p in grid]
    values = [quantile(dist, lv) for lv in raw_levels]
    if isinstance(dist, QuantileSet):
        mean = dist.mean
    else:
        mean = summary(dist)[0]
    return QuantileSet(tuple(float(p) for p in grid), tuple(float(v) for v in values), mean)


def recalibrate_all(dists, cmap: Optional[CalibrationMap]):
    if cmap is None:
        return list(dists)
    return [recalibrate(d, cmap) for d in dists]
