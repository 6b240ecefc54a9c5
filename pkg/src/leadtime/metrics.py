"""Point metrics, interval coverage, the OLS baseline and the comparison report."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from typing import Dict, List, Mapping, Optional

import numpy as np
from scipy.linalg import cho_factor, cho_solve

from .calibration import CURVE_LEVELS, CalibrationCurve, calibration_curve, calibration_error, pits
from .distributions import quantile, summary
from .errors import DataError

REPORT_COLUMNS = ("model", "r2_mean", "mape_mean", "r2_median", "mape_median", "calibration_error", "coverage")


def r2(y, yhat) -> float:
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError("y and yhat must be nonempty and equally long")
    ss_tot = np.sum((y - y.mean()) ** 2)
    if ss_tot == 0:
        raise ValueError("R^2 is undefined for constant targets")
    return float(1.0 - np.sum((y - yhat) ** 2) / ss_tot)


def mape(y, yhat) -> float:
    """Mean absolute percentage error, in percent."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    if y.shape != yhat.shape or y.size == 0:
        raise ValueError("y and yhat must be nonempty and equally long")
    if np.any(y == 0):
        raise ValueError("MAPE is undefined when a target is zero")
    return float(100.0 * np.mean(np.abs(y - yhat) / np.abs(y)))


def interval_coverage(y, lowers, uppers) -> float:
    y, lo, hi = (np.asarray(a, dtype=float) for a in (y, lowers, uppers))
    if not (y.shape == lo.shape == hi.shape):
        raise ValueError("y, lowers and uppers must be equally long")
    if np.any(lo > hi):
        raise ValueError("interval bounds cross")
    return float(np.mean((lo <= y) & (y <= hi)))


@dataclass
class LinRegModel:
    coefficients: np.ndarray
    intercept: float
    ridge: float = 1e-8

    def predict(self, X) -> np.ndarray:
        return np.asarray(X, dtype=float) @ self.coefficients + self.intercept

    def to_dict(self) -> dict:
        return {"coefficients": self.coefficients.tolist(), "intercept": self.intercept, "ridge": self.ridge}

    @classmethod
    def from_dict(cls, d: dict) -> "LinRegModel":
        return cls(np.asarray(d["coefficients"], dtype=float), d["intercept"], d["ridge"])


def fit_linreg(dm, ridge: float = 1e-8) -> LinRegModel:
    """Least squares with a tiny ridge on the slopes (not the intercept)."""
    X = np.asarray(dm.X, dtype=float)
    y = np.asarray(dm.y, dtype=float)
    x_mean, y_mean = X.mean(axis=0), y.mean()
    Xc = X - x_mean
    gram = Xc.T @ Xc + ridge * np.eye(X.shape[1])
    beta = cho_solve(cho_factor(gram, lower=True), Xc.T @ (y - y_mean))
    return LinRegModel(beta, float(y_mean - x_mean @ beta), ridge)


@dataclass
class ReportRow:
    model: str
    r2_mean: Optional[float] = None
    mape_mean: Optional[float] = None
    r2_median: Optional[float] = None
    mape_median: Optional[float] = None
    calibration_error: Optional[float] = None
    coverage: Optional[float] = None

    def cells(self) -> List[Optional[float]]:
        return [getattr(self, c) for c in REPORT_COLUMNS[1:]]


@dataclass
class MetricsReport:
    rows: List[ReportRow]
    n_test: int
    nominal_level: float
    curves: Dict[str, CalibrationCurve] = field(default_factory=dict)

    def row(self, name: str) -> ReportRow:
        for r in self.rows:
            if r.model == name:
                return r
        raise KeyError(name)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(REPORT_COLUMNS)
        for r in self.rows:
            w.writerow([r.model] + ["" if v is None else repr(float(v)) for v in r.cells()])
        return buf.getvalue()

    def to_text(self) -> str:
        header = list(REPORT_COLUMNS)
        body = [[r.model] + ["N/A" if v is None else f"{v:.4f}" for v in r.cells()] for r in self.rows]
        widths = [max(len(str(row[i])) for row in [header] + body) for i in range(len(header))]
        lines = ["  ".join(str(c).ljust(widths[i]) if i == 0 else str(c).rjust(widths[i])
                           for i, c in enumerate(row)) for row in [header] + body]
        lines.insert(1, "-" * len(lines[0]))
        lines.append(f"n_test={self.n_test}  nominal interval level={self.nominal_level:g}")
        return "\n".join(lines) + "\n"


def interval_bounds(dists, level: float):
    lo_p, hi_p = (1.0 - level) / 2.0, (1.0 + level) / 2.0
    lo = np.array([quantile(d, lo_p) for d in dists])
    hi = np.array([quantile(d, hi_p) for d in dists])
    return lo, hi


def distribution_row(name: str, y, dists, nominal_level: float, levels=CURVE_LEVELS):
    """Report row and calibration curve for a model with predictive distributions."""
    stats = np.array([summary(d) for d in dists])
    curve = calibration_curve(pits(dists, y), levels)
    lo, hi = interval_bounds(dists, nominal_level)
    row = ReportRow(
        name,
        r2(y, stats[:, 0]), mape(y, stats[:, 0]),
        r2(y, stats[:, 1]), mape(y, stats[:, 1]),
        calibration_error(curve), interval_coverage(y, lo, hi),
    )
    return row, curve


def point_row(name: str, y, yhat) -> ReportRow:
    return ReportRow(name, r2(y, yhat), mape(y, yhat))


def build_report(models: Mapping[str, object], dm, nominal_level: float = 0.9,
                 statusquo: bool = True, levels=CURVE_LEVELS) -> MetricsReport:
    """Score each predictor on ``dm``.

    A predictor exposing ``predict_dists`` gets the full row; one exposing only
    ``predict`` gets mean-prediction cells, as does the status-quo column.
    """
    y = np.asarray(dm.y, dtype=float)
    rows, curves = [], {}
    for name, model in models.items():
        if hasattr(model, "predict_dists") and not getattr(model, "is_point", False):
            row, curve = distribution_row(name, y, model.predict_dists(dm.X), nominal_level, levels)
            curves[name] = curve
        else:
            row = point_row(name, y, model.predict(dm.X))
        rows.append(row)
    if statusquo:
        if dm.statusquo is None:
            raise DataError("status-quo row requested but the data has no status-quo column")
        rows.append(point_row("status_quo", y, dm.statusquo))
    return MetricsReport(rows, len(y), nominal_level, curves)
