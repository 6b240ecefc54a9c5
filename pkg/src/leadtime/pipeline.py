"""Run configuration, fitting by model kind, and JSON persistence of fitted models."""

from __future__ import annotations

import configparser
import json
import math
from dataclasses import dataclass, field
from typing import Callable, Dict, List, Optional, Tuple

import numpy as np

from .calibration import CalibrationMap, fit_isotonic, pits, recalibrate_all
from .dataset import (
    CATEGORICAL,
    NUMERIC,
    SYNTHETIC_SCHEMA,
    Dataset,
    DesignMatrix,
    Encoder,
    FeatureSchema,
    SplitSpec,
    clean,
    holdout,
    split_and_folds,
)
from .distributions import FAMILIES, summary
from .errors import ConfigError, DataError, LeadTimeError
from .gp import SVGPConfig, SVGPModel, fit_svgp
from .metrics import LinRegModel, fit_linreg
from .ngboost import NGBoostConfig, fit_ngboost, model_from_dict, model_to_dict
from .pnn import MLPConfig, MLPModel, TrainingTrace, train_pnn
from .quantile_gb import GBConfig, QGBModel, fit_qgb
from .tree import TreeConfig

FORMAT_VERSION = 1
KINDS = ("ngboost-exp", "ngboost-normal", "pnn", "svgp", "qgb", "linreg")


# Typed config values ---------------------------------------------------------

def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"expected a boolean, got {text!r}")


def _parse_features(text: str):
    text = text.strip()
    if text == "all":
        return "all"
    value = int(text)
    if value < 1:
        raise ValueError("must be 'all' or a positive integer")
    return value


def _parse_ints(text: str) -> Tuple[int, ...]:
    return tuple(int(t) for t in text.split(",") if t.strip())


def _parse_floats(text: str) -> Tuple[float, ...]:
    return tuple(float(t) for t in text.split(",") if t.strip())


def _show(value) -> str:
    if isinstance(value, bool):
        return "true" if value else "false"
    if isinstance(value, tuple):
        return ",".join(_show(v) for v in value)
    return str(value)


@dataclass(frozen=True)
class Param:
    parse: Callable[[str], object]
    default: object


COMMON = {
    "seed": Param(int, 0),
    "test_fraction": Param(float, 0.2),
    "folds": Param(int, 3),
    "calibration": Param(_parse_bool, False),
    "calibration_fraction": Param(float, 0.2),
    "interval_low": Param(float, 0.05),
    "interval_high": Param(float, 0.95),
    "include_statusquo": Param(_parse_bool, True),
}

_NGB = {
    "n_estimators": Param(int, 500),
    "learning_rate": Param(float, 0.01),
    "max_depth": Param(int, 3),
    "min_samples_split": Param(int, 2),
    "min_samples_leaf": Param(int, 1),
    "max_features": Param(_parse_features, "all"),
    "subsample": Param(float, 1.0),
    "natural_gradient": Param(_parse_bool, True),
}

KIND_PARAMS: Dict[str, Dict[str, Param]] = {
    "ngboost-exp": _NGB,
    "ngboost-normal": _NGB,
    "pnn": {
        "hidden": Param(_parse_ints, (256, 256)),
        "l2": Param(float, 0.01),
        "learning_rate": Param(float, 1e-4),
        "epochs": Param(int, 100),
        "batch_size": Param(int, 128),
    },
    "svgp": {
        "inducing": Param(int, 100),
        "batch_size": Param(int, 1000),
        "learning_rate": Param(float, 0.01),
        "steps": Param(int, 2000),
        "train_hyperparameters": Param(_parse_bool, True),
    },
    "qgb": {
        "learning_rate": Param(float, 0.007),
        "max_depth": Param(int, 13),
        "max_features": Param(_parse_features, 3),
        "min_samples_leaf": Param(int, 5),
        "min_samples_split": Param(int, 10),
        "n_estimators": Param(int, 200),
        "subsample": Param(float, 0.65),
        "grid": Param(_parse_floats, ()),
    },
    "linreg": {
        "ridge": Param(float, 1e-8),
    },
}


@dataclass(frozen=True)
class RunConfig:
    kind: str
    values: Dict[str, object]

    def __getitem__(self, key):
        return self.values[key]

    def model_values(self) -> Dict[str, object]:
        return {k: self.values[k] for k in KIND_PARAMS[self.kind]}

    def split_spec(self) -> SplitSpec:
        return SplitSpec(self["test_fraction"], self["seed"], self["folds"])

    @property
    def nominal_level(self) -> float:
        return self["interval_high"] - self["interval_low"]

    def to_text(self) -> str:
        lines = [f"model = {self.kind}"]
        lines += [f"{k} = {_show(v)}" for k, v in self.values.items()]
        return "\n".join(lines) + "\n"

    def to_dict(self) -> dict:
        return {"model": self.kind, **{k: list(v) if isinstance(v, tuple) else v for k, v in self.values.items()}}

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        kind = d.pop("model")
        return make_config(kind, {k: _show(tuple(v) if isinstance(v, list) else v) for k, v in d.items()})


def _read_flat(text: str, what: str) -> List[Tuple[str, str]]:
    """Read ``key = value`` lines; ``#`` and ``;`` start comments."""
    parser = configparser.ConfigParser(interpolation=None, delimiters=("=",), comment_prefixes=("#", ";"))
    parser.optionxform = str
    try:
        parser.read_string("[top]\n" + text)
    except configparser.Error as exc:
        raise ConfigError(f"{what}: {exc}") from None
    return list(parser.items("top"))


def make_config(kind: str, overrides: Optional[Dict[str, str]] = None) -> RunConfig:
    if kind not in KINDS:
        raise ConfigError(f"unknown model kind {kind!r}; expected one of {', '.join(KINDS)}")
    known = {**COMMON, **KIND_PARAMS[kind]}
    values = {k: p.default for k, p in known.items()}
    for key, text in (overrides or {}).items():
        if key not in known:
            raise ConfigError(f"unknown config key {key!r} for model kind {kind!r}")
        try:
            values[key] = known[key].parse(text)
        except ValueError as exc:
            raise ConfigError(f"config key {key!r}: {exc}") from None
    _check_ranges(values)
    return RunConfig(kind, values)


def _check_ranges(v: Dict[str, object]) -> None:
    if not 0.0 < v["test_fraction"] < 1.0:
        raise ConfigError("test_fraction must be in (0, 1)")
    if not 0.0 < v["calibration_fraction"] < 1.0:
        raise ConfigError("calibration_fraction must be in (0, 1)")
    if v["folds"] < 2:
        raise ConfigError("folds must be at least 2")
    if not 0.0 < v["interval_low"] < 0.5 < v["interval_high"] < 1.0:
        raise ConfigError("interval levels must satisfy 0 < interval_low < 0.5 < interval_high < 1")


def parse_config(text: str, kind: Optional[str] = None) -> RunConfig:
    """Parse flat config text. ``kind`` (from the command line) must agree with any ``model`` key."""
    items = dict(_read_flat(text, "config"))
    file_kind = items.pop("model", None)
    if kind and file_kind and kind != file_kind:
        raise ConfigError(f"config is for model {file_kind!r} but {kind!r} was requested")
    chosen = kind or file_kind
    if not chosen:
        raise ConfigError("no model kind given")
    return make_config(chosen, items)


def load_config(path, kind: Optional[str] = None) -> RunConfig:
    try:
        with open(path, encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    return parse_config(text, kind)


def parse_schema(text: str) -> FeatureSchema:
    """Flat schema text: ``target_column``, optional ``statusquo_column``, then ``name = numeric|categorical``."""
    items = _read_flat(text, "schema")
    target, statusquo, columns = "lead_time", None, []
    for key, value in items:
        if key == "target_column":
            target = value
        elif key == "statusquo_column":
            statusquo = value or None
        elif value in (NUMERIC, CATEGORICAL):
            columns.append((key, value))
        else:
            raise ConfigError(f"schema: column {key!r} has unknown kind {value!r}")
    if not columns:
        raise ConfigError("schema lists no feature columns")
    try:
        return FeatureSchema(tuple(columns), target, statusquo)
    except ValueError as exc:
        raise ConfigError(f"schema: {exc}") from None


def schema_to_text(schema: FeatureSchema) -> str:
    lines = [f"target_column = {schema.target_column}"]
    if schema.statusquo_column:
        lines.append(f"statusquo_column = {schema.statusquo_column}")
    lines += [f"{name} = {kind}" for name, kind in schema.columns]
    return "\n".join(lines) + "\n"


def load_schema(path=None) -> FeatureSchema:
    if path is None:
        return SYNTHETIC_SCHEMA
    try:
        with open(path, encoding="utf-8") as fh:
            return parse_schema(fh.read())
    except OSError as exc:
        raise ConfigError(f"cannot read schema {path}: {exc}") from exc


# Fitted models -----------------------------------------------------------------

@dataclass
class FittedModel:
    """A fitted estimator with everything needed to score new rows."""

    config: RunConfig
    schema: FeatureSchema
    encoder: Encoder
    model: object
    calibration_map: Optional[CalibrationMap] = None
    log: List[str] = field(default_factory=list)

    @property
    def kind(self) -> str:
        return self.config.kind

    @property
    def is_point(self) -> bool:
        return self.kind == "linreg"

    def design(self, ds: Dataset) -> DesignMatrix:
        if ds.schema != self.schema:
            raise DataError("feature schema of the data does not match the model")
        return self.encoder.transform(ds)

    def raw_dists(self, X) -> list:
        if self.is_point:
            raise TypeError("linreg gives point predictions only")
        return self.model.predict_dists(X)

    def predict_dists(self, X) -> list:
        return recalibrate_all(self.raw_dists(X), self.calibration_map)

    def predict(self, X) -> np.ndarray:
        """Mean predictions."""
        if self.is_point:
            return self.model.predict(X)
        if self.kind == "qgb":
            return self.model.mean.predict(X)
        return np.array([summary(d)[0] for d in self.model.predict_dists(X)])

    def to_dict(self) -> dict:
        d = {
            "format_version": FORMAT_VERSION,
            "model_kind": self.kind,
            "config": self.config.to_dict(),
            "split": {
                "seed": self.config["seed"],
                "test_fraction": self.config["test_fraction"],
                "folds": self.config["folds"],
                "calibration": self.config["calibration"],
                "calibration_fraction": self.config["calibration_fraction"],
            },
            "schema": self.schema.to_dict(),
            "encoder_state": self.encoder.to_dict(),
            "model": _payload(self.kind, self.model),
        }
        if self.calibration_map is not None:
            d["calibration_map"] = self.calibration_map.to_dict()
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "FittedModel":
        if d.get("format_version") != FORMAT_VERSION:
            raise DataError(f"unsupported model format version {d.get('format_version')!r}")
        config = RunConfig.from_dict(d["config"])
        if config.kind != d["model_kind"]:
            raise DataError("model_kind disagrees with the stored config")
        cmap = d.get("calibration_map")
        return cls(config, FeatureSchema.from_dict(d["schema"]), Encoder.from_dict(d["encoder_state"]),
                   _unpayload(config.kind, d["model"]), CalibrationMap.from_dict(cmap) if cmap else None)


def _payload(kind: str, model) -> dict:
    if kind.startswith("ngboost"):
        return model_to_dict(model)
    return model.to_dict()


def _unpayload(kind: str, d: dict):
    if kind.startswith("ngboost"):
        return model_from_dict(d)
    return {"pnn": MLPModel, "svgp": SVGPModel, "qgb": QGBModel, "linreg": LinRegModel}[kind].from_dict(d)


def save_model(fitted: FittedModel, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(fitted.to_dict(), fh, indent=1)
        fh.write("\n")


def load_model(path) -> FittedModel:
    try:
        with open(path, encoding="utf-8") as fh:
            d = json.load(fh)
    except OSError as exc:
        raise DataError(f"cannot read model {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise DataError(f"model file {path} is not valid JSON: {exc}") from exc
    return FittedModel.from_dict(d)


# Training ----------------------------------------------------------------------

@dataclass
class Partition:
    """Rows used for fitting, for the calibration map, and for testing."""

    fit: Dataset
    calibration: Optional[Dataset]
    test: Dataset


def partition(ds: Dataset, config: RunConfig) -> Partition:
    """Clean, split off the test rows, and hold out the calibration rows when enabled."""
    cleaned, _ = clean(ds)
    split = split_and_folds(cleaned, config.split_spec())
    fit_rows, cal_rows = split.train, None
    if config["calibration"]:
        fit_rows, cal_rows = holdout(split.train, config["calibration_fraction"], config["seed"] + 1)
        if cal_rows.n == 0 or fit_rows.n == 0:
            raise DataError("too few rows to hold out a calibration split")
    return Partition(fit_rows, cal_rows, split.test)


def _tree_config(v) -> TreeConfig:
    return TreeConfig(v["max_depth"], v["min_samples_split"], v["min_samples_leaf"], v["max_features"])


def estimator_config(config: RunConfig):
    """The module-level config object for ``config.kind``; bad values raise ConfigError."""
    v, kind, seed = config.values, config.kind, config["seed"]
    try:
        if kind.startswith("ngboost"):
            family = "exponential" if kind == "ngboost-exp" else "gaussian"
            return NGBoostConfig(family, v["n_estimators"], v["learning_rate"], _tree_config(v),
                                 v["subsample"], v["natural_gradient"])
        if kind == "pnn":
            return MLPConfig(v["hidden"], v["l2"], v["learning_rate"], v["epochs"], v["batch_size"], seed)
        if kind == "svgp":
            return SVGPConfig(v["inducing"], v["batch_size"], v["learning_rate"], v["steps"], seed,
                              v["train_hyperparameters"])
        if kind == "qgb":
            return GBConfig("squared", None, v["learning_rate"], v["n_estimators"], v["subsample"], _tree_config(v))
        if kind == "linreg":
            if not v["ridge"] > 0:
                raise ValueError("ridge must be positive")
            return None
    except ValueError as exc:
        if isinstance(exc, LeadTimeError):
            raise
        raise ConfigError(f"{kind}: {exc}") from None
    raise ConfigError(f"unknown model kind {kind!r}")


def fit_kind(config: RunConfig, dm: DesignMatrix):
    """Fit the estimator selected by ``config.kind``; returns (model, log lines)."""
    v, kind, seed = config.values, config.kind, config["seed"]
    cfg = estimator_config(config)
    if kind.startswith("ngboost"):
        try:
            FAMILIES[cfg.family].check_targets(dm.y)
        except ValueError as exc:
            raise DataError(str(exc)) from None
        model = fit_ngboost(dm, cfg, seed)
        return model, [f"train NLL {model.train_nll[0]:.4f} -> {model.train_nll[-1]:.4f} "
                       f"over {len(model.stages)} stages"]
    if kind == "pnn":
        trace = TrainingTrace()
        model = train_pnn(dm, cfg, trace)
        if trace.epoch_loss:
            return model, [f"train loss {trace.epoch_loss[0]:.4f} -> {trace.epoch_loss[-1]:.4f} "
                           f"over {len(trace.epoch_loss)} epochs"]
        return model, []
    if kind == "svgp":
        model = fit_svgp(dm, cfg)
        tail = model.elbo_trace[-min(50, len(model.elbo_trace)):] if model.elbo_trace else []
        return model, [f"minibatch ELBO (last {len(tail)} steps mean) {np.mean(tail):.4f}"] if tail else []
    if kind == "qgb":
        model = fit_qgb(dm, config["interval_low"], config["interval_high"], cfg, seed, v["grid"] or None)
        return model, [f"fitted {len(model.quantile_models())} quantile models and a mean model"]
    if kind == "linreg":
        model = fit_linreg(dm, v["ridge"])
        resid = dm.y - model.predict(dm.X)
        return model, [f"train RMSE {math.sqrt(float(np.mean(resid ** 2))):.4f}"]
    raise ConfigError(f"unknown model kind {kind!r}")


def fit_calibration(fitted: FittedModel, cal: Dataset) -> CalibrationMap:
    if fitted.is_point:
        raise ConfigError("linreg has no predictive distribution to recalibrate")
    dm = fitted.design(cal)
    return fit_isotonic(pits(fitted.raw_dists(dm.X), dm.y))


def train(ds: Dataset, config: RunConfig) -> FittedModel:
    estimator_config(config)
    parts = partition(ds, config)
    encoder = Encoder.fit(parts.fit, include_statusquo=config["include_statusquo"])
    dm = encoder.transform(parts.fit)
    model, log = fit_kind(config, dm)
    fitted = FittedModel(config, ds.schema, encoder, model, log=list(encoder.warnings) + log)
    if parts.calibration is not None and not fitted.is_point:
        fitted.calibration_map = fit_calibration(fitted, parts.calibration)
        fitted.log.append(f"calibration map fit on {parts.calibration.n} held-out rows")
    return fitted
