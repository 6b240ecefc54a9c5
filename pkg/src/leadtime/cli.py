"""Command-line entry point: generate, train, predict, evaluate, calibrate, calib-curve."""

from __future__ import annotations

import argparse
import csv
import io
import os
import sys
from typing import Dict, List, Optional, Sequence

import numpy as np

from .calibration import calibration_curve, pits
from .dataset import Dataset, clean, load_csv, simulate, split_and_folds
from .distributions import QuantileSet, quantiles, summary
from .errors import ConfigError, DataError, LeadTimeError, NumericalError
from .metrics import MetricsReport, build_report
from .pipeline import (
    KINDS,
    FittedModel,
    fit_calibration,
    load_config,
    load_model,
    load_schema,
    make_config,
    partition,
    save_model,
    train,
)
from .plotting import reliability_diagram

EXIT_USAGE, EXIT_DATA, EXIT_NUMERICAL = 1, 2, 3
PREDICT_LEVELS = (0.05, 0.5, 0.95)


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise ConfigError(f"{self.prog}: {message}")


def _write_text(path, text: str) -> None:
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


# generate ------------------------------------------------------------------------

def cmd_generate(args) -> int:
    draw = simulate(args.n, args.seed, args.contamination)
    _write_text(args.out, draw.to_dataset().to_csv())
    print(f"wrote {args.n} rows to {args.out}")
    print(f"target mean {draw.target.mean():.4f}; contaminated rows {int(draw.contaminated.sum())}")
    return 0


# train -----------------------------------------------------------------------------

def cmd_train(args) -> int:
    if args.config:
        config = load_config(args.config, args.model)
    elif args.model:
        config = make_config(args.model)
    else:
        raise ConfigError("train needs --model or a --config naming the model")
    if args.seed is not None:
        values = dict(config.values, seed=args.seed)
        config = type(config)(config.kind, values)
    schema = load_schema(args.schema)
    ds = load_csv(args.data, schema)
    print("configuration:")
    for line in config.to_text().splitlines():
        print(f"  {line}")
    fitted = train(ds, config)
    for line in fitted.log:
        print(line)
    save_model(fitted, args.out)
    print(f"saved {config.kind} model to {args.out}")
    return 0


# predict ---------------------------------------------------------------------------

def prediction_rows(fitted: FittedModel, X) -> List[list]:
    """One CSV row per input: mean, median, q05, q50, q95, kind, then parameters."""
    if fitted.is_point:
        return [[repr(float(m)), "", "", "", "", "point"] for m in fitted.predict(X)]
    rows = []
    for d in fitted.predict_dists(X):
        mean, median = summary(d)
        qs = quantiles(d, PREDICT_LEVELS)
        params = d.params()
        if isinstance(d, QuantileSet):
            flat = [f"{lv!r}:{v!r}" for lv, v in zip(d.levels, d.values)]
        else:
            flat = [f"{k}={float(v)!r}" for k, v in params.items()]
        rows.append([repr(float(mean)), repr(float(median))] + [repr(float(q)) for q in qs] + [d.kind] + flat)
    return rows


def cmd_predict(args) -> int:
    fitted = load_model(args.model)
    ds = load_csv(args.data, fitted.schema, require_target=False)
    dm = fitted.design(ds)
    if not np.all(np.isfinite(dm.X)):
        raise DataError("prediction input has missing or non-numeric feature values")
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["mean", "median", "q05", "q50", "q95", "dist_kind", "dist_params"])
    w.writerows(prediction_rows(fitted, dm.X))
    _write_text(args.out, buf.getvalue())
    print(f"wrote {ds.n} predictions to {args.out}")
    return 0


# evaluate ----------------------------------------------------------------------------

def _split_key(fitted: FittedModel):
    c = fitted.config
    return c["seed"], c["test_fraction"], c["folds"]


def held_out_rows(fitted: FittedModel, ds: Dataset) -> Dataset:
    """The test split recorded with the model, rebuilt from the persisted seed."""
    cleaned, _ = clean(ds)
    return split_and_folds(cleaned, fitted.config.split_spec()).test


def model_names(models: Sequence[FittedModel], paths: Sequence[str]) -> List[str]:
    kinds = [m.kind for m in models]
    names = []
    for m, p in zip(models, paths):
        if kinds.count(m.kind) == 1:
            names.append(m.kind)
        else:
            names.append(os.path.splitext(os.path.basename(p))[0])
    if len(set(names)) != len(names):
        raise ConfigError("model names in the report would collide; rename the model files")
    return names


def evaluate_models(models: Dict[str, object], test: Dataset, encoder_of: Dict[str, FittedModel],
                    nominal_level: float, statusquo: bool = True) -> MetricsReport:
    """Score each model on ``test`` using its own encoder.

    ``models`` maps report names to predictors (fitted models or any object with
    ``predict_dists``/``predict`` taking the encoded matrix).
    """
    encoded = {}
    for name in models:
        encoded[name] = encoder_of[name].design(test)

    class _Routed:
        def __init__(self, name):
            self.name = name
            self.model = models[name]
            self.is_point = getattr(self.model, "is_point", False)

        def predict_dists(self, _X):
            return self.model.predict_dists(encoded[self.name].X)

        def predict(self, _X):
            return self.model.predict(encoded[self.name].X)

    first = next(iter(encoded.values()))
    routed = {name: _Routed(name) for name in models}
    return build_report(routed, first, nominal_level, statusquo)


def _quartile_subsets(test: Dataset) -> List[Dataset]:
    y = test.targets()
    edges = np.quantile(y, [0.25, 0.5, 0.75])
    group = np.searchsorted(edges, y, side="left")
    return [test.subset(np.flatnonzero(group == q)) for q in range(4)]


def cmd_evaluate(args) -> int:
    fitted = [load_model(p) for p in args.model]
    keys = {_split_key(f) for f in fitted}
    if len(keys) != 1:
        raise ConfigError("models were trained with different split settings; evaluate them separately")
    schema = fitted[0].schema
    if any(f.schema != schema for f in fitted):
        raise DataError("models disagree on the feature schema")
    ds = load_csv(args.data, schema)
    test = held_out_rows(fitted[0], ds)
    names = model_names(fitted, args.model)
    by_name = dict(zip(names, fitted))
    level = args.level if args.level is not None else fitted[0].config.nominal_level
    use_sq = bool(schema.statusquo_column) and not args.no_statusquo
    report = evaluate_models(by_name, test, by_name, level, use_sq)

    stem = os.path.splitext(args.out)[0]
    _write_text(args.out, report.to_csv())
    for name, curve in report.curves.items():
        _write_text(f"{stem}_curve_{name}.csv", curve.to_csv())
    if report.curves:
        reliability_diagram(report.curves, f"{stem}_reliability.svg")
    print(report.to_text(), end="")
    if args.by_quartile:
        for q, part in enumerate(_quartile_subsets(test), start=1):
            if part.n < 2:
                continue
            sub = evaluate_models(by_name, part, by_name, level, use_sq)
            _write_text(f"{stem}_q{q}.csv", sub.to_csv())
            print(f"\ntarget quartile {q}")
            print(sub.to_text(), end="")
    print(f"wrote report to {args.out}")
    return 0


# calibration ---------------------------------------------------------------------------

def cmd_calibrate(args) -> int:
    fitted = load_model(args.model)
    if args.calibration_data:
        cal, _ = clean(load_csv(args.calibration_data, fitted.schema))
    else:
        if not fitted.config["calibration"]:
            raise ConfigError("model was trained without a calibration split; "
                              "retrain with calibration = true or pass --calibration-data")
        cal = partition(load_csv(args.data, fitted.schema), fitted.config).calibration
    fitted.calibration_map = fit_calibration(fitted, cal)
    save_model(fitted, args.out)
    print(f"fit calibration map on {cal.n} rows; saved to {args.out}")
    return 0


def cmd_calib_curve(args) -> int:
    fitted = load_model(args.model)
    if fitted.is_point:
        raise ConfigError("linreg has no predictive distribution")
    ds = load_csv(args.data, fitted.schema)
    dm = fitted.design(held_out_rows(fitted, ds))
    dists = fitted.raw_dists(dm.X) if args.raw else fitted.predict_dists(dm.X)
    curve = calibration_curve(pits(dists, dm.y))
    _write_text(args.out, curve.to_csv())
    if args.svg:
        reliability_diagram({fitted.kind: curve}, args.svg)
    print(f"wrote {len(curve.levels)}-level curve over {curve.n_eval} test rows to {args.out}")
    return 0


# entry point ---------------------------------------------------------------------------

def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="leadtime", description="Probabilistic lead-time regression.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("generate", help="write a synthetic lead-time CSV")
    p.add_argument("--n", type=int, default=8000)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--contamination", type=float, default=0.03)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_generate)

    p = sub.add_parser("train", help="fit a model and save it as JSON")
    p.add_argument("--model", choices=KINDS)
    p.add_argument("--data", required=True)
    p.add_argument("--config")
    p.add_argument("--schema", help="flat schema file; defaults to the synthetic layout")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("predict", help="per-row predictive summaries")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_predict)

    p = sub.add_parser("evaluate", help="metrics report, calibration curves and reliability diagram")
    p.add_argument("--model", required=True, action="append", help="model file; repeat for several")
    p.add_argument("--data", required=True)
    p.add_argument("--level", type=float, help="nominal interval level (default from the first model)")
    p.add_argument("--by-quartile", action="store_true", help="also report per target quartile")
    p.add_argument("--no-statusquo", action="store_true")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_evaluate)

    p = sub.add_parser("calibrate", help="fit an isotonic calibration map")
    p.add_argument("--model", required=True)
    p.add_argument("--data", help="training data; the stored calibration split is used")
    p.add_argument("--calibration-data", help="separate held-out rows to fit the map on")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calibrate)

    p = sub.add_parser("calib-curve", help="calibration curve on the test split")
    p.add_argument("--model", required=True)
    p.add_argument("--data", required=True)
    p.add_argument("--raw", action="store_true", help="ignore any stored calibration map")
    p.add_argument("--svg")
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_calib_curve)
    return parser


def main(argv: Optional[Sequence[str]] = None) -> int:
    try:
        args = build_parser().parse_args(argv)
        if args.command == "calibrate" and not (args.data or args.calibration_data):
            raise ConfigError("calibrate needs --data or --calibration-data")
        return args.func(args)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (DataError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (NumericalError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except LeadTimeError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
