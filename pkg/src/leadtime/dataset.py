"""Lead-time tables: loading, cleaning, encoding, splitting and simulation."""

from __future__ import annotations

import csv
import io
import math
import warnings
from dataclasses import dataclass, field
from typing import Dict, List, Optional, Sequence, Tuple, Union

import numpy as np

from .errors import DataError

NUMERIC = "numeric"
CATEGORICAL = "categorical"

Value = Union[float, str, None]


@dataclass(frozen=True)
class FeatureSchema:
    columns: Tuple[Tuple[str, str], ...]
    target_column: str = "lead_time"
    statusquo_column: Optional[str] = None

    def __post_init__(self):
        names = [name for name, _ in self.columns]
        if len(set(names)) != len(names):
            raise ValueError("feature column names must be unique")
        for name, kind in self.columns:
            if kind not in (NUMERIC, CATEGORICAL):
                raise ValueError(f"column {name!r}: unknown kind {kind!r}")
        reserved = {self.target_column, self.statusquo_column} - {None}
        clash = reserved.intersection(names)
        if clash:
            raise ValueError(f"target/status-quo columns listed as features: {sorted(clash)}")

    @property
    def names(self) -> List[str]:
        return [name for name, _ in self.columns]

    @property
    def numeric(self) -> List[str]:
        return [name for name, kind in self.columns if kind == NUMERIC]

    @property
    def categorical(self) -> List[str]:
        return [name for name, kind in self.columns if kind == CATEGORICAL]

    def required(self) -> List[str]:
        cols = self.names + [self.target_column]
        if self.statusquo_column:
            cols.append(self.statusquo_column)
        return cols

    def to_dict(self) -> dict:
        return {
            "columns": [list(c) for c in self.columns],
            "target_column": self.target_column,
            "statusquo_column": self.statusquo_column,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "FeatureSchema":
        return cls(tuple(tuple(c) for c in d["columns"]), d["target_column"], d.get("statusquo_column"))


SYNTHETIC_SCHEMA = FeatureSchema(
    columns=(
        ("material", CATEGORICAL),
        ("thickness", NUMERIC),
        ("gas", CATEGORICAL),
        ("width", NUMERIC),
        ("height", NUMERIC),
        ("area", NUMERIC),
        ("cut_length", NUMERIC),
        ("holes", NUMERIC),
    ),
    target_column="lead_time",
    statusquo_column="statusquo",
)


@dataclass(frozen=True)
class Sample:
    features: Dict[str, Value]
    target: Optional[float]
    statusquo: Optional[float] = None


@dataclass(frozen=True)
class Dataset:
    schema: FeatureSchema
    rows: Tuple[Sample, ...]

    @property
    def n(self) -> int:
        return len(self.rows)

    def __len__(self):
        return len(self.rows)

    def subset(self, index: Sequence[int]) -> "Dataset":
        return Dataset(self.schema, tuple(self.rows[i] for i in index))

    def targets(self) -> np.ndarray:
        return np.array([r.target for r in self.rows], dtype=float)

    def statusquo(self) -> Optional[np.ndarray]:
        if not self.schema.statusquo_column:
            return None
        return np.array([r.statusquo for r in self.rows], dtype=float)

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(self.schema.required())
        for r in self.rows:
            cells = [_fmt(r.features[c]) for c in self.schema.names] + [_fmt(r.target)]
            if self.schema.statusquo_column:
                cells.append(_fmt(r.statusquo))
            writer.writerow(cells)
        return buf.getvalue()


def _fmt(v: Value) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_number(cell: str, column: str, row: int) -> Optional[float]:
    cell = cell.strip()
    if cell == "":
        return None
    try:
        return float(cell)
    except ValueError:
        raise DataError(f"row {row}: column {column!r}: cannot parse {cell!r} as a number") from None


def read_csv(text: str, schema: FeatureSchema, require_target: bool = True) -> Dataset:
    """Parse CSV text. Data rows are numbered from 1, matching a spreadsheet view.

    With ``require_target=False`` the target column may be absent (prediction
    inputs); its values are then ``None``.
    """
    reader = csv.reader(io.StringIO(text))
    try:
        header = [h.strip() for h in next(reader)]
    except StopIteration:
        raise DataError("empty CSV file") from None
    needed = [c for c in schema.required() if require_target or c != schema.target_column]
    missing = [c for c in needed if c not in header]
    if missing:
        raise DataError(f"missing required column(s): {', '.join(missing)}")
    pos = {name: header.index(name) for name in schema.required() if name in header}
    kinds = dict(schema.columns)
    rows = []
    for i, cells in enumerate(reader, start=1):
        if not cells:
            continue
        if len(cells) < len(header):
            cells = cells + [""] * (len(header) - len(cells))
        feats: Dict[str, Value] = {}
        for name in schema.names:
            raw = cells[pos[name]]
            if kinds[name] == NUMERIC:
                feats[name] = _parse_number(raw, name, i)
            else:
                feats[name] = raw.strip() or None
        target = None
        if schema.target_column in pos:
            target = _parse_number(cells[pos[schema.target_column]], schema.target_column, i)
        sq = None
        if schema.statusquo_column:
            sq = _parse_number(cells[pos[schema.statusquo_column]], schema.statusquo_column, i)
        rows.append(Sample(feats, target, sq))
    return Dataset(schema, tuple(rows))


def load_csv(path, schema: FeatureSchema, require_target: bool = True) -> Dataset:
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            text = fh.read()
    except OSError as exc:
        raise DataError(f"cannot read {path}: {exc}") from exc
    return read_csv(text, schema, require_target)


@dataclass(frozen=True)
class CleanReport:
    nonpositive_target: int = 0
    missing_value: int = 0

    @property
    def removed(self) -> int:
        return self.nonpositive_target + self.missing_value

    def is_empty(self) -> bool:
        return self.removed == 0


def _has_missing(row: Sample, schema: FeatureSchema) -> bool:
    if any(v is None or (isinstance(v, float) and math.isnan(v)) for v in row.features.values()):
        return True
    if row.target is None or math.isnan(row.target):
        return True
    if schema.statusquo_column and (row.statusquo is None or math.isnan(row.statusquo)):
        return True
    return False


def clean(ds: Dataset) -> Tuple[Dataset, CleanReport]:
    """Drop rows with a missing value or a non-positive target.

    Very long lead times are kept: they are genuine, if unexplained.
    """
    kept, n_missing, n_zero = [], 0, 0
    for row in ds.rows:
        if _has_missing(row, ds.schema):
            n_missing += 1
        elif not row.target > 0:
            n_zero += 1
        else:
            kept.append(row)
    if not kept:
        raise DataError("no rows left after cleaning")
    return Dataset(ds.schema, tuple(kept)), CleanReport(n_zero, n_missing)


@dataclass
class DesignMatrix:
    X: np.ndarray
    y: np.ndarray
    feature_names: List[str]
    encoder_state: dict
    statusquo: Optional[np.ndarray] = None

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]


@dataclass
class Encoder:
    """Train-fitted standardiser and one-hot vocabulary."""

    numeric: List[str]
    means: List[float]
    scales: List[float]
    categorical: List[str]
    vocab: Dict[str, List[str]]
    include_statusquo: bool = False
    statusquo_column: Optional[str] = None
    warnings: List[str] = field(default_factory=list)

    @classmethod
    def fit(cls, ds: Dataset, include_statusquo: bool = True) -> "Encoder":
        if ds.n == 0:
            raise DataError("cannot fit an encoder on an empty dataset")
        schema = ds.schema
        numeric = list(schema.numeric)
        use_sq = bool(include_statusquo and schema.statusquo_column)
        means, scales, notes = [], [], []
        for name in numeric + ([schema.statusquo_column] if use_sq else []):
            col = _numeric_column(ds, name)
            mu, sd = float(col.mean()), float(col.std())
            if sd == 0.0:
                notes.append(f"column {name!r} has zero variance; scale set to 1")
                sd = 1.0
            means.append(mu)
            scales.append(sd)
        vocab = {name: sorted({str(r.features[name]) for r in ds.rows}) for name in schema.categorical}
        for note in notes:
            warnings.warn(note)
        return cls(numeric, means, scales, list(schema.categorical), vocab, use_sq, schema.statusquo_column, notes)

    @property
    def feature_names(self) -> List[str]:
        names = list(self.numeric)
        if self.include_statusquo:
            names.append(self.statusquo_column)
        for name in self.categorical:
            names.extend(f"{name}={level}" for level in self.vocab[name])
        return names

    def transform(self, ds: Dataset) -> DesignMatrix:
        blocks = []
        num_cols = self.numeric + ([self.statusquo_column] if self.include_statusquo else [])
        if num_cols:
            raw = np.column_stack([_numeric_column(ds, c) for c in num_cols])
            blocks.append((raw - np.array(self.means)) / np.array(self.scales))
        for name in self.categorical:
            levels = self.vocab[name]
            index = {lv: j for j, lv in enumerate(levels)}
            block = np.zeros((ds.n, len(levels)))
            for i, row in enumerate(ds.rows):
                j = index.get(str(row.features[name]))
                if j is not None:
                    block[i, j] = 1.0
            blocks.append(block)
        X = np.hstack(blocks) if blocks else np.zeros((ds.n, 0))
        return DesignMatrix(X, ds.targets(), self.feature_names, self.to_dict(), ds.statusquo())

    def to_dict(self) -> dict:
        return {
            "numeric": self.numeric,
            "means": self.means,
            "scales": self.scales,
            "categorical": self.categorical,
            "vocab": self.vocab,
            "include_statusquo": self.include_statusquo,
            "statusquo_column": self.statusquo_column,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "Encoder":
        return cls(d["numeric"], d["means"], d["scales"], d["categorical"], d["vocab"],
                   d.get("include_statusquo", False), d.get("statusquo_column"))


def _numeric_column(ds: Dataset, name: str) -> np.ndarray:
    if name == ds.schema.statusquo_column:
        return np.array([r.statusquo for r in ds.rows], dtype=float)
    return np.array([r.features[name] for r in ds.rows], dtype=float)


def encode(train: Dataset, others: Sequence[Dataset] = (), include_statusquo: bool = True):
    """Fit the encoder on ``train`` and apply it to ``train`` and each of ``others``."""
    enc = Encoder.fit(train, include_statusquo=include_statusquo)
    return enc.transform(train), [enc.transform(o) for o in others]


@dataclass(frozen=True)
class SplitSpec:
    test_fraction: float = 0.2
    seed: int = 0
    fold_count: int = 3

    def __post_init__(self):
        if not 0.0 < self.test_fraction < 1.0:
            raise ValueError(f"test fraction must be in (0, 1), got {self.test_fraction}")
        if self.fold_count < 2:
            raise ValueError("fold_count must be at least 2")


@dataclass(frozen=True)
class Split:
    train: Dataset
    test: Dataset
    train_index: np.ndarray
    test_index: np.ndarray
    fold_of: np.ndarray

    def folds(self):
        """Yield ``(fit_positions, validation_positions)`` into ``train``."""
        for k in range(int(self.fold_of.max()) + 1):
            yield np.flatnonzero(self.fold_of != k), np.flatnonzero(self.fold_of == k)


def split_and_folds(ds: Dataset, spec: SplitSpec) -> Split:
    n = ds.n
    if n < spec.fold_count / (1.0 - spec.test_fraction):
        raise DataError(f"{n} rows are too few for a {spec.fold_count}-fold split")
    rng = np.random.default_rng(spec.seed)
    perm = rng.permutation(n)
    n_test = int(round(n * spec.test_fraction))
    test_idx, train_idx = perm[:n_test], perm[n_test:]
    fold_of = np.arange(len(train_idx)) % spec.fold_count
    return Split(ds.subset(train_idx), ds.subset(test_idx), train_idx, test_idx, fold_of)


def holdout(ds: Dataset, fraction: float, seed: int) -> Tuple[Dataset, Dataset]:
    """Seeded random split of ``ds`` into (kept, held_out)."""
    rng = np.random.default_rng(seed)
    perm = rng.permutation(ds.n)
    n_out = int(round(ds.n * fraction))
    return ds.subset(np.sort(perm[n_out:])), ds.subset(np.sort(perm[:n_out]))


# Synthetic generator ---------------------------------------------------------

MEAN_SCALE = 4.16
MATERIAL_SHIFT = {"steel": 0.0, "stainless": 0.15, "aluminum": -0.15}
GASES = ("O2", "N2")


@dataclass
class SyntheticDraw:
    """A simulated batch together with its latent truth."""

    columns: Dict[str, np.ndarray]
    scale: np.ndarray
    contaminated: np.ndarray
    target: np.ndarray
    statusquo: np.ndarray

    def to_dataset(self) -> Dataset:
        names = SYNTHETIC_SCHEMA.names
        kinds = dict(SYNTHETIC_SCHEMA.columns)
        rows = []
        for i in range(len(self.target)):
            feats = {}
            for name in names:
                v = self.columns[name][i]
                feats[name] = str(v) if kinds[name] == CATEGORICAL else float(v)
            rows.append(Sample(feats, float(self.target[i]), float(self.statusquo[i])))
        return Dataset(SYNTHETIC_SCHEMA, tuple(rows))


def _zscore(x):
    sd = x.std()
    return (x - x.mean()) / sd if sd > 0 else np.zeros_like(x)


def simulate(n: int, seed: int, contamination: float = 0.03) -> SyntheticDraw:
    if n < 1:
        raise ValueError("n must be at least 1")
    if not 0.0 <= contamination <= 1.0:
        raise ValueError("contamination must be a fraction")
    rng = np.random.default_rng(seed)
    thickness = rng.uniform(0.5, 25.0, n)
    holes = rng.poisson(8, n).astype(float)
    cut_length = rng.lognormal(math.log(500.0), 0.6, n)
    width = rng.uniform(10.0, 1000.0, n)
    height = rng.uniform(10.0, 1000.0, n)
    material = np.array(list(MATERIAL_SHIFT))[rng.integers(0, 3, n)]
    gas = np.array(GASES)[rng.integers(0, 2, n)]

    shift = np.array([MATERIAL_SHIFT[m] for m in material])
    raw = np.exp(0.4 * _zscore(np.log(cut_length)) + 0.3 * _zscore(holes) + 0.2 * _zscore(thickness) + shift)
    scale = MEAN_SCALE * raw / raw.mean()

    base = rng.exponential(scale)
    contaminated = rng.random(n) < contamination
    factor = rng.uniform(3.0, 8.0, n)
    target = np.where(contaminated, base * factor, base)
    # a rule-based estimate knows the expected process time, never the realised draw
    statusquo = np.maximum(scale * np.exp(rng.normal(0.0, 0.45, n)), 0.1)

    columns = {
        "material": material,
        "thickness": thickness,
        "gas": gas,
        "width": width,
        "height": height,
        "area": width * height,
        "cut_length": cut_length,
        "holes": holes,
    }
    return SyntheticDraw(columns, scale, contaminated, target, statusquo)


def generate_synthetic(n: int, seed: int, contamination: float = 0.03) -> Dataset:
    return simulate(n, seed, contamination).to_dataset()
