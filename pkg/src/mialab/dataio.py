"""Tabular data loading and preprocessing into the numeric sample space.

CSV files are comma separated with a header row; an empty string marks a
missing cell. A schema assigns every column a kind (numeric/categorical)
and a role (feature/label/split-attribute/ignored). Preprocessing imputes
missing cells, one-hot encodes categorical features, min-max scales numeric
features to [0, 1], and drops duplicate rows keeping one random copy.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from .errors import CsvParseError, PreprocessError, SchemaError

KINDS = ("numeric", "categorical")
ROLES = ("feature", "label", "split-attribute", "ignored")

RawTable = list[dict[str, "str | None"]]


@dataclass(frozen=True)
class Column:
    name: str
    kind: str
    role: str = "feature"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.role not in ROLES:
            raise SchemaError(f"column {self.name!r}: unknown role {self.role!r}")


@dataclass(frozen=True)
class Schema:
    columns: tuple[Column, ...]
    label_classes: int

    def __post_init__(self):
        names = [c.name for c in self.columns]
        if len(set(names)) != len(names):
            dup = sorted({n for n in names if names.count(n) > 1})
            raise SchemaError(f"duplicate column names: {dup}")
        labels = [c for c in self.columns if c.role == "label"]
        if len(labels) != 1:
            raise SchemaError(f"schema needs exactly one label column, found {len(labels)}")
        split = [c for c in self.columns if c.role == "split-attribute"]
        if len(split) > 1:
            raise SchemaError(f"schema allows at most one split-attribute column, found {len(split)}")
        if self.label_classes < 2:
            raise SchemaError(f"label_classes must be >= 2, got {self.label_classes}")

    @property
    def label_column(self) -> Column:
        return next(c for c in self.columns if c.role == "label")

    @property
    def split_attribute_column(self) -> "Column | None":
        return next((c for c in self.columns if c.role == "split-attribute"), None)

    @property
    def feature_columns(self) -> tuple[Column, ...]:
        return tuple(c for c in self.columns if c.role == "feature")

    @classmethod
    def from_json(cls, obj: dict) -> "Schema":
        try:
            columns = tuple(
                Column(c["name"], c["kind"], c.get("role", "feature")) for c in obj["columns"]
            )
            return cls(columns=columns, label_classes=int(obj["label_classes"]))
        except (KeyError, TypeError) as exc:
            raise SchemaError(f"malformed schema document: {exc}") from exc

    @classmethod
    def from_json_file(cls, path: "str | Path") -> "Schema":
        path = Path(path)
        if not path.is_file():
            raise SchemaError(f"no such schema file: {path}")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise SchemaError(f"{path.name}: invalid JSON: {exc}") from exc
        return cls.from_json(doc)

    def to_json(self) -> dict:
        return {
            "columns": [{"name": c.name, "kind": c.kind, "role": c.role} for c in self.columns],
            "label_classes": self.label_classes,
        }


class Sample:
    """One data point: an encoded feature vector, a class index, and the
    raw split-attribute value (kept out of the features on purpose)."""

    __slots__ = ("features", "label", "attribute")

    def __init__(self, features, label: int, attribute: "str | None" = None):
        arr = np.array(features, dtype=np.float64, copy=True)
        if arr.ndim != 1:
            raise PreprocessError(f"sample features must be a vector, got shape {arr.shape}")
        arr.flags.writeable = False
        object.__setattr__(self, "features", arr)
        object.__setattr__(self, "label", int(label))
        object.__setattr__(self, "attribute", attribute)

    def __setattr__(self, name, value):
        raise AttributeError("Sample is immutable")

    def __reduce__(self):
        return (Sample, (np.array(self.features), self.label, self.attribute))

    def key(self) -> tuple:
        return (self.features.tobytes(), self.label)

    def __eq__(self, other):
        return isinstance(other, Sample) and self.key() == other.key()

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Sample(label={self.label}, dim={self.features.shape[0]}, attribute={self.attribute!r})"


@dataclass(frozen=True)
class Dataset:
    schema: Schema
    samples: tuple[Sample, ...]
    provenance: str = ""

    def __post_init__(self):
        if not self.samples:
            raise PreprocessError("dataset is empty")
        width = self.samples[0].features.shape[0]
        if width == 0:
            raise PreprocessError("zero-width feature space")
        for s in self.samples:
            if s.features.shape[0] != width:
                raise PreprocessError(
                    f"inconsistent feature width: {s.features.shape[0]} != {width}"
                )
            if not np.all(np.isfinite(s.features)):
                raise PreprocessError("non-finite feature value")
        keys = {s.key() for s in self.samples}
        if len(keys) != len(self.samples):
            raise PreprocessError("dataset contains duplicate (features, label) rows")

    @property
    def feature_width(self) -> int:
        return self.samples[0].features.shape[0]

    def features_matrix(self) -> np.ndarray:
        return np.stack([s.features for s in self.samples])

    def labels(self) -> np.ndarray:
        return np.array([s.label for s in self.samples], dtype=np.int64)

    def classes(self) -> list[int]:
        return sorted({s.label for s in self.samples})

    def samples_of_class(self, label: int) -> list[Sample]:
        return [s for s in self.samples if s.label == label]

    def attribute_values(self) -> list[str]:
        return sorted({s.attribute for s in self.samples if s.attribute is not None})


def load_csv(path: "str | Path", schema: Schema) -> RawTable:
    """Read a CSV file whose header matches the schema's column names.

    Missing cells (empty strings) come back as None. Row order is preserved.
    """
    path = Path(path)
    if not path.is_file():
        raise CsvParseError(f"no such file: {path}")
    expected = {c.name for c in schema.columns}
    rows: RawTable = []
    with open(path, newline="", encoding="utf-8-sig") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise CsvParseError("file is empty", row=1) from None
        except csv.Error as exc:
            raise CsvParseError(str(exc), row=1) from exc
        got = set(header)
        if len(got) != len(header):
            raise SchemaError(f"{path.name}: duplicate header columns")
        unknown = sorted(got - expected)
        missing = sorted(expected - got)
        if unknown:
            raise SchemaError(f"{path.name}: unknown column(s) {unknown}")
        if missing:
            raise SchemaError(f"{path.name}: header is missing column(s) {missing}")
        try:
            for lineno, row in enumerate(reader, start=2):
                if not row:
                    continue
                if len(row) != len(header):
                    raise CsvParseError(
                        f"expected {len(header)} cells, got {len(row)}", row=lineno
                    )
                rows.append(
                    {name: (cell if cell != "" else None) for name, cell in zip(header, row)}
                )
        except csv.Error as exc:
            raise CsvParseError(str(exc), row=reader.line_num) from exc
    return rows


def _parse_numeric(value: str, column: str, row: int) -> float:
    try:
        return float(value)
    except ValueError:
        raise PreprocessError(
            f"column {column!r}, row {row}: cannot parse {value!r} as a number"
        ) from None


def _mode_first_seen(values: Sequence[str]) -> str:
    # Ties broken by first appearance, for determinism.
    counts: dict[str, int] = {}
    for v in values:
        counts[v] = counts.get(v, 0) + 1
    best = max(counts.values())
    return next(v for v in counts if counts[v] == best)


class TabularEncoder:
    """Fit/transform encoder from raw CSV rows to numeric arrays.

    fit() learns imputation values (column mean or mode), min/max ranges,
    one-hot category vocabularies, and the label index mapping. transform()
    applies them, returning (features, labels, attributes). Unknown
    categories or labels at transform time are rejected.
    """

    def __init__(self, schema: Schema):
        self.schema = schema
        self._fitted = False

    def fit(self, raw: RawTable) -> "TabularEncoder":
        if not raw:
            raise PreprocessError("cannot fit on an empty table")
        self.numeric_stats_: dict[str, tuple[float, float, float]] = {}
        self.categories_: dict[str, list[str]] = {}
        self.modes_: dict[str, str] = {}
        for col in self.schema.feature_columns:
            observed = [r[col.name] for r in raw if r[col.name] is not None]
            if not observed:
                raise PreprocessError(f"column {col.name!r}: all values are missing")
            if col.kind == "numeric":
                values = [
                    _parse_numeric(v, col.name, i)
                    for i, v in enumerate(
                        (r[col.name] for r in raw if r[col.name] is not None), start=1
                    )
                ]
                self.numeric_stats_[col.name] = (
                    float(np.mean(values)),
                    float(min(values)),
                    float(max(values)),
                )
            else:
                self.categories_[col.name] = sorted(set(observed))
                self.modes_[col.name] = _mode_first_seen(observed)
        label_col = self.schema.label_column
        observed_labels = [r[label_col.name] for r in raw if r[label_col.name] is not None]
        if len(observed_labels) != len(raw):
            raise PreprocessError(f"label column {label_col.name!r} has missing values")
        if label_col.kind == "numeric":
            distinct = sorted({float(v) for v in observed_labels})
            self.label_map_ = {repr(v): i for i, v in enumerate(distinct)}
            self._label_key = lambda v: repr(float(v))
        else:
            distinct = sorted(set(observed_labels))
            self.label_map_ = {v: i for i, v in enumerate(distinct)}
            self._label_key = lambda v: v
        if len(self.label_map_) > self.schema.label_classes:
            raise PreprocessError(
                f"found {len(self.label_map_)} distinct labels, schema allows "
                f"{self.schema.label_classes}"
            )
        split_col = self.schema.split_attribute_column
        if split_col is not None:
            observed = [r[split_col.name] for r in raw if r[split_col.name] is not None]
            if not observed:
                raise PreprocessError(f"column {split_col.name!r}: all values are missing")
            self.modes_[split_col.name] = _mode_first_seen(observed)
        self.feature_names_ = self._output_names()
        self._fitted = True
        return self

    def _output_names(self) -> list[str]:
        names = []
        for col in self.schema.feature_columns:
            if col.kind == "numeric":
                names.append(col.name)
            else:
                names.extend(f"{col.name}={v}" for v in self.categories_[col.name])
        return names

    @property
    def width(self) -> int:
        return len(self.feature_names_)

    def transform(self, raw: RawTable) -> tuple[np.ndarray, np.ndarray, list]:
        if not self._fitted:
            raise PreprocessError("encoder is not fitted")
        n = len(raw)
        X = np.zeros((n, self.width))
        y = np.zeros(n, dtype=np.int64)
        attrs: list = [None] * n
        split_col = self.schema.split_attribute_column
        label_col = self.schema.label_column
        for i, row in enumerate(raw):
            pos = 0
            for col in self.schema.feature_columns:
                cell = row[col.name]
                if col.kind == "numeric":
                    mean, lo, hi = self.numeric_stats_[col.name]
                    v = mean if cell is None else _parse_numeric(cell, col.name, i + 1)
                    X[i, pos] = 0.0 if hi == lo else (v - lo) / (hi - lo)
                    pos += 1
                else:
                    cats = self.categories_[col.name]
                    v = self.modes_[col.name] if cell is None else cell
                    if v not in cats:
                        raise PreprocessError(
                            f"column {col.name!r}, row {i + 1}: unseen category {v!r}"
                        )
                    X[i, pos + cats.index(v)] = 1.0
                    pos += len(cats)
            cell = row[label_col.name]
            if cell is None:
                raise PreprocessError(f"label column, row {i + 1}: missing value")
            key = self._label_key(cell)
            if key not in self.label_map_:
                raise PreprocessError(f"label column, row {i + 1}: unseen label {cell!r}")
            y[i] = self.label_map_[key]
            if split_col is not None:
                cell = row[split_col.name]
                attrs[i] = self.modes_[split_col.name] if cell is None else cell
        return X, y, attrs

    def fit_transform(self, raw: RawTable) -> tuple[np.ndarray, np.ndarray, list]:
        return self.fit(raw).transform(raw)


def preprocess(raw: RawTable, schema: Schema, seed: int, provenance: str = "") -> Dataset:
    """Encode a raw table into a Dataset.

    Numeric missing cells get the column mean, categorical ones the column
    mode; categorical features are one-hot encoded and numeric features
    min-max scaled to [0, 1] (constant columns map to 0). Duplicate
    (features, label) rows collapse to a single copy chosen uniformly at
    random with the given seed. The split-attribute column is carried as
    per-sample metadata and never enters the features.
    """
    if not raw:
        raise PreprocessError("cannot preprocess an empty table")
    if not schema.feature_columns:
        raise PreprocessError("zero-width feature space: schema has no feature columns")
    encoder = TabularEncoder(schema)
    X, y, attrs = encoder.fit_transform(raw)
    rng = np.random.default_rng(seed)
    groups: dict[tuple, list[int]] = {}
    for i in range(len(raw)):
        groups.setdefault((X[i].tobytes(), int(y[i])), []).append(i)
    survivors = sorted(
        idx[int(rng.integers(len(idx)))] if len(idx) > 1 else idx[0] for idx in groups.values()
    )
    samples = tuple(Sample(X[i], int(y[i]), attrs[i]) for i in survivors)
    return Dataset(schema=schema, samples=samples, provenance=provenance)
