"""Dataset container, CSV ingestion and covariate transforms.

Covariates are held as a float matrix.  Binary columns are coded 0/1 and
categorical columns carry integer level codes (first-appearance order); the
level dictionaries live in :class:`ScalingRecord` so new points can be mapped
the same way.
"""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    ConfigError,
    DataError,
    DegenerateColumnError,
    ParseError,
    SchemaError,
)

KINDS = ("continuous", "binary", "categorical")
DIRECTIONS = ("increasing", "decreasing", "antichain", "none")
MISSING = {"", "na", "nan", "null", "none"}


@dataclass(frozen=True)
class ColumnSpec:
    name: str
    kind: str = "continuous"
    direction: str = "increasing"

    def __post_init__(self):
        if self.kind not in KINDS:
            raise SchemaError(f"column {self.name!r}: unknown kind {self.kind!r}")
        if self.direction not in DIRECTIONS:
            raise SchemaError(
                f"column {self.name!r}: unknown direction {self.direction!r}"
            )
        if self.direction == "antichain" and self.kind == "continuous":
            raise SchemaError(
                f"column {self.name!r}: antichain direction requires a binary "
                "or categorical column"
            )

    @property
    def selectable(self) -> bool:
        return self.direction != "none"

    @classmethod
    def from_dict(cls, d: dict) -> "ColumnSpec":
        try:
            return cls(
                name=d["name"],
                kind=d.get("kind", "continuous"),
                direction=d.get("direction", "increasing"),
            )
        except KeyError as exc:
            raise SchemaError(f"column spec lacks field {exc}") from None

    def to_dict(self) -> dict:
        return {"name": self.name, "kind": self.kind, "direction": self.direction}


@dataclass(frozen=True)
class Dataset:
    columns: tuple[ColumnSpec, ...]
    X: np.ndarray
    y: np.ndarray
    t: np.ndarray | None = None
    response_name: str = "y"
    treatment_name: str | None = None

    def __post_init__(self):
        X = np.asarray(self.X, dtype=float)
        if X.ndim == 1:
            X = X.reshape(-1, 1)
        y = np.asarray(self.y, dtype=float).reshape(-1)
        object.__setattr__(self, "X", X)
        object.__setattr__(self, "y", y)
        object.__setattr__(self, "columns", tuple(self.columns))
        if X.shape[1] != len(self.columns):
            raise DataError(
                f"X has {X.shape[1]} columns but {len(self.columns)} specs given"
            )
        if len(self.columns) < 1:
            raise DataError("dataset needs at least one covariate column")
        if y.shape[0] != X.shape[0]:
            raise DataError("response length differs from number of rows")
        if self.t is not None:
            t = np.asarray(self.t, dtype=float).reshape(-1)
            if t.shape[0] != X.shape[0]:
                raise DataError("treatment length differs from number of rows")
            if not np.all((t == 0) | (t == 1)):
                raise DataError("treatment must be coded 0/1")
            object.__setattr__(self, "t", t)
        if not (np.all(np.isfinite(X)) and np.all(np.isfinite(y))):
            raise DataError("missing or non-finite values in dataset")

    @property
    def n(self) -> int:
        return self.X.shape[0]

    @property
    def d(self) -> int:
        return self.X.shape[1]

    @property
    def names(self) -> list[str]:
        return [c.name for c in self.columns]

    def column_index(self, name: str) -> int:
        try:
            return self.names.index(name)
        except ValueError:
            raise SchemaError(f"no column named {name!r}") from None

    def with_response(self, y) -> "Dataset":
        return replace(self, y=np.asarray(y, dtype=float))

    def subset(self, rows) -> "Dataset":
        rows = np.asarray(rows)
        return replace(
            self,
            X=self.X[rows],
            y=self.y[rows],
            t=None if self.t is None else self.t[rows],
        )

    def select_columns(self, names: Sequence[str]) -> "Dataset":
        idx = [self.column_index(nm) for nm in names]
        return replace(
            self, columns=tuple(self.columns[i] for i in idx), X=self.X[:, idx]
        )

    def is_binary_response(self) -> bool:
        return bool(np.all((self.y == 0) | (self.y == 1)))


@dataclass(frozen=True)
class ScalingRecord:
    """Per-column map from raw cell values into the dataset's coordinates.

    ``minmax`` holds ``(lo, hi)`` for scaled continuous columns (``None`` if the
    column was left unscaled); ``levels`` holds the level list of categorical
    columns in code order.
    """

    columns: tuple[ColumnSpec, ...]
    minmax: tuple = ()
    levels: tuple = ()

    def __post_init__(self):
        k = len(self.columns)
        if not self.minmax:
            object.__setattr__(self, "minmax", (None,) * k)
        if not self.levels:
            object.__setattr__(self, "levels", (None,) * k)

    def with_minmax(self, minmax) -> "ScalingRecord":
        return replace(self, minmax=tuple(minmax))

    def encode_cell(self, j: int, raw: str, row=None):
        col = self.columns[j]
        text = raw.strip()
        if text.lower() in MISSING:
            raise DataError(f"row {row}, column {col.name!r}: missing value")
        if col.kind == "categorical":
            levels = self.levels[j] or ()
            if text not in levels:
                raise ParseError(f"unseen level {text!r}", row, col.name)
            return float(levels.index(text))
        try:
            value = float(text)
        except ValueError:
            raise ParseError(f"cannot parse {text!r} as number", row, col.name) from None
        if col.kind == "binary" and value not in (0.0, 1.0):
            raise ParseError(f"binary column holds {text!r}", row, col.name)
        return value

    def transform(self, X: np.ndarray) -> np.ndarray:
        """Apply the stored min-max maps to a raw-coded matrix."""
        X = np.array(X, dtype=float, copy=True)
        for j, mm in enumerate(self.minmax):
            if mm is not None:
                lo, hi = mm
                X[:, j] = (X[:, j] - lo) / (hi - lo)
        return X

    def encode_rows(self, rows: Iterable[dict]) -> np.ndarray:
        out = []
        for r, row in enumerate(rows, start=2):
            vals = []
            for j, col in enumerate(self.columns):
                if col.name not in row:
                    raise SchemaError(f"missing column {col.name!r}")
                vals.append(self.encode_cell(j, row[col.name], r))
            out.append(vals)
        X = np.array(out, dtype=float).reshape(len(out), len(self.columns))
        return self.transform(X)

    def to_dict(self) -> dict:
        return {
            "columns": [c.to_dict() for c in self.columns],
            "minmax": [None if m is None else list(m) for m in self.minmax],
            "levels": [None if lv is None else list(lv) for lv in self.levels],
        }

    @classmethod
    def from_dict(cls, d: dict) -> "ScalingRecord":
        return cls(
            columns=tuple(ColumnSpec.from_dict(c) for c in d["columns"]),
            minmax=tuple(None if m is None else tuple(m) for m in d["minmax"]),
            levels=tuple(None if lv is None else tuple(lv) for lv in d["levels"]),
        )


def read_schema(path) -> dict:
    """Read a schema JSON.

    Accepts either a bare list of column specs or an object with ``columns``
    and optional ``response`` / ``treatment`` keys.
    """
    with open(path, encoding="utf-8") as fh:
        try:
            doc = json.load(fh)
        except json.JSONDecodeError as exc:
            raise SchemaError(f"schema is not valid JSON: {exc}") from None
    if isinstance(doc, list):
        doc = {"columns": doc}
    if not isinstance(doc, dict) or "columns" not in doc:
        raise SchemaError("schema must list column specs under 'columns'")
    doc["columns"] = [ColumnSpec.from_dict(c) for c in doc["columns"]]
    return doc


def _read_rows(path) -> tuple[list[str], list[dict]]:
    path = Path(path)
    if not path.exists():
        raise DataError(f"no such file: {path}")
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        header = reader.fieldnames or []
        rows = list(reader)
    return header, rows


def load_csv(path, schema, response_name, treatment_name=None):
    """Read a CSV file into a :class:`Dataset`.

    Returns ``(dataset, record)``; the record carries the categorical level
    dictionaries needed to encode new points.
    """
    schema = [c if isinstance(c, ColumnSpec) else ColumnSpec.from_dict(c) for c in schema]
    header, rows = _read_rows(path)
    needed = [c.name for c in schema] + [response_name]
    if treatment_name is not None:
        needed.append(treatment_name)
    for name in needed:
        if name not in header:
            raise SchemaError(f"column {name!r} not found in {path}")

    levels = []
    for col in schema:
        if col.kind == "categorical":
            seen = {}
            for r, row in enumerate(rows, start=2):
                v = row[col.name].strip()
                if v.lower() in MISSING:
                    raise DataError(f"row {r}, column {col.name!r}: missing value")
                seen.setdefault(v, len(seen))
            levels.append(tuple(seen))
        else:
            levels.append(None)
    record = ScalingRecord(columns=tuple(schema), levels=tuple(levels))
    X = record.encode_rows(rows)

    def numeric(name):
        out = np.empty(len(rows))
        for r, row in enumerate(rows):
            text = row[name].strip()
            if text.lower() in MISSING:
                raise DataError(f"row {r + 2}, column {name!r}: missing value")
            try:
                out[r] = float(text)
            except ValueError:
                raise ParseError(f"cannot parse {text!r} as number", r + 2, name) from None
        return out

    y = numeric(response_name)
    t = None
    if treatment_name is not None:
        t = numeric(treatment_name)
        if not np.all((t == 0) | (t == 1)):
            raise DataError(f"treatment column {treatment_name!r} must be 0/1")
    ds = Dataset(
        columns=tuple(schema),
        X=X,
        y=y,
        t=t,
        response_name=response_name,
        treatment_name=treatment_name,
    )
    return ds, record


def check_binary_response(ds: Dataset):
    if not ds.is_binary_response():
        bad = ds.y[(ds.y != 0) & (ds.y != 1)][0]
        raise DataError(f"binary response holds value {bad:g}")


def minmax_scale(ds: Dataset, record: ScalingRecord | None = None):
    """Map every continuous column affinely onto [0, 1]."""
    if record is None:
        record = ScalingRecord(columns=ds.columns)
    X = ds.X.copy()
    minmax = list(record.minmax)
    for j, col in enumerate(ds.columns):
        if col.kind != "continuous":
            continue
        lo, hi = float(X[:, j].min()), float(X[:, j].max())
        if not hi > lo:
            raise DegenerateColumnError(f"continuous column {col.name!r} is constant")
        X[:, j] = (X[:, j] - lo) / (hi - lo)
        minmax[j] = (lo, hi)
    return replace(ds, X=X), record.with_minmax(minmax)


def direction_signs(columns: Sequence[ColumnSpec]) -> np.ndarray:
    """+1 / -1 per column; antichain columns must have been augmented already."""
    signs = np.ones(len(columns))
    for j, col in enumerate(columns):
        if col.direction == "none":
            raise ConfigError(f"column {col.name!r} has direction 'none'")
        if col.direction == "antichain":
            raise ConfigError(
                f"column {col.name!r} still marked antichain; run antichain_augment"
            )
        if col.direction == "decreasing":
            signs[j] = -1.0
    return signs


def apply_directions(ds: Dataset) -> Dataset:
    """Negate decreasing columns so the regression function is nondecreasing.

    Applying the map twice restores the input; it is its own back-transform.
    """
    signs = direction_signs(ds.columns)
    return replace(ds, X=ds.X * signs)


@dataclass(frozen=True)
class AntichainRecord:
    """Level-combination codes produced by :func:`antichain_augment`."""

    source: tuple[str, ...]
    codes: tuple[tuple[tuple[float, ...], int], ...]
    names: tuple[str, str]

    def code_of(self, combo) -> int:
        combo = tuple(float(v) for v in combo)
        for key, code in self.codes:
            if key == combo:
                return code
        raise DataError(f"level combination {combo} unseen during augmentation")

    def to_dict(self) -> dict:
        return {
            "source": list(self.source),
            "codes": [[list(k), c] for k, c in self.codes],
            "names": list(self.names),
        }

    @classmethod
    def from_dict(cls, d: dict) -> "AntichainRecord":
        return cls(
            source=tuple(d["source"]),
            codes=tuple((tuple(float(v) for v in k), int(c)) for k, c in d["codes"]),
            names=tuple(d["names"]),
        )


def _augment_matrix(X, idx, keep, code_fn):
    combos = X[:, idx]
    codes = np.array([code_fn(tuple(row)) for row in combos], dtype=float)
    return np.column_stack([X[:, keep], codes, -codes])


def antichain_augment(ds: Dataset, cols: Sequence[str]):
    """Replace categorical columns by the pair (code, -code).

    Distinct level combinations of ``cols`` are numbered 1..L in order of first
    appearance.  Rows with different codes are then incomparable in the
    componentwise order.  Returns ``(dataset, record)``.
    """
    cols = list(cols)
    if not cols:
        raise ConfigError("antichain_augment needs at least one column")
    idx = [ds.column_index(c) for c in cols]
    for j in idx:
        col = ds.columns[j]
        if col.kind == "continuous" or col.direction != "antichain":
            raise ConfigError(
                f"column {col.name!r} must be binary/categorical with direction "
                "'antichain'"
            )
    mapping: dict[tuple, int] = {}
    for row in ds.X[:, idx]:
        mapping.setdefault(tuple(float(v) for v in row), len(mapping) + 1)
    base = "+".join(cols)
    names = (f"{base}.xi1", f"{base}.xi2")
    record = AntichainRecord(source=tuple(cols), codes=tuple(mapping.items()), names=names)
    keep = [j for j in range(ds.d) if j not in idx]
    X = _augment_matrix(ds.X, idx, keep, record.code_of)
    columns = tuple(ds.columns[j] for j in keep) + (
        ColumnSpec(names[0], "categorical", "increasing"),
        ColumnSpec(names[1], "categorical", "increasing"),
    )
    return replace(ds, columns=columns, X=X), record


def apply_antichain(X: np.ndarray, columns: Sequence[ColumnSpec], record: AntichainRecord):
    """Map new points (in pre-augmentation coordinates) through ``record``."""
    names = [c.name for c in columns]
    idx = [names.index(c) for c in record.source]
    keep = [j for j in range(len(columns)) if j not in idx]
    return _augment_matrix(np.asarray(X, dtype=float), idx, keep, record.code_of)


def unit_variance_scales(X: np.ndarray) -> np.ndarray:
    """Per-column standard deviations, with 1 substituted for constant columns."""
    if X.shape[0] == 0:
        return np.ones(X.shape[1])
    sd = X.std(axis=0)
    return np.where(sd > 0, sd, 1.0)


def format_float(x: float) -> str:
    if isinstance(x, float) and not math.isfinite(x):
        return repr(x)
    return repr(float(x))
