"""Mixed numerical/categorical tables: schema, dummy encoding, standardization, splits."""
from __future__ import annotations

import csv
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Optional, Sequence, Union

import numpy as np

from .errors import (
    DataError,
    DegenerateSplit,
    EmptyDataset,
    ParseError,
    SchemaMismatch,
    UnknownLevel,
)

MISSING_MARKERS = frozenset({"", "?", "NA", "nan", "NaN"})
SD_FLOOR = 1e-12


@dataclass(frozen=True)
class Numerical:
    name: str


@dataclass(frozen=True)
class Categorical:
    name: str
    levels: tuple

    def __post_init__(self):
        levels = tuple(str(v) for v in self.levels)
        if not levels:
            raise SchemaMismatch(f"categorical column {self.name!r} has no levels")
        if len(set(levels)) != len(levels):
            raise SchemaMismatch(f"categorical column {self.name!r} has duplicate levels")
        object.__setattr__(self, "levels", levels)

    @property
    def m(self) -> int:
        return len(self.levels)


Column = Union[Numerical, Categorical]


@dataclass(frozen=True)
class MixedSchema:
    columns: tuple

    def __post_init__(self):
        cols = tuple(self.columns)
        names = [c.name for c in cols]
        if len(set(names)) != len(names):
            raise SchemaMismatch("duplicate column names in schema")
        object.__setattr__(self, "columns", cols)
        if self.p == 0:
            raise SchemaMismatch("schema has no columns")

    @classmethod
    def build(cls, numerical: Sequence[str] = (), categorical: Optional[dict] = None) -> "MixedSchema":
        cols: list = [Numerical(n) for n in numerical]
        cols += [Categorical(k, tuple(v)) for k, v in (categorical or {}).items()]
        return cls(tuple(cols))

    @property
    def numerical(self) -> list:
        return [c for c in self.columns if isinstance(c, Numerical)]

    @property
    def categorical(self) -> list:
        return [c for c in self.columns if isinstance(c, Categorical)]

    @property
    def p1(self) -> int:
        return len(self.numerical)

    @property
    def p2(self) -> int:
        return sum(c.m for c in self.categorical)

    @property
    def p(self) -> int:
        return self.p1 + self.p2

    @property
    def blocks(self) -> list:
        """Column slices of each category's dummy block inside the categorical matrix."""
        out, start = [], 0
        for c in self.categorical:
            out.append(slice(start, start + c.m))
            start += c.m
        return out

    @property
    def dummy_names(self) -> list:
        return [f"{c.name}={lv}" for c in self.categorical for lv in c.levels]

    def to_dict(self) -> dict:
        return {
            "numerical": [c.name for c in self.numerical],
            "categorical": {c.name: list(c.levels) for c in self.categorical},
        }


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a)
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class MixedDataset:
    """Encoded table: standardized numerical block plus one-hot categorical block.

    ``truth_labels`` is carried for evaluation only; feature learning never reads it.
    """

    schema: MixedSchema
    numerical: np.ndarray
    categorical: np.ndarray
    row_ids: tuple
    truth_labels: Optional[np.ndarray] = None
    name: str = "dataset"
    numerical_mean: Optional[np.ndarray] = field(default=None, repr=False)
    numerical_sd: Optional[np.ndarray] = field(default=None, repr=False)

    def __post_init__(self):
        num = np.asarray(self.numerical, dtype=float).reshape(len(self.row_ids), self.schema.p1)
        cat = np.asarray(self.categorical, dtype=float).reshape(len(self.row_ids), self.schema.p2)
        n = len(self.row_ids)
        if n < 1:
            raise EmptyDataset("dataset has no rows")
        if not np.all(np.isfinite(num)):
            raise ParseError("numerical block contains non-finite values")
        if not np.all((cat == 0) | (cat == 1)):
            raise SchemaMismatch("categorical block must be binary")
        for sl, col in zip(self.schema.blocks, self.schema.categorical):
            if not np.all(cat[:, sl].sum(axis=1) == 1):
                raise SchemaMismatch(f"dummy block {col.name!r} is not one-hot in every row")
        object.__setattr__(self, "numerical", _readonly(num))
        object.__setattr__(self, "categorical", _readonly(cat))
        object.__setattr__(self, "row_ids", tuple(self.row_ids))
        if self.truth_labels is not None:
            t = np.asarray(self.truth_labels)
            if t.shape != (n,):
                raise SchemaMismatch("truth_labels length differs from row count")
            object.__setattr__(self, "truth_labels", _readonly(t))

    @property
    def n(self) -> int:
        return len(self.row_ids)

    @property
    def encoded(self) -> np.ndarray:
        """Rows x_(i): standardized numerical values followed by the dummy block."""
        return np.hstack([self.numerical, self.categorical])

    def subset(self, idx: Iterable[int]) -> "MixedDataset":
        idx = np.asarray(list(idx), dtype=int)
        return MixedDataset(
            schema=self.schema,
            numerical=self.numerical[idx],
            categorical=self.categorical[idx],
            row_ids=tuple(self.row_ids[i] for i in idx),
            truth_labels=None if self.truth_labels is None else self.truth_labels[idx],
            name=self.name,
            numerical_mean=self.numerical_mean,
            numerical_sd=self.numerical_sd,
        )


@dataclass(frozen=True)
class SplitSpec:
    train_fraction: float = 0.8
    seed: int = 0

    def __post_init__(self):
        if not 0.0 < self.train_fraction < 1.0:
            raise DegenerateSplit("train_fraction must lie in (0, 1)")


def dummy_encode(raw_levels: Sequence[str], schema: MixedSchema) -> np.ndarray:
    """One-hot encode one row's categorical values, block by block in schema order."""
    cats = schema.categorical
    if len(raw_levels) != len(cats):
        raise SchemaMismatch(f"expected {len(cats)} categorical values, got {len(raw_levels)}")
    row = np.zeros(schema.p2)
    for sl, col, value in zip(schema.blocks, cats, raw_levels):
        try:
            j = col.levels.index(str(value))
        except ValueError:
            raise UnknownLevel(f"{value!r} is not a level of {col.name!r}") from None
        row[sl.start + j] = 1.0
    return row


def standardize(x: np.ndarray):
    """Column-wise z-scores with population sd; constant columns become zeros."""
    x = np.asarray(x, dtype=float)
    mean = x.mean(axis=0)
    sd = x.std(axis=0)
    safe = np.where(sd < SD_FLOOR, 1.0, sd)
    z = (x - mean) / safe
    z[:, sd < SD_FLOOR] = 0.0
    return z, mean, sd


def _read_rows(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            try:
                header = [h.strip() for h in next(reader)]
            except StopIteration:
                raise EmptyDataset(f"{path} is empty") from None
            rows = [[v.strip() for v in r] for r in reader if r and any(v.strip() for v in r)]
    except (OSError, UnicodeDecodeError) as exc:
        raise DataError(f"cannot read {path}: {exc}") from None
    return header, rows


def infer_schema(path, numerical: Sequence[str], categorical: Sequence[str]) -> MixedSchema:
    """Schema whose categorical levels are the sorted distinct non-missing values in the file."""
    header, rows = _read_rows(path)
    index = {h: i for i, h in enumerate(header)}
    missing = [c for c in list(numerical) + list(categorical) if c not in index]
    if missing:
        raise SchemaMismatch(f"columns not in file header: {missing}")
    levels = {}
    for c in categorical:
        vals = {r[index[c]] for r in rows if r[index[c]] not in MISSING_MARKERS}
        levels[c] = sorted(vals)
    return MixedSchema.build(numerical, levels)


def load_csv(
    path,
    schema: MixedSchema,
    missing_policy: str = "drop_row",
    label_column: Optional[str] = None,
    id_column: Optional[str] = None,
    name: Optional[str] = None,
) -> MixedDataset:
    """Read a headed CSV into a standardized, dummy-encoded dataset.

    Rows with missing markers or out-of-schema levels are dropped under
    ``missing_policy="drop_row"`` and raise SchemaMismatch under ``"error"``.
    Non-numeric text in a numerical column always raises ParseError.
    """
    if missing_policy not in ("drop_row", "error"):
        raise SchemaMismatch(f"unknown missing_policy {missing_policy!r}")
    header, rows = _read_rows(path)
    index = {h: i for i, h in enumerate(header)}
    wanted = [c.name for c in schema.columns]
    extra = [c for c in (label_column, id_column) if c]
    absent = [c for c in wanted + extra if c not in index]
    if absent:
        raise SchemaMismatch(f"columns not in file header: {absent}")

    num_idx = [index[c.name] for c in schema.numerical]
    cat_cols = schema.categorical
    cat_idx = [index[c.name] for c in cat_cols]

    nums, cats, ids, labels = [], [], [], []
    for lineno, r in enumerate(rows, start=2):
        if len(r) != len(header):
            raise ParseError(f"line {lineno}: expected {len(header)} fields, got {len(r)}")
        bad = None
        values = []
        for j in num_idx:
            v = r[j]
            if v in MISSING_MARKERS:
                bad = f"missing value in {header[j]!r}"
                break
            try:
                values.append(float(v))
            except ValueError:
                raise ParseError(f"line {lineno}: non-numeric {v!r} in {header[j]!r}") from None
        if bad is None:
            raw = [r[j] for j in cat_idx]
            for col, v in zip(cat_cols, raw):
                if v not in col.levels:
                    bad = f"level {v!r} not in schema for {col.name!r}"
                    break
        if bad is None and label_column and r[index[label_column]] in MISSING_MARKERS:
            bad = "missing label"
        if bad is not None:
            if missing_policy == "error":
                raise SchemaMismatch(f"line {lineno}: {bad}")
            continue
        nums.append(values)
        cats.append(dummy_encode(raw, schema))
        ids.append(r[index[id_column]] if id_column else str(lineno - 2))
        if label_column:
            labels.append(r[index[label_column]])

    n = len(ids)
    if n < 2:
        raise EmptyDataset(f"{path}: {n} usable rows")
    numerical = np.array(nums, dtype=float).reshape(n, schema.p1)
    z, mean, sd = standardize(numerical) if schema.p1 else (numerical, np.zeros(0), np.zeros(0))
    truth = None
    if label_column:
        _, truth = np.unique(np.array(labels), return_inverse=True)
    return MixedDataset(
        schema=schema,
        numerical=z,
        categorical=np.array(cats).reshape(n, schema.p2),
        row_ids=tuple(ids),
        truth_labels=truth,
        name=name or Path(path).stem,
        numerical_mean=mean,
        numerical_sd=sd,
    )


def write_csv(dataset: MixedDataset, path, label_column: Optional[str] = "label") -> None:
    """Write numerical values (as stored) and decoded category levels with a header row."""
    schema = dataset.schema
    header = ["row_id"] + [c.name for c in schema.columns]
    if dataset.truth_labels is not None and label_column:
        header.append(label_column)
    num_pos = {c.name: j for j, c in enumerate(schema.numerical)}
    cat_pos = {c.name: (sl, c) for sl, c in zip(schema.blocks, schema.categorical)}
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for i in range(dataset.n):
            row = [dataset.row_ids[i]]
            for c in schema.columns:
                if c.name in num_pos:
                    row.append(repr(float(dataset.numerical[i, num_pos[c.name]])))
                else:
                    sl, col = cat_pos[c.name]
                    row.append(col.levels[int(np.argmax(dataset.categorical[i, sl]))])
            if len(header) > len(row):
                row.append(str(dataset.truth_labels[i]))
            w.writerow(row)


def split(dataset: MixedDataset, spec: SplitSpec):
    """Seeded random partition into (train, validation)."""
    train_idx, val_idx = split_indices(dataset.n, spec)
    return dataset.subset(train_idx), dataset.subset(val_idx)


def split_indices(n: int, spec: SplitSpec):
    n_train = int(np.floor(n * spec.train_fraction))
    if n_train < 1 or n - n_train < 1:
        raise DegenerateSplit(f"n={n}, fraction={spec.train_fraction} leaves an empty side")
    perm = np.random.default_rng(spec.seed).permutation(n)
    return np.sort(perm[:n_train]), np.sort(perm[n_train:])


def planted_mixed(n: int = 400, n_numerical: int = 4, n_categorical: int = 3, levels: int = 3,
                  separation: float = 3.0, purity: float = 0.8, seed: int = 0) -> MixedDataset:
    """Two planted clusters: Gaussian blobs ``separation`` sd apart in every numerical
    column, and categorical columns whose modal level (chosen with probability
    ``purity``) differs between the clusters."""
    if n < 2 or levels < 2:
        raise EmptyDataset("need n >= 2 and at least 2 levels")
    rng = np.random.default_rng(seed)
    truth = np.arange(n) % 2
    rng.shuffle(truth)
    centres = np.where(truth[:, None] == 1, separation / 2, -separation / 2)
    num = centres + rng.normal(size=(n, n_numerical))
    schema = MixedSchema.build(
        [f"x{j}" for j in range(n_numerical)],
        {f"c{j}": [f"l{u}" for u in range(levels)] for j in range(n_categorical)},
    )
    cat = np.zeros((n, schema.p2))
    for sl in schema.blocks:
        modal = np.where(truth == 1, levels - 1, 0)
        other = rng.integers(0, levels, n)
        pick = np.where(rng.uniform(size=n) < purity, modal, other)
        cat[np.arange(n), sl.start + pick] = 1.0
    z, mean, sd = standardize(num)
    return MixedDataset(schema, z, cat, tuple(str(i) for i in range(n)), truth, "planted",
                        mean, sd)
