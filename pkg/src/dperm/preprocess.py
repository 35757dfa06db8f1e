"""
CSV ingestion and feature preprocessing.

Pipeline for a raw table:
1. binarize categorical columns (k categories -> k indicator columns)
2. scale each column by its maximum absolute value
3. normalize any row whose L2 norm exceeds 1
4. map the target to {-1, +1}
5. optionally keep a seeded sub-dataset (first n1 rows / d1 features)
6. append a constant 1 feature and renormalize
"""

from __future__ import annotations

from collections.abc import Sequence
from dataclasses import dataclass, field
from enum import Enum
import logging
from pathlib import Path
try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib  # type: ignore[no-redef]

import numpy as np
import numpy.typing as npt
import pandas as pd

from dperm.core import Dataset, FloatArray, validate_dataset
from dperm.errors import ConfigError, DataError, NotBinaryTarget, UnknownCategory
from dperm.mechanisms import RngStream

logger = logging.getLogger(__name__)

FLOAT_FORMAT = "%.17g"


class ColumnKind(str, Enum):
    NUMERIC = "numeric"
    CATEGORICAL = "categorical"
    TARGET = "target"


@dataclass(frozen=True)
class ColumnSchema:
    name: str
    kind: ColumnKind
    categories: tuple[str, ...] | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "kind", ColumnKind(self.kind))
        if self.kind is ColumnKind.CATEGORICAL:
            if not self.categories:
                raise ConfigError(f"categorical column {self.name!r} lists no categories", field="schema")
            object.__setattr__(self, "categories", tuple(str(c) for c in self.categories))


@dataclass(frozen=True)
class ProcessedData:
    dataset: Dataset
    feature_names: tuple[str, ...]
    target_mapping: dict[str, int] = field(default_factory=dict)

    @property
    def reported_dim(self) -> int:
        """Dimensionality before the constant feature was added."""
        return self.dataset.dim - 1


def check_schema(schema: Sequence[ColumnSchema]) -> list[ColumnSchema]:
    targets = [col for col in schema if col.kind is ColumnKind.TARGET]
    if len(targets) != 1:
        raise ConfigError(f"schema needs exactly one target column, found {len(targets)}", field="schema")
    return list(schema)


def load_schema(path: str | Path) -> list[ColumnSchema]:
    """
    Read a TOML schema file.

    Format:
        [[columns]]
        name = "workclass"
        kind = "categorical"
        categories = ["Private", "Self-emp"]
    """
    try:
        with Path(path).open("rb") as f:
            raw = tomllib.load(f)
    except (OSError, tomllib.TOMLDecodeError) as e:
        raise ConfigError(f"cannot read schema {path}: {e}", field="schema") from e
    try:
        columns = [
            ColumnSchema(
                name=str(entry["name"]),
                kind=ColumnKind(entry["kind"]),
                categories=tuple(entry["categories"]) if "categories" in entry else None,
            )
            for entry in raw.get("columns", [])
        ]
    except (KeyError, ValueError) as e:
        raise ConfigError(f"malformed schema entry: {e}", field="schema") from e
    return check_schema(columns)


def read_raw_table(path: str | Path, schema: Sequence[ColumnSchema]) -> pd.DataFrame:
    """Load a UTF-8 CSV; non-numeric columns are kept as text."""
    dtypes = {col.name: str for col in schema if col.kind is not ColumnKind.NUMERIC}
    try:
        table = pd.read_csv(path, dtype=dtypes, encoding="utf-8", skipinitialspace=True)
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read {path}: {e}") from e
    missing = [col.name for col in schema if col.name not in table.columns]
    if missing:
        raise DataError(f"columns missing from {path}: {missing}")
    if table[[col.name for col in schema]].isna().any().any():
        raise DataError(f"{path} has missing values; imputation is not supported")
    logger.info("Loaded %d rows from %s", len(table), path)
    return table


# ============== TRANSFORMS ==============


def binarize(rows: pd.DataFrame, schema: Sequence[ColumnSchema]) -> pd.DataFrame:
    """
    Numeric columns in schema order, then one indicator block per categorical.

    Raises:
        UnknownCategory: a value outside the column's declared categories
    """
    numeric = [col for col in schema if col.kind is ColumnKind.NUMERIC]
    categorical = [col for col in schema if col.kind is ColumnKind.CATEGORICAL]

    blocks: dict[str, npt.NDArray[np.float64]] = {}
    for col in numeric:
        try:
            blocks[col.name] = rows[col.name].astype(np.float64).to_numpy()
        except ValueError as e:
            raise DataError(f"column {col.name!r} is not numeric: {e}") from e

    for col in categorical:
        values = rows[col.name].astype(str).str.strip()
        categories = col.categories or ()
        unknown = ~values.isin(categories)
        if unknown.any():
            raise UnknownCategory(col.name, values[unknown].iloc[0])
        for category in categories:
            blocks[f"{col.name}={category}"] = (values == category).to_numpy(dtype=np.float64)

    return pd.DataFrame(blocks, index=rows.index)


def normalize_rows(table: npt.ArrayLike) -> FloatArray:
    """Divide each row with L2 norm above 1 by its norm."""
    arr = np.array(table, dtype=np.float64)
    norms = np.linalg.norm(arr, axis=1)
    over = norms > 1.0
    arr[over] /= norms[over, None]
    return arr


def scale_and_normalize(table: npt.ArrayLike) -> FloatArray:
    """Scale columns by max |value| (all-zero columns untouched), then normalize rows."""
    arr = np.array(table, dtype=np.float64)
    if arr.ndim != 2 or arr.shape[0] == 0:
        raise DataError("cannot scale an empty table")
    col_max = np.abs(arr).max(axis=0)
    col_max[col_max == 0.0] = 1.0
    return normalize_rows(arr / col_max)


def map_target(values: Sequence[object] | pd.Series) -> tuple[npt.NDArray[np.int64], dict[str, int]]:
    """
    Map a two-valued column to labels: smaller raw value (as text) -> -1.

    Returns:
        labels and the mapping {raw value: label}
    """
    text = pd.Series(values).astype(str).str.strip()
    distinct = sorted(text.unique())
    if len(distinct) != 2:
        raise NotBinaryTarget(f"target must have exactly two values, found {len(distinct)}: {distinct[:5]}")
    mapping = {distinct[0]: -1, distinct[1]: 1}
    labels = text.map(mapping).to_numpy(dtype=np.int64)
    return labels, mapping


def append_constant_and_renormalize(features: npt.ArrayLike) -> FloatArray:
    arr = np.asarray(features, dtype=np.float64)
    return normalize_rows(np.hstack([arr, np.ones((arr.shape[0], 1))]))


def subsample(
    features: FloatArray,
    labels: npt.NDArray[np.int64],
    rng: RngStream,
    n1: int | None = None,
    d1: int | None = None,
) -> tuple[FloatArray, npt.NDArray[np.int64]]:
    """Seeded row permutation, then the first n1 rows and first d1 features."""
    order = rng.generator().permutation(features.shape[0])
    rows = order if n1 is None else order[:n1]
    cols = slice(None) if d1 is None else slice(0, d1)
    return features[rows][:, cols], labels[rows]


# ============== PIPELINE ==============


def prepare(
    table: pd.DataFrame,
    schema: Sequence[ColumnSchema],
    rng: RngStream | None = None,
    n1: int | None = None,
    d1: int | None = None,
) -> ProcessedData:
    schema = check_schema(schema)
    target = next(col for col in schema if col.kind is ColumnKind.TARGET)

    numeric = binarize(table, schema)
    features = scale_and_normalize(numeric.to_numpy())
    labels, mapping = map_target(table[target.name])
    names = list(numeric.columns)

    if n1 is not None or d1 is not None:
        features, labels = subsample(features, labels, rng or RngStream(0), n1, d1)
        if d1 is not None:
            names = names[:d1]

    dataset = validate_dataset(Dataset(append_constant_and_renormalize(features), labels))
    logger.info("Prepared dataset: n=%d d=%d (+1 constant)", dataset.n, dataset.dim - 1)
    return ProcessedData(dataset, (*names, "const"), mapping)


def load_dataset(
    csv_path: str | Path,
    schema_path: str | Path,
    rng: RngStream | None = None,
    n1: int | None = None,
    d1: int | None = None,
) -> ProcessedData:
    schema = load_schema(schema_path)
    return prepare(read_raw_table(csv_path, schema), schema, rng, n1, d1)


# ============== PROCESSED CACHE ==============


def write_processed_csv(d: Dataset, path: str | Path) -> None:
    """Header f0..f{d'-1},label; features with 17 significant digits."""
    frame = pd.DataFrame(d.X, columns=[f"f{j}" for j in range(d.dim)])
    frame["label"] = d.y
    frame.to_csv(path, index=False, float_format=FLOAT_FORMAT, lineterminator="\n")


def read_processed_csv(path: str | Path) -> Dataset:
    try:
        frame = pd.read_csv(path, float_precision="round_trip", encoding="utf-8")
    except (OSError, ValueError) as e:
        raise DataError(f"cannot read {path}: {e}") from e
    if "label" not in frame.columns:
        raise DataError(f"{path} has no label column")
    feature_cols = [col for col in frame.columns if col != "label"]
    return validate_dataset(
        Dataset(
            frame[feature_cols].to_numpy(dtype=np.float64),
            frame["label"].to_numpy(dtype=np.int64),
        )
    )
