"""
dperm unit tests: CSV ingestion, binarization, scaling and the processed cache.
"""

import math

import numpy as np
import pandas as pd
import pytest

from dperm.core import validate_dataset
from dperm.errors import ConfigError, DataError, NotBinaryTarget, UnknownCategory
from dperm.mechanisms import RngStream
from dperm.preprocess import (
    ColumnKind,
    ColumnSchema,
    append_constant_and_renormalize,
    binarize,
    check_schema,
    load_dataset,
    load_schema,
    map_target,
    normalize_rows,
    prepare,
    read_processed_csv,
    read_raw_table,
    scale_and_normalize,
    subsample,
    write_processed_csv,
)

pytestmark = pytest.mark.unit

RAW_CSV = """age,hours,work,income
39,40,Private,<=50K
50,13,Self-emp,>50K
38,40,Private,<=50K
53,45,Gov,>50K
"""

SCHEMA_TOML = """
[[columns]]
name = "age"
kind = "numeric"

[[columns]]
name = "hours"
kind = "numeric"

[[columns]]
name = "work"
kind = "categorical"
categories = ["Private", "Self-emp", "Gov"]

[[columns]]
name = "income"
kind = "target"
"""

SCHEMA = [
    ColumnSchema("age", ColumnKind.NUMERIC),
    ColumnSchema("hours", ColumnKind.NUMERIC),
    ColumnSchema("work", ColumnKind.CATEGORICAL, ("Private", "Self-emp", "Gov")),
    ColumnSchema("income", ColumnKind.TARGET),
]


@pytest.fixture
def raw_files(tmp_path):
    csv = tmp_path / "adult.csv"
    csv.write_text(RAW_CSV, encoding="utf-8")
    schema = tmp_path / "schema.toml"
    schema.write_text(SCHEMA_TOML, encoding="utf-8")
    return csv, schema


class TestSchema:
    def test_load_from_toml(self, raw_files):
        _, schema = raw_files
        assert load_schema(schema) == SCHEMA

    def test_needs_exactly_one_target(self):
        with pytest.raises(ConfigError) as exc:
            check_schema([ColumnSchema("a", "numeric")])
        assert exc.value.field == "schema"

    def test_two_targets(self):
        with pytest.raises(ConfigError):
            check_schema([ColumnSchema("a", "target"), ColumnSchema("b", "target")])

    def test_categorical_needs_categories(self):
        with pytest.raises(ConfigError):
            ColumnSchema("work", "categorical")

    def test_categories_are_text(self):
        assert ColumnSchema("digit", "categorical", (1, 2)).categories == ("1", "2")

    def test_malformed_entry(self, tmp_path):
        path = tmp_path / "bad.toml"
        path.write_text('[[columns]]\nname = "a"\nkind = "ordinal"\n', encoding="utf-8")
        with pytest.raises(ConfigError):
            load_schema(path)

    def test_unreadable(self, tmp_path):
        with pytest.raises(ConfigError):
            load_schema(tmp_path / "missing.toml")


class TestBinarize:
    def test_indicator_values(self):
        schema = [ColumnSchema("c", "categorical", ("a", "b")), ColumnSchema("t", "target")]
        out = binarize(pd.DataFrame({"c": ["a", "b"], "t": [0, 1]}), schema)
        assert out.to_numpy().tolist() == [[1.0, 0.0], [0.0, 1.0]]

    def test_unknown_category(self):
        schema = [ColumnSchema("c", "categorical", ("a", "b")), ColumnSchema("t", "target")]
        with pytest.raises(UnknownCategory) as exc:
            binarize(pd.DataFrame({"c": ["a", "c"], "t": [0, 1]}), schema)
        assert (exc.value.column, exc.value.value) == ("c", "c")

    def test_column_order_and_count(self):
        table = pd.DataFrame(
            {"work": ["Gov", "Private"], "age": [30, 40], "hours": [10, 20], "income": ["a", "b"]}
        )
        out = binarize(table, SCHEMA)
        assert list(out.columns) == ["age", "hours", "work=Private", "work=Self-emp", "work=Gov"]
        assert out.shape[1] == 2 + 3

    def test_non_numeric_value(self):
        table = pd.DataFrame({"age": ["x"], "hours": [1], "work": ["Gov"], "income": ["a"]})
        with pytest.raises(DataError):
            binarize(table, SCHEMA)


class TestScaling:
    def test_column_divided_by_max(self):
        assert scale_and_normalize([[2.0], [4.0]]).tolist() == [[0.5], [1.0]]

    def test_row_normalized(self):
        out = scale_and_normalize([[1.0, 1.0]])
        np.testing.assert_allclose(out, [[1 / math.sqrt(2), 1 / math.sqrt(2)]], atol=1e-15)

    def test_zero_column_unchanged(self):
        assert scale_and_normalize([[0.0, 1.0], [0.0, 2.0]]).tolist() == [[0.0, 0.5], [0.0, 1.0]]

    def test_negative_values_use_absolute_max(self):
        assert scale_and_normalize([[-4.0], [2.0]]).tolist() == [[-1.0], [0.5]]

    def test_empty_table(self):
        with pytest.raises(DataError):
            scale_and_normalize(np.zeros((0, 2)))

    def test_idempotent_when_column_maxima_survive(self):
        table = [[1.0, 0.0, 0.0], [0.0, 3.0, 0.0], [0.5, 1.0, 2.0], [0.0, 0.0, 2.0]]
        once = scale_and_normalize(table)
        np.testing.assert_allclose(scale_and_normalize(once), once, atol=1e-15)

    def test_normalize_rows_is_idempotent(self):
        gen = np.random.default_rng(0)
        once = normalize_rows(gen.normal(size=(50, 4)))
        np.testing.assert_allclose(normalize_rows(once), once, atol=1e-15)
        assert np.linalg.norm(once, axis=1).max() <= 1.0 + 1e-12


class TestTarget:
    def test_lexicographic(self):
        labels, mapping = map_target(["<=50K", ">50K", "<=50K"])
        assert labels.tolist() == [-1, 1, -1]
        assert mapping == {"<=50K": -1, ">50K": 1}

    def test_numeric_values(self):
        labels, _ = map_target([1, 0, 1])
        assert labels.tolist() == [1, -1, 1]

    @pytest.mark.parametrize("values", [["a", "b", "c"], ["a", "a"]])
    def test_not_binary(self, values):
        with pytest.raises(NotBinaryTarget):
            map_target(values)


class TestConstantFeature:
    @pytest.mark.parametrize(
        "row,expected",
        [
            ([0.0], [0.0, 1.0]),
            ([1.0], [1 / math.sqrt(2), 1 / math.sqrt(2)]),
            ([0.6, 0.8], [0.6 / math.sqrt(2), 0.8 / math.sqrt(2), 1 / math.sqrt(2)]),
        ],
    )
    def test_append(self, row, expected):
        np.testing.assert_allclose(append_constant_and_renormalize([row])[0], expected, atol=1e-15)


class TestPipeline:
    def test_read_raw_table(self, raw_files):
        csv, _ = raw_files
        table = read_raw_table(csv, SCHEMA)
        assert len(table) == 4
        assert table["work"].tolist() == ["Private", "Self-emp", "Private", "Gov"]

    def test_missing_column(self, tmp_path):
        path = tmp_path / "short.csv"
        path.write_text("age,income\n1,a\n", encoding="utf-8")
        with pytest.raises(DataError, match="hours"):
            read_raw_table(path, SCHEMA)

    def test_missing_value(self, tmp_path):
        path = tmp_path / "holes.csv"
        path.write_text("age,hours,work,income\n1,,Gov,a\n2,3,Gov,b\n", encoding="utf-8")
        with pytest.raises(DataError, match="missing"):
            read_raw_table(path, SCHEMA)

    def test_load_dataset(self, raw_files):
        csv, schema = raw_files
        out = load_dataset(csv, schema)
        assert out.dataset.n == 4
        assert out.reported_dim == 5
        assert out.feature_names == ("age", "hours", "work=Private", "work=Self-emp", "work=Gov", "const")
        assert out.dataset.y.tolist() == [-1, 1, -1, 1]
        assert out.target_mapping == {"<=50K": -1, ">50K": 1}
        assert validate_dataset(out.dataset) is out.dataset

    def test_every_row_has_constant_weight(self, raw_files):
        csv, schema = raw_files
        X = load_dataset(csv, schema).dataset.X
        assert np.all(X[:, -1] > 0)
        np.testing.assert_allclose(np.linalg.norm(X, axis=1), 1.0, atol=1e-12)

    def test_sub_dataset(self, raw_files):
        csv, schema = raw_files
        table = read_raw_table(csv, schema=SCHEMA)
        out = prepare(table, SCHEMA, RngStream(1), n1=3, d1=2)
        assert (out.dataset.n, out.dataset.dim) == (3, 3)
        assert out.feature_names == ("age", "hours", "const")

    def test_sub_dataset_is_seeded(self, raw_files):
        csv, _ = raw_files
        table = read_raw_table(csv, SCHEMA)
        a = prepare(table, SCHEMA, RngStream(5), n1=2)
        b = prepare(table, SCHEMA, RngStream(5), n1=2)
        assert a.dataset.X.tobytes() == b.dataset.X.tobytes()


class TestSubsample:
    def test_shapes_and_rows(self):
        X = np.arange(20, dtype=float).reshape(10, 2)
        y = np.arange(10)
        Xs, ys = subsample(X, y, RngStream(3), n1=4, d1=1)
        assert Xs.shape == (4, 1)
        assert len(set(ys.tolist())) == 4
        assert Xs[:, 0].tolist() == (2.0 * ys).tolist()

    def test_full_permutation(self):
        X = np.arange(10, dtype=float).reshape(5, 2)
        Xs, ys = subsample(X, np.arange(5), RngStream(0))
        assert sorted(ys.tolist()) == [0, 1, 2, 3, 4]
        assert Xs.shape == (5, 2)


class TestProcessedCache:
    def test_round_trip_is_bit_identical(self, lr_data, tmp_path):
        path = tmp_path / "processed.csv"
        write_processed_csv(lr_data, path)
        back = read_processed_csv(path)
        assert back.X.tobytes() == lr_data.X.tobytes()
        assert back.y.tolist() == lr_data.y.tolist()

    def test_header(self, single_record, tmp_path):
        path = tmp_path / "one.csv"
        write_processed_csv(single_record, path)
        assert path.read_text(encoding="utf-8").splitlines() == ["f0,f1,label", "1,0,1"]

    def test_missing_label_column(self, tmp_path):
        path = tmp_path / "nolabel.csv"
        path.write_text("f0,f1\n0.1,0.2\n", encoding="utf-8")
        with pytest.raises(DataError):
            read_processed_csv(path)
