import numpy as np
import pytest

from autodml.dataset import (Dataset, make_folds, load_csv, rng_from_seed,
                             spawn_seed_sequences, train_test_split)
from autodml.errors import (ArgumentError, IngestionError, SchemaError,
                            ValidationError)


def write_csv(tmp_path, name, text):
    path = tmp_path / name
    path.write_text(text)
    return str(path)


class TestDataset:
    def test_basic_construction(self):
        ds = Dataset(np.array([1.0, 2.0]), np.array([0.0, 1.0]),
                     np.array([[1.0], [2.0]]), "binary")
        assert ds.n == 2 and ds.d == 1
        assert ds.column_names == ["x1"]

    def test_row_count_mismatch(self):
        with pytest.raises(ValidationError):
            Dataset(np.ones(3), np.ones(2), np.ones((3, 1)), "continuous")

    def test_binary_treatment_validated(self):
        with pytest.raises(ValidationError):
            Dataset(np.ones(2), np.array([0.5, 1.0]), np.ones((2, 1)), "binary")

    def test_rejects_nonfinite(self):
        with pytest.raises(ValidationError):
            Dataset(np.array([1.0, np.nan]), np.zeros(2), np.ones((2, 1)), "continuous")

    def test_immutable(self):
        ds = Dataset(np.ones(2), np.zeros(2), np.ones((2, 1)), "continuous")
        with pytest.raises(ValueError):
            ds.y[0] = 5.0

    def test_subset(self):
        ds = Dataset(np.arange(5.0), np.zeros(5), np.arange(10.0).reshape(5, 2),
                     "continuous", ["a", "b"])
        sub = ds.subset(np.array([3, 1]))
        assert sub.y.tolist() == [3.0, 1.0]
        assert sub.column_names == ["a", "b"]


class TestLoadCsv:
    def test_three_row_file(self, tmp_path):
        path = write_csv(tmp_path, "d.csv", "y,t,x1\n1.0,0,0.5\n2.0,1,0.6\n3.0,0,0.7\n")
        ds = load_csv(path, {"y": "y", "t": "t", "x": ["x1"]}, "binary")
        assert ds.n == 3 and ds.d == 1
        assert ds.y.tolist() == [1.0, 2.0, 3.0]

    def test_binary_flag_rejects_half(self, tmp_path):
        path = write_csv(tmp_path, "d.csv", "y,t,x1\n1.0,0.5,0.5\n")
        with pytest.raises(ValidationError):
            load_csv(path, {"y": "y", "t": "t", "x": ["x1"]}, "binary")

    def test_header_order_irrelevant(self, tmp_path):
        a = write_csv(tmp_path, "a.csv", "y,t,x1\n1.0,0,0.5\n2.0,1,0.6\n")
        b = write_csv(tmp_path, "b.csv", "x1,y,t\n0.5,1.0,0\n0.6,2.0,1\n")
        schema = {"y": "y", "t": "t", "x": ["x1"]}
        da = load_csv(a, schema, "binary")
        db = load_csv(b, schema, "binary")
        assert np.array_equal(da.y, db.y)
        assert np.array_equal(da.t, db.t)
        assert np.array_equal(da.x, db.x)

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path, "d.csv", "y,t\n1.0,0\n")
        with pytest.raises(SchemaError):
            load_csv(path, {"y": "y", "t": "t", "x": ["x9"]}, "binary")

    def test_non_numeric_cell_reports_row(self, tmp_path):
        path = write_csv(tmp_path, "d.csv", "y,t,x1\n1.0,0,0.5\n2.0,oops,0.6\n")
        with pytest.raises(IngestionError, match="row 1"):
            load_csv(path, {"y": "y", "t": "t", "x": ["x1"]}, "binary")

    def test_default_x_columns(self, tmp_path):
        path = write_csv(tmp_path, "d.csv", "x1,y,x2,t\n0.5,1.0,0.9,0\n")
        ds = load_csv(path, {"y": "y", "t": "t"}, "binary")
        assert ds.column_names == ["x1", "x2"]


class TestMakeFolds:
    def test_none_scheme(self):
        fa = make_folds(10, "none")
        assert fa.k == 1
        assert np.array_equal(fa.folds, np.zeros(10, dtype=np.int64))

    def test_simple_balanced(self):
        fa = make_folds(10, "simple_k_fold", k=5, seed=1)
        sizes = [len(fa.fold_indices(f)) for f in range(5)]
        assert sizes == [2, 2, 2, 2, 2]

    def test_simple_sizes_differ_at_most_one(self):
        fa = make_folds(11, "simple_k_fold", k=3, seed=7)
        sizes = sorted(len(fa.fold_indices(f)) for f in range(3))
        assert max(sizes) - min(sizes) <= 1

    def test_partition_property(self):
        for scheme, k in (("none", 1), ("simple_k_fold", 4), ("double_crossfit", 3)):
            fa = make_folds(23, scheme, k=k, seed=3)
            all_idx = np.concatenate([fa.fold_indices(f) for f in range(fa.k)])
            assert sorted(all_idx.tolist()) == list(range(23))

    def test_double_rotation_latin_square(self):
        fa = make_folds(9, "double_crossfit", k=3, seed=1)
        assert len(fa.roles) == 3
        g_folds = {r[0] for r in fa.roles}
        a_folds = {r[1] for r in fa.roles}
        e_folds = {r[2] for r in fa.roles}
        assert g_folds == a_folds == e_folds == {0, 1, 2}
        for g_fold, a_fold, e_fold in fa.roles:
            assert len({g_fold, a_fold, e_fold}) == 3

    def test_deterministic(self):
        a = make_folds(50, "simple_k_fold", k=5, seed=42)
        b = make_folds(50, "simple_k_fold", k=5, seed=42)
        assert np.array_equal(a.folds, b.folds)

    def test_k_exceeds_n(self):
        with pytest.raises(ArgumentError):
            make_folds(3, "simple_k_fold", k=5, seed=0)


class TestTrainTestSplit:
    def test_ten_rows(self):
        train, test = train_test_split(10, 0.2, seed=1)
        assert len(train) == 8 and len(test) == 2
        assert sorted(np.concatenate([train, test]).tolist()) == list(range(10))

    def test_five_rows(self):
        train, test = train_test_split(5, 0.2, seed=1)
        assert len(train) == 4 and len(test) == 1

    def test_deterministic(self):
        a = train_test_split(100, 0.2, seed=9)
        b = train_test_split(100, 0.2, seed=9)
        assert np.array_equal(a[0], b[0]) and np.array_equal(a[1], b[1])

    def test_degenerate_fraction(self):
        with pytest.raises(ArgumentError):
            train_test_split(10, 0.0, seed=0)
        with pytest.raises(ArgumentError):
            train_test_split(3, 0.01, seed=0)


class TestRng:
    def test_pinned_generator_reproducible(self):
        a = rng_from_seed(123).random(5)
        b = rng_from_seed(123).random(5)
        assert np.array_equal(a, b)

    def test_tuple_seeds_distinct(self):
        a = rng_from_seed((5, 0)).random(5)
        b = rng_from_seed((5, 1)).random(5)
        assert not np.array_equal(a, b)

    def test_spawned_streams_distinct(self):
        seqs = spawn_seed_sequences(7, 3)
        draws = [np.random.Generator(np.random.PCG64(s)).random(4) for s in seqs]
        assert not np.array_equal(draws[0], draws[1])
        assert not np.array_equal(draws[1], draws[2])
