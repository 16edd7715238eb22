"""Data pipeline: CSV ingestion and round-trips, windowing arithmetic,
normalization, differencing, and split hygiene."""

import numpy as np
import pytest

from mvlstm import data as dat
from mvlstm.errors import ConfigError, ContractError, DataError


@pytest.fixture
def csv_file(tmp_path):
    def write(text, name="data.csv"):
        path = tmp_path / name
        path.write_text(text, encoding="utf-8")
        return str(path)
    return write


class TestLoadCsv:
    def test_target_already_last(self, csv_file):
        path = csv_file("a,b,y\n1,2,3\n4,5,6\n")
        series = dat.load_csv(path, "y")
        assert series.names == ["a", "b", "y"]
        np.testing.assert_array_equal(series.values, [[1, 2, 3], [4, 5, 6]])

    def test_target_moved_to_last_and_roundtrip(self, csv_file, tmp_path):
        path = csv_file("a,y,b\n1.5,2.25,3.125\n-4,5e-3,0.1\n")
        series = dat.load_csv(path, "y")
        assert series.names == ["a", "b", "y"]
        np.testing.assert_array_equal(series.values[:, 2], [2.25, 5e-3])
        out = str(tmp_path / "round.csv")
        dat.write_csv(out, series)
        again = dat.load_csv(out, "y")
        np.testing.assert_array_equal(series.values, again.values)
        assert series.names == again.names

    def test_blank_cell_strict_names_row_and_column(self, csv_file):
        path = csv_file("a,y\n1,2\n,3\n")
        with pytest.raises(DataError, match=r"row 3.*column 'a'"):
            dat.load_csv(path, "y")

    def test_ffill_copies_previous_row(self, csv_file):
        path = csv_file("a,y\n1,2\n,3\n")
        series = dat.load_csv(path, "y", fill_policy="ffill")
        np.testing.assert_array_equal(series.values[:, 0], [1.0, 1.0])

    def test_missing_file(self):
        with pytest.raises(DataError, match="not found"):
            dat.load_csv("/nonexistent/file.csv", "y")

    def test_unknown_target_column(self, csv_file):
        path = csv_file("a,b\n1,2\n")
        with pytest.raises(DataError, match="target column 'y'"):
            dat.load_csv(path, "y")

    def test_bad_fill_policy(self, csv_file):
        path = csv_file("a,y\n1,2\n")
        with pytest.raises(ConfigError):
            dat.load_csv(path, "y", fill_policy="drop")


class TestWindow:
    def make(self, L, n=3):
        values = np.arange(L * n, dtype=float).reshape(L, n)
        return dat.RawSeries(names=[f"c{i}" for i in range(n)], values=values)

    def test_single_window(self):
        batch = dat.window(self.make(31), 30)
        assert len(batch) == 1

    def test_count_is_length_minus_T(self):
        batch = dat.window(self.make(40), 10)
        assert len(batch) == 30

    def test_first_target_is_row_T(self):
        series = self.make(12)
        batch = dat.window(series, 5)
        assert batch.targets[0] == series.values[5, -1]
        np.testing.assert_array_equal(batch.inputs[0], series.values[0:5])

    def test_window_alignment_invariant(self):
        series = self.make(20)
        batch = dat.window(series, 4)
        for b in range(len(batch)):
            p = batch.indices[b]
            np.testing.assert_array_equal(batch.inputs[b], series.values[p - 4:p])
            assert batch.targets[b] == series.values[p, -1]

    def test_stride(self):
        batch = dat.window(self.make(20), 4, stride=3)
        np.testing.assert_array_equal(batch.indices, [4, 7, 10, 13, 16, 19])

    def test_too_short(self):
        with pytest.raises(ContractError):
            dat.window(self.make(4), 4)

    def test_bad_T(self):
        with pytest.raises(ContractError):
            dat.window(self.make(10), 1)


class TestNormalize:
    def test_roundtrip_identity(self):
        rng = np.random.default_rng(0)
        values = rng.standard_normal((100, 4)) * 7 + 3
        stats = dat.compute_stats(values)
        assert np.abs(stats.inverse(stats.transform(values)) - values).max() <= 1e-12

    def test_constant_column(self):
        values = np.column_stack([np.full(50, 4.2), np.arange(50.0)])
        stats = dat.compute_stats(values)
        normed = stats.transform(values)
        np.testing.assert_array_equal(normed[:, 0], np.zeros(50))
        np.testing.assert_allclose(stats.inverse(normed), values, atol=1e-12)

    def test_standardizes_large_sample(self):
        rng = np.random.default_rng(1)
        values = rng.normal(5.0, 3.0, size=(10_000, 2))
        normed = dat.compute_stats(values).transform(values)
        assert np.abs(normed.mean(axis=0)).max() <= 0.05
        assert np.abs(normed.std(axis=0) - 1.0).max() <= 0.05

    def test_inverse_target_matches_inverse(self):
        rng = np.random.default_rng(2)
        values = rng.standard_normal((30, 3)) * 2 + 1
        stats = dat.compute_stats(values)
        y = rng.standard_normal(10)
        full = stats.inverse(np.column_stack([np.zeros((10, 2)), y]))[:, -1]
        np.testing.assert_allclose(stats.inverse_target(y), full, atol=1e-12)


class TestDifference:
    def test_linear_ramp_becomes_constant(self):
        series = dat.RawSeries(names=["a", "y"],
                               values=np.column_stack([np.arange(10.0) * 2,
                                                       np.arange(10.0)]))
        out = dat.difference(series)
        np.testing.assert_allclose(out.values, np.tile([2.0, 1.0], (9, 1)))

    def test_disabled_is_identity(self):
        series = dat.RawSeries(names=["y"], values=np.arange(5.0)[:, None])
        assert dat.difference(series, enabled=False) is series

    def test_cumsum_restores(self):
        rng = np.random.default_rng(3)
        values = rng.standard_normal((20, 2))
        out = dat.difference(dat.RawSeries(names=["a", "y"], values=values))
        restored = values[0] + np.cumsum(out.values, axis=0)
        assert np.abs(restored - values[1:]).max() <= 1e-12


class TestSplitAndPrepare:
    def make_series(self, L=200, n=3, seed=4):
        rng = np.random.default_rng(seed)
        return dat.RawSeries(names=["a", "b", "y"],
                             values=rng.standard_normal((L, n)))

    def test_fractions(self):
        series = self.make_series(200)
        train, valid, test = dat.chrono_split(series, dat.SplitSpec())
        assert (train.length, valid.length, test.length) == (140, 20, 40)

    def test_chronological_order(self):
        series = self.make_series(100)
        train, valid, test = dat.chrono_split(series, dat.SplitSpec())
        np.testing.assert_array_equal(
            np.vstack([train.values, valid.values, test.values]), series.values)

    def test_bad_fractions(self):
        with pytest.raises(ConfigError):
            dat.chrono_split(self.make_series(), dat.SplitSpec(0.5, 0.1, 0.1))

    def test_no_window_crosses_boundary(self):
        series = self.make_series(300)
        T = 8
        datasets = dat.prepare(series, window_T=T)
        n_train = int(300 * 0.7)
        n_valid = int(300 * 0.1)
        assert datasets.train.batch.indices.max() <= n_train - 1
        # window inputs inside each split reproduce raw rows of that split only
        raw_valid = series.values[n_train:n_train + n_valid]
        b = datasets.valid.batch
        p = b.indices[0]
        np.testing.assert_allclose(
            datasets.stats.inverse(b.inputs[0]), raw_valid[p - T:p], atol=1e-12)

    def test_stats_come_from_train_rows_only(self):
        series = self.make_series(250)
        datasets = dat.prepare(series, window_T=5)
        expect = dat.compute_stats(series.values[:int(250 * 0.7)])
        np.testing.assert_array_equal(datasets.stats.mean, expect.mean)
        np.testing.assert_array_equal(datasets.stats.std, expect.std)

    def test_window_counts_per_split(self):
        series = self.make_series(400)
        datasets = dat.prepare(series, window_T=10)
        assert len(datasets.train.batch) == 280 - 10
        assert len(datasets.valid.batch) == 40 - 10
        assert len(datasets.test.batch) == 80 - 10

    def test_targets_orig_invert_normalization(self):
        series = self.make_series(300, seed=5)
        datasets = dat.prepare(series, window_T=6)
        b = datasets.test.batch
        np.testing.assert_allclose(datasets.stats.inverse_target(b.targets),
                                   datasets.test.targets_orig, atol=1e-12)
