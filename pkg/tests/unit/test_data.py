from pathlib import Path

import numpy as np
import pytest

from stockbot.data import (
    PriceSeries,
    apply_norm,
    fit_norm,
    ingest_csv,
    invert_norm,
    make_windows,
    prepare,
    split_point,
    split_train_test,
)
from stockbot.errors import (
    ConfigError,
    DataError,
    DegenerateSeriesError,
    FormatError,
    InputNotFoundError,
    InsufficientDataError,
)

FIXTURE = Path(__file__).resolve().parents[1] / "fixtures" / "prices_2010_2020.csv"


def write_csv(tmp_path, text, name="TEST.csv"):
    path = tmp_path / name
    path.write_text(text)
    return path


def series_of(prices, start="2020-01-01"):
    dates = np.arange(np.datetime64(start), np.datetime64(start) + len(prices))
    return PriceSeries("T", dates, np.asarray(prices, dtype=float))


class TestIngest:

    def test_fixture(self):
        series = ingest_csv(FIXTURE)
        assert series.ticker == "prices_2010_2020"
        assert str(series.dates[0]) == "2010-01-04"
        assert str(series.dates[-1]) == "2020-12-31"
        assert np.all(np.diff(series.dates.astype(np.int64)) > 0)
        assert np.all(series.close > 0)

    def test_sorts_rows_by_date(self, tmp_path):
        path = write_csv(tmp_path, "Date,Adj Close\n2020-01-03,3\n2020-01-01,1\n2020-01-02,2\n")
        series = ingest_csv(path, ticker="X")
        assert series.ticker == "X"
        assert series.date_strings() == ["2020-01-01", "2020-01-02", "2020-01-03"]
        np.testing.assert_array_equal(series.close, [1.0, 2.0, 3.0])

    def test_extra_columns_are_ignored(self, tmp_path):
        path = write_csv(tmp_path, "Date,Open,Adj Close,Volume\n2020-01-01,9,1.5,100\n")
        np.testing.assert_array_equal(ingest_csv(path).close, [1.5])

    def test_missing_file(self, tmp_path):
        with pytest.raises(InputNotFoundError):
            ingest_csv(tmp_path / "missing.csv")

    def test_missing_column(self, tmp_path):
        path = write_csv(tmp_path, "Date,Close\n2020-01-01,1\n")
        with pytest.raises(FormatError, match="Adj Close"):
            ingest_csv(path)

    @pytest.mark.parametrize(
        "row, message",
        [
            ("2020-13-01,1", "row 3: unparseable date"),
            ("2020-01-02,abc", "row 3: unparseable price"),
            ("2020-01-02,", "row 3: unparseable price"),
            ("2020-01-02,-4", "row 3: price must be positive"),
            ("2020-01-02,0", "row 3: price must be positive"),
        ],
    )
    def test_bad_rows_name_the_line(self, tmp_path, row, message):
        path = write_csv(tmp_path, f"Date,Adj Close\n2020-01-01,1\n{row}\n")
        with pytest.raises(DataError, match=message):
            ingest_csv(path)

    def test_duplicate_dates(self, tmp_path):
        path = write_csv(tmp_path, "Date,Adj Close\n2020-01-01,1\n2020-01-02,2\n2020-01-01,3\n")
        with pytest.raises(DataError, match="duplicate date 2020-01-01"):
            ingest_csv(path)

    def test_min_rows(self, tmp_path):
        path = write_csv(tmp_path, "Date,Adj Close\n2020-01-01,1\n2020-01-02,2\n")
        with pytest.raises(InsufficientDataError):
            ingest_csv(path, min_rows=3)

    def test_between_is_inclusive(self):
        series = series_of(np.arange(1.0, 11.0))
        sub = series.between("2020-01-03", "2020-01-05")
        assert sub.date_strings() == ["2020-01-03", "2020-01-04", "2020-01-05"]
        assert len(series.between(None, "2020-01-02")) == 2

    def test_arrays_are_read_only(self):
        series = series_of([1.0, 2.0])
        with pytest.raises(ValueError):
            series.close[0] = 5.0


class TestSplit:

    @pytest.mark.parametrize("length, ratio, expected", [(10, 0.8, 8), (5, 0.8, 4), (100, 0.7, 70), (7, 0.5, 3)])
    def test_split_point_floors(self, length, ratio, expected):
        assert split_point(length, ratio) == expected

    @pytest.mark.parametrize("ratio", [0.0, 1.0, -0.1, 1.5])
    def test_ratio_range(self, ratio):
        with pytest.raises(ConfigError):
            split_point(10, ratio)

    def test_split_is_chronological(self):
        train, test = split_train_test(series_of(np.arange(1.0, 11.0)), 0.8)
        np.testing.assert_array_equal(train.close, np.arange(1.0, 9.0))
        np.testing.assert_array_equal(test.close, [9.0, 10.0])

    def test_too_short_for_windows(self):
        with pytest.raises(InsufficientDataError):
            split_train_test(series_of(np.arange(1.0, 11.0)), 0.8, past_history=3, forward_look=1)


class TestNormalization:

    def test_population_statistics(self):
        stats = fit_norm(np.array([1.0, 2.0, 3.0, 4.0]))
        assert stats.mean == 2.5
        assert stats.std == pytest.approx(np.sqrt(1.25))

    def test_inverse(self):
        stats = fit_norm(np.array([3.0, 7.0, 11.0]))
        x = np.array([1.0, 5.0, 100.0])
        np.testing.assert_allclose(invert_norm(apply_norm(x, stats), stats), x, rtol=1e-14)

    def test_constant_training_slice(self):
        with pytest.raises(DegenerateSeriesError):
            fit_norm(np.full(20, 5.0))

    def test_needs_two_points(self):
        with pytest.raises(InsufficientDataError):
            fit_norm(np.array([1.0]))

    def test_round_trips_through_dict(self):
        stats = fit_norm(np.array([1.0, 2.0, 4.0]), source_range=(0, 3))
        assert type(stats).from_dict(stats.to_dict()) == stats


class TestWindows:

    def test_count_and_content(self):
        z = np.arange(10.0)
        ds = make_windows(z, 3, 2)
        assert len(ds) == 10 - 3 - 2 + 1
        np.testing.assert_array_equal(ds.inputs[0], [0.0, 1.0, 2.0])
        np.testing.assert_array_equal(ds.targets[0], [3.0, 4.0])
        np.testing.assert_array_equal(ds.inputs[-1], [5.0, 6.0, 7.0])
        np.testing.assert_array_equal(ds.targets[-1], [8.0, 9.0])

    def test_randomized_counts(self):
        rng = np.random.default_rng(0)
        for _ in range(50):
            T = int(rng.integers(5, 200))
            k = int(rng.integers(1, T - 1))
            h = int(rng.integers(1, T - k + 1))
            assert len(make_windows(rng.standard_normal(T), k, h)) == T - k - h + 1

    def test_batch_shapes(self):
        X, Y = make_windows(np.arange(20.0), 4, 2).batch(np.array([0, 3, 5]))
        assert X.shape == (3, 4, 1)
        assert Y.shape == (3, 2)

    def test_too_short(self):
        with pytest.raises(InsufficientDataError):
            make_windows(np.arange(4.0), 3, 2)

    def test_windows_are_read_only(self):
        ds = make_windows(np.arange(10.0), 3, 1)
        with pytest.raises(ValueError):
            ds.inputs[0, 0] = 1.0


class TestPrepare:

    def test_stats_come_from_the_training_slice(self):
        series = series_of(np.linspace(10.0, 50.0, 100))
        prepared = prepare(series, 0.8, 5, 1)
        assert prepared.split_index == 80
        assert prepared.stats.source_range == (0, 80)
        assert prepared.stats.mean == pytest.approx(np.mean(series.close[:80]))
        assert len(prepared.train) == 80 - 5 - 1 + 1
        np.testing.assert_array_equal(prepared.test_prices, series.close[80:])

    def test_mutating_test_prices_does_not_leak(self):
        rng = np.random.default_rng(4)
        prices = np.exp(np.cumsum(rng.normal(0, 0.02, 300))) * 20
        a = prepare(series_of(prices), 0.8, 10, 2)
        poisoned = prices.copy()
        poisoned[240:] = rng.uniform(1, 1e6, 60)
        b = prepare(series_of(poisoned), 0.8, 10, 2)
        assert a.stats == b.stats
        np.testing.assert_array_equal(a.train.inputs, b.train.inputs)
        np.testing.assert_array_equal(a.train.targets, b.train.targets)
