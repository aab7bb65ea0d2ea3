from datetime import date

import numpy as np
import pandas as pd
import pytest

from core.errors import DataError, ShapeError
from ingest.calendar import calendar_features, calendar_matrix, default_holidays, load_holidays
from ingest.series import HourlySeries, load_series, split_series, training_days, write_series
from ingest.synth import synth_generate


def _write_csv(path, rows, header="timestamp,load_1,price"):
    path.write_text(header + "\n" + "\n".join(rows) + "\n", encoding="utf-8")
    return path


def _day_rows(skip=()):
    return [
        f"2018-07-02T{h:02d}:00:00,{1.0 + h},{5.0 + 0.5 * h}"
        for h in range(24)
        if h not in skip
    ]


# --- calendar ---


def test_independence_day_features():
    f = calendar_features("2018-07-04 14:00")
    assert (f.month_of_year, f.day_of_week, f.hour_of_day, f.is_holiday, f.is_weekend) == (7, 3, 15, 1, 0)


def test_sunday_is_weekend():
    assert calendar_features("2018-07-01 00:00").is_weekend == 1
    assert calendar_features("2018-07-01 00:00").hour_of_day == 1


def test_monday_is_not_weekend():
    for day in pd.date_range("2018-04-02", periods=10, freq="7D"):
        assert calendar_features(day).is_weekend == 0


def test_calendar_matrix_matches_single_features():
    stamps = pd.date_range("2018-07-03 20:00", periods=8, freq="h")
    matrix = calendar_matrix(stamps)
    expected = np.stack([calendar_features(t).as_vector() for t in stamps])
    np.testing.assert_array_equal(matrix, expected)


def test_load_holidays_skips_comments(tmp_path):
    path = tmp_path / "h.txt"
    path.write_text("# comment\n2018-12-25\n\n2018-01-01  # new year\n", encoding="utf-8")
    assert load_holidays(path) == {date(2018, 12, 25), date(2018, 1, 1)}
    assert date(2018, 7, 4) in default_holidays()


def test_load_holidays_rejects_bad_date(tmp_path):
    path = tmp_path / "h.txt"
    path.write_text("2018-13-01\n", encoding="utf-8")
    with pytest.raises(DataError, match=":1:"):
        load_holidays(path)


# --- series ---


def test_load_series_gap_free(tmp_path):
    series = load_series(_write_csv(tmp_path / "d.csv", _day_rows()))
    assert len(series) == 24
    assert series.household_ids == ("1",)
    assert not series.interpolated.any()


def test_load_series_interpolates_single_missing_hour(tmp_path):
    series = load_series(_write_csv(tmp_path / "d.csv", _day_rows(skip=(3,))))
    assert len(series) == 24
    assert series.interpolated[3]
    assert series.loads[3, 0] == pytest.approx((series.loads[2, 0] + series.loads[4, 0]) / 2)
    assert series.price[3] == pytest.approx(6.5)


def test_interpolated_values_lie_between_neighbors(tmp_path):
    series = load_series(_write_csv(tmp_path / "d.csv", _day_rows(skip=(10, 11, 12))), max_missing_fraction=0.5)
    for h in (10, 11, 12):
        assert series.loads[9, 0] <= series.loads[h, 0] <= series.loads[13, 0]


def test_load_series_rejects_long_gap(tmp_path):
    with pytest.raises(DataError, match="consecutive"):
        load_series(_write_csv(tmp_path / "d.csv", _day_rows(skip=(5, 6, 7, 8))), max_missing_fraction=0.5)


def test_load_series_rejects_too_many_missing(tmp_path):
    with pytest.raises(DataError, match="missing"):
        load_series(_write_csv(tmp_path / "d.csv", _day_rows(skip=(3, 9))))


def test_load_series_names_bad_line(tmp_path):
    rows = _day_rows()
    rows[4] = "2018-07-02T04:00:00,abc,5.0"
    with pytest.raises(DataError, match="Line 6"):
        load_series(_write_csv(tmp_path / "d.csv", rows))


def test_load_series_missing_file(tmp_path):
    with pytest.raises(DataError, match="not found"):
        load_series(tmp_path / "nope.csv")


def test_write_then_load_preserves_values(tmp_path, synth_series):
    path = write_series(synth_series, tmp_path / "s.csv")
    again = load_series(path)
    assert again.household_ids == synth_series.household_ids
    np.testing.assert_allclose(again.loads, synth_series.loads, atol=1e-6)
    np.testing.assert_allclose(again.price, synth_series.price, atol=1e-6)


def test_series_rejects_mismatched_columns():
    stamps = pd.date_range("2018-07-01", periods=3, freq="h")
    with pytest.raises(ShapeError):
        HourlySeries(stamps, np.ones((3, 2)), np.ones(3), ("1",))


def test_series_arrays_are_read_only(synth_series):
    with pytest.raises(ValueError):
        synth_series.loads[0, 0] = 99.0


def test_target_values(synth_series):
    np.testing.assert_array_equal(synth_series.target_values("load_2"), synth_series.loads[:, 1])
    np.testing.assert_array_equal(synth_series.target_values("aggregate"), synth_series.loads.sum(axis=1))
    with pytest.raises(DataError):
        synth_series.target_values("load_9")


def test_split_series(synth_series):
    split = split_series(synth_series, "2018-04-08", "2018-04-09")
    assert len(split.test) == 48
    assert len(split.train) == 7 * 24
    assert split.train.timestamps[-1] < split.test.timestamps[0]
    with pytest.raises(DataError):
        split_series(synth_series, "2018-04-01", "2018-04-02")


def test_training_days_need_history(synth_series):
    days = training_days(synth_series, history=73)
    assert days[0] == date(2018, 4, 5)
    assert len(days) == 6


# --- synth ---


def test_synth_is_deterministic():
    a = synth_generate(seed=42, days=5, households=3)
    b = synth_generate(seed=42, days=5, households=3)
    np.testing.assert_array_equal(a.loads, b.loads)
    np.testing.assert_array_equal(a.price, b.price)
    c = synth_generate(seed=43, days=5, households=3)
    assert not np.array_equal(a.loads, c.loads)


def test_synth_peak_band():
    series = synth_generate(seed=42, days=31, households=3)
    for day in series.days():
        peak = series.day_slice(day).aggregate_load().max()
        assert 9.0 <= peak <= 12.0


def test_synth_price_band(synth_series):
    assert synth_series.price.min() >= 2.0
    assert synth_series.price.max() <= 12.0


def test_synth_without_noise_is_periodic():
    series = synth_generate(seed=1, days=4, households=3, noise=0.0)
    days = series.loads.reshape(4, 24, 3)
    for d in range(1, 4):
        np.testing.assert_allclose(days[d], days[0], rtol=0, atol=1e-12)
    np.testing.assert_allclose(series.price.reshape(4, 24)[1:], series.price.reshape(4, 24)[:-1])


def test_synth_rejects_empty():
    with pytest.raises(ValueError):
        synth_generate(seed=1, days=0, households=3)
