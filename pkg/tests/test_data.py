"""Dataset pipeline tests: CSV, imputation, scaling, splits, windows, synth."""

import numpy as np
import pytest

from ladbnet import data as D
from ladbnet.errors import ConfigurationError, DataError, InsufficientDataError, StateError
from ladbnet.features import HolidayCalendar


def write_lines(path, rows):
    path.write_text("datetime,DBT,RH,kW\n" + "".join(r + "\n" for r in rows))


def test_load_csv_three_rows(tmp_path):
    path = tmp_path / "d.csv"
    write_lines(path, [
        "2024-01-01 00:00:00,24.0,60.0,50.0",
        "2024-01-01 00:10:00,24.1,60.5,51.0",
        "2024-01-01 00:20:00,24.2,61.0,52.0",
    ])
    frame = D.load_csv(path)
    assert len(frame) == 3
    assert frame.kw.tolist() == [50.0, 51.0, 52.0]


def test_load_csv_rejects_bad_header(tmp_path):
    path = tmp_path / "d.csv"
    path.write_text("datetime,DBT,RH\n2024-01-01 00:00,24,60\n")
    with pytest.raises(DataError, match="header"):
        D.load_csv(path)


def test_load_csv_sorts_and_rejects_duplicates(tmp_path):
    path = tmp_path / "d.csv"
    write_lines(path, [
        "2024-01-01 00:10:00,24.1,60.0,51.0",
        "2024-01-01 00:00:00,24.0,60.0,50.0",
    ])
    frame = D.load_csv(path)
    assert frame.kw.tolist() == [50.0, 51.0]

    write_lines(path, [
        "2024-01-01 00:00:00,24.0,60.0,50.0",
        "2024-01-01 00:00:00,24.0,60.0,50.0",
    ])
    with pytest.raises(DataError, match="duplicate"):
        D.load_csv(path)


def test_load_csv_materializes_gaps(tmp_path):
    path = tmp_path / "d.csv"
    write_lines(path, [
        "2024-01-01 00:00:00,24.0,60.0,50.0",
        "2024-01-01 00:30:00,24.3,60.0,53.0",
    ])
    frame = D.load_csv(path)
    assert len(frame) == 4
    assert np.isnan(frame.kw[1]) and np.isnan(frame.kw[2])
    assert frame.kw[3] == 53.0


def test_load_csv_rejects_off_grid_timestamp(tmp_path):
    path = tmp_path / "d.csv"
    write_lines(path, [
        "2024-01-01 00:00:00,24.0,60.0,50.0",
        "2024-01-01 00:05:00,24.0,60.0,50.0",
    ])
    with pytest.raises(DataError, match="grid"):
        D.load_csv(path)


def test_load_csv_error_carries_line_number(tmp_path):
    path = tmp_path / "d.csv"
    write_lines(path, [
        "2024-01-01 00:00:00,24.0,60.0,50.0",
        "2024-01-01 00:10:00,24.0,sixty,50.0",
    ])
    with pytest.raises(DataError, match="line 3"):
        D.load_csv(path)


def test_load_csv_validates_ranges(tmp_path):
    path = tmp_path / "d.csv"
    write_lines(path, ["2024-01-01 00:00:00,24.0,150.0,50.0"])
    with pytest.raises(DataError, match="RH"):
        D.load_csv(path)
    write_lines(path, ["2024-01-01 00:00:00,24.0,60.0,-1.0"])
    with pytest.raises(DataError, match="kW"):
        D.load_csv(path)


def test_load_csv_empty_cell_is_missing(tmp_path):
    path = tmp_path / "d.csv"
    write_lines(path, [
        "2024-01-01 00:00:00,24.0,60.0,",
        "2024-01-01 00:10:00,24.0,60.0,51.0",
    ])
    frame = D.load_csv(path)
    assert np.isnan(frame.kw[0]) and frame.kw[1] == 51.0


def test_csv_roundtrip(tmp_path):
    frame = D.synth_generate(50, seed=3)
    path = tmp_path / "d.csv"
    D.write_csv(frame, path)
    back = D.load_csv(path)
    assert len(back) == 50
    np.testing.assert_allclose(back.kw, frame.kw, atol=5e-4)
    assert np.array_equal(back.timestamps, frame.timestamps.astype("datetime64[m]"))


def mkframe(kw, dbt=None, rh=None):
    n = len(kw)
    ts = np.datetime64("2024-01-01T00:00", "m") + np.arange(n) * np.timedelta64(10, "m")
    return D.RawFrame(
        ts,
        np.asarray(dbt if dbt is not None else np.full(n, 24.0), np.float64),
        np.asarray(rh if rh is not None else np.full(n, 60.0), np.float64),
        np.asarray(kw, np.float64),
    )


def test_impute_midpoint():
    frame = mkframe([10.0, np.nan, 30.0])
    out = D.impute_linear(frame)
    assert out.kw.tolist() == [10.0, 20.0, 30.0]


def test_impute_two_consecutive():
    frame = mkframe([0.0, np.nan, np.nan, 3.0])
    out = D.impute_linear(frame)
    assert out.kw.tolist() == [0.0, 1.0, 2.0, 3.0]


def test_impute_no_gaps_returns_identical_values():
    frame = mkframe(np.random.default_rng(0).uniform(10, 90, 40))
    out = D.impute_linear(frame)
    assert out.kw.tobytes() == frame.kw.tobytes()
    assert out.dbt.tobytes() == frame.dbt.tobytes()


def test_impute_rejects_edge_gaps():
    with pytest.raises(DataError, match="leading"):
        D.impute_linear(mkframe([np.nan, 10.0, 20.0]))
    with pytest.raises(DataError, match="trailing"):
        D.impute_linear(mkframe([10.0, 20.0, np.nan]))


def test_scaler_affine_map_and_roundtrip():
    values = np.zeros((3, 28))
    values[:, 0] = [8.2, 100.0, 187.3]
    scaler = D.MinMaxScaler().fit(values)
    out = scaler.transform(values)
    assert out[0, 0] == 0.0 and abs(out[2, 0] - 1.0) < 1e-7
    kw = np.array([8.2, 55.5, 187.3])
    back = scaler.invert_target(scaler.transform_target(kw))
    np.testing.assert_allclose(back, kw, rtol=1e-6)


def test_scaler_out_of_range_unclipped():
    values = np.zeros((2, 28))
    values[:, 0] = [10.0, 20.0]
    scaler = D.MinMaxScaler().fit(values)
    probe = np.zeros((1, 28))
    probe[0, 0] = 30.0
    assert scaler.transform(probe)[0, 0] == 2.0


def test_scaler_constant_column_maps_to_zero():
    values = np.ones((4, 28)) * 7.0
    scaler = D.MinMaxScaler().fit(values)
    assert np.all(scaler.constant)
    assert np.all(scaler.transform(values) == 0.0)


def test_scaler_before_fit_raises():
    with pytest.raises(StateError):
        D.MinMaxScaler().transform(np.zeros((1, 28)))


def test_split_counts_match_documented_rule():
    assert D.split_counts(90720) == (63504, 13608, 13608)
    assert D.split_counts(10) == (7, 1, 2)
    assert D.split_counts(90576) == (63403, 13586, 13587)


def test_split_ratio_floor_uses_exact_decimals():
    # 0.7 as a binary float is slightly below 7/10; the exact-decimal rule
    # must still yield 63,504 rather than 63,503
    assert D.split_counts(90720, (0.70, 0.15, 0.15))[0] == 63504


def test_split_ratios_must_sum_to_one():
    with pytest.raises(ConfigurationError):
        D.split_counts(100, (0.5, 0.3, 0.3))


def test_chrono_split_ordering_and_minimum():
    (a0, a1), (b0, b1), (c0, c1) = D.chrono_split(1000)
    assert a0 == 0 and a1 == b0 and b1 == c0 and c1 == 1000
    assert a1 - a0 > 0 and b1 - b0 > 0
    with pytest.raises(InsufficientDataError):
        D.chrono_split(1000, min_segment=216)
    D.chrono_split(2000, min_segment=216)  # 1400/300/300, all >= 216


def test_window_counts_at_boundary():
    values = np.random.default_rng(0).uniform(0, 1, (216, 28)).astype(np.float32)
    kw = np.arange(216, dtype=np.float64)
    minutes = np.arange(216, dtype=np.int64)
    view = D.WindowView(values, kw, minutes)
    assert len(view) == 1
    view217 = D.WindowView(np.vstack([values, values[:1]]), np.arange(217.0), np.arange(217))
    assert len(view217) == 2


def test_window_alignment():
    n = 300
    values = np.zeros((n, 28), np.float32)
    values[:, 0] = np.arange(n) / 1000.0
    values[:, 1] = np.arange(n)
    kw = np.arange(n, dtype=np.float64) + 5.0
    view = D.WindowView(values, kw, np.arange(n, dtype=np.int64))
    x, y = view.batch([3])
    assert x.shape == (1, 144, 27) and y.shape == (1, 72)
    assert x[0, 0, 0] == 3.0  # first input column is feature column 1
    np.testing.assert_allclose(y[0], (np.arange(147, 219)) / 1000.0, rtol=1e-6)
    np.testing.assert_allclose(view.targets_kw([3])[0], np.arange(147, 219) + 5.0)
    np.testing.assert_allclose(view.naive_forecast_kw([3])[0], np.arange(3, 75) + 5.0)


def test_overlapping_window_targets_are_consistent():
    frame = D.synth_generate(2000, seed=9)
    ds = D.prepare(frame, HolidayCalendar(), ratios=(0.7, 0.15, 0.15))
    view = ds.view("train")
    _, y = view.batch([0, 1])
    np.testing.assert_array_equal(y[0, 1:], y[1, :-1])


def test_prepare_counts_and_no_leakage():
    frame = D.synth_generate(2000, seed=5)
    ds = D.prepare(frame, HolidayCalendar())
    assert ds.raw_rows == 2000
    assert ds.nominal_counts == D.split_counts(2000)
    assert ds.counts() == (1299, 278, 279)  # floor/floor/remainder over 1856 valid
    train_hi = ds.bounds[0][1]
    assert float(ds.scaler.data_max[0]) == ds.kw_raw[:train_hi].max()
    # normalized train target hits 1 at the train max, test may exceed 1
    assert ds.values[:train_hi, 0].max() == pytest.approx(1.0, abs=1e-6)


def test_prepare_rejects_tiny_input():
    frame = D.synth_generate(800, seed=5)
    with pytest.raises(InsufficientDataError):
        D.prepare(frame, HolidayCalendar())  # 656 valid rows, test segment < 216


def test_dataset_save_load_roundtrip(tmp_path):
    frame = D.synth_generate(2000, seed=6)
    ds = D.prepare(frame, HolidayCalendar())
    p1, p2 = tmp_path / "a.npz", tmp_path / "b.npz"
    D.save_dataset(ds, p1)
    D.save_dataset(ds, p2)
    assert p1.read_bytes() == p2.read_bytes()
    back = D.load_dataset(p1)
    assert back.bounds == ds.bounds
    assert back.nominal_counts == ds.nominal_counts
    assert np.array_equal(back.values, ds.values)
    assert np.array_equal(back.kw_raw, ds.kw_raw)
    assert back.scaler.columns == ds.scaler.columns
    assert np.array_equal(back.scaler.data_min, ds.scaler.data_min)


def test_synth_is_deterministic():
    a = D.synth_generate(500, seed=11)
    b = D.synth_generate(500, seed=11)
    assert a.kw.tobytes() == b.kw.tobytes()
    assert a.dbt.tobytes() == b.dbt.tobytes()
    c = D.synth_generate(500, seed=12)
    assert a.kw.tobytes() != c.kw.tobytes()


def test_synth_calibration_statistics():
    frame = D.synth_generate(90720, seed=42)
    assert abs(frame.kw.mean() - 65.4) <= 5.0
    assert abs(frame.kw.std() - 28.9) <= 5.0
    assert frame.kw.min() >= 5.0
    assert frame.dbt.min() >= 15.2 and frame.dbt.max() <= 32.8
    assert frame.rh.min() >= 32.0 and frame.rh.max() <= 95.0


def test_generator_profile_rejects_unknown_keys():
    with pytest.raises(ConfigurationError):
        D.GeneratorProfile.from_dict({"daily_amp": 20.0, "bogus": 1})
    p = D.GeneratorProfile.from_dict({"daily_amp": 20.0})
    assert p.daily_amp == 20.0


def test_synth_rejects_zero_rows():
    with pytest.raises(ConfigurationError):
        D.synth_generate(0, seed=1)
