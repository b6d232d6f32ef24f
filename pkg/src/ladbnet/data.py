"""Dataset pipeline: CSV ingestion, imputation, scaling, windowing, splits.

Also hosts the seeded synthetic generator used for development and the
calibrated end-to-end checks.
"""

from __future__ import annotations

import csv
import dataclasses
import warnings
from fractions import Fraction

import numpy as np

from . import serialize
from .errors import ConfigurationError, DataError, InsufficientDataError, StateError
from .features import (
    COLUMNS,
    MAX_LAG,
    STEP_MINUTES,
    FeatureMatrix,
    HolidayCalendar,
    RawFrame,
    assemble,
)

CSV_HEADER = ("datetime", "DBT", "RH", "kW")
SEQ_LEN = 144
HORIZON = 72
WINDOW_SPAN = SEQ_LEN + HORIZON  # rows consumed by one window+target pair


def _parse_ts(text):
    return np.datetime64(text.strip().replace(" ", "T"), "m")


def _format_ts(ts):
    return str(ts.astype("datetime64[s]")).replace("T", " ")


def load_csv(path) -> RawFrame:
    """Parse, sort, and regrid a telemetry CSV.

    Rows absent from the 10-minute grid become missing rows (NaN values);
    empty value cells also parse as missing.
    """
    stamps, cols = [], {"DBT": [], "RH": [], "kW": []}
    with open(path, "r", encoding="utf-8", newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or tuple(h.strip() for h in header) != CSV_HEADER:
            raise DataError(f"{path}: expected header {','.join(CSV_HEADER)}, got {header}")
        for row in reader:
            if not row:
                continue
            line = reader.line_num
            if len(row) != 4:
                raise DataError(f"{path}: line {line}: expected 4 fields, got {len(row)}")
            try:
                stamps.append(_parse_ts(row[0]))
            except ValueError as exc:
                raise DataError(f"{path}: line {line}: bad timestamp {row[0]!r}") from exc
            for name, cell in zip(("DBT", "RH", "kW"), row[1:]):
                cell = cell.strip()
                if not cell:
                    cols[name].append(np.nan)
                    continue
                try:
                    value = float(cell)
                except ValueError as exc:
                    raise DataError(f"{path}: line {line}: bad {name} value {cell!r}") from exc
                if name == "RH" and not 0.0 <= value <= 100.0:
                    raise DataError(f"{path}: line {line}: RH {value} outside [0, 100]")
                if name == "kW" and value < 0.0:
                    raise DataError(f"{path}: line {line}: negative kW {value}")
                cols[name].append(value)
    if not stamps:
        raise DataError(f"{path}: no data rows")
    return build_frame(stamps, cols["DBT"], cols["RH"], cols["kW"], origin=str(path))


def build_frame(stamps, dbt, rh, kw, origin="input") -> RawFrame:
    """Sort parsed rows onto the 10-minute grid; absent grid rows become NaN."""
    ts = np.array(stamps, dtype="datetime64[m]")
    if ts.size == 0:
        raise DataError(f"{origin}: no data rows")
    order = np.argsort(ts, kind="stable")
    ts = ts[order]
    dupes = np.flatnonzero(np.diff(ts).astype(np.int64) == 0)
    if dupes.size:
        raise DataError(f"{origin}: duplicate timestamp {_format_ts(ts[dupes[0]])}")

    minutes = ts.astype(np.int64)
    offsets = minutes - minutes[0]
    if np.any(offsets % STEP_MINUTES):
        bad = int(np.argmax(offsets % STEP_MINUTES != 0))
        raise DataError(f"{origin}: timestamp {_format_ts(ts[bad])} is off the 10-minute grid")

    n = int(offsets[-1] // STEP_MINUTES) + 1
    grid = ts[0] + np.arange(n) * np.timedelta64(STEP_MINUTES, "m")
    frame = RawFrame(grid, np.full(n, np.nan), np.full(n, np.nan), np.full(n, np.nan))
    pos = (offsets // STEP_MINUTES).astype(np.int64)
    for source, target in ((dbt, frame.dbt), (rh, frame.rh), (kw, frame.kw)):
        target[pos] = np.asarray(source, dtype=np.float64)[order]
    return frame


def write_csv(frame: RawFrame, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_HEADER)
        for i in range(len(frame)):
            writer.writerow(
                [
                    _format_ts(frame.timestamps[i]),
                    f"{frame.dbt[i]:.3f}",
                    f"{frame.rh[i]:.3f}",
                    f"{frame.kw[i]:.3f}",
                ]
            )


def impute_linear(frame: RawFrame) -> RawFrame:
    """Fill interior missing values by linear interpolation on the grid.

    Leading or trailing gaps are refused: extrapolation would fabricate data
    outside the observed range.
    """
    out = RawFrame(frame.timestamps.copy(), frame.dbt.copy(), frame.rh.copy(), frame.kw.copy())
    for name, col in (("DBT", out.dbt), ("RH", out.rh), ("kW", out.kw)):
        missing = np.isnan(col)
        if not missing.any():
            continue
        if missing[0] or missing[-1]:
            where = "leading" if missing[0] else "trailing"
            raise DataError(f"column {name} has a {where} gap; cannot extrapolate")
        known = np.flatnonzero(~missing)
        holes = np.flatnonzero(missing)
        col[holes] = np.interp(holes, known, col[known])
    return out


class MinMaxScaler:
    """Per-column affine map to [0,1], fitted on training rows only.

    Constant columns map to 0. Values outside the fitted range pass through
    unclipped. Parameters are float64 so range endpoints map exactly.
    """

    def __init__(self):
        self.columns = None
        self.data_min = None
        self.data_max = None

    @property
    def fitted(self):
        return self.columns is not None

    def fit(self, values, columns=COLUMNS):
        values = np.asarray(values, dtype=np.float64)
        if values.ndim != 2 or values.shape[1] != len(columns):
            raise DataError(f"scaler fit expects (rows, {len(columns)}), got {values.shape}")
        if values.shape[0] < 1:
            raise InsufficientDataError("scaler fit needs at least one row")
        self.columns = tuple(columns)
        self.data_min = values.min(axis=0)
        self.data_max = values.max(axis=0)
        return self

    def _check(self):
        if not self.fitted:
            raise StateError("scaler used before fit")

    @property
    def constant(self):
        self._check()
        return self.data_max == self.data_min

    def transform(self, values):
        self._check()
        lo = self.data_min
        span = self.data_max - self.data_min
        safe = np.where(span == 0.0, 1.0, span)
        out = (np.asarray(values, np.float64) - lo) / safe
        out[..., self.constant] = 0.0
        return out

    def invert_target(self, norm_kw):
        """Map normalized column-0 predictions back to kW."""
        self._check()
        lo = float(self.data_min[0])
        span = float(self.data_max[0]) - lo
        return np.asarray(norm_kw, np.float64) * span + lo

    def transform_target(self, kw):
        self._check()
        lo = float(self.data_min[0])
        span = float(self.data_max[0]) - lo
        if span == 0.0:
            return np.zeros_like(np.asarray(kw, np.float64))
        return (np.asarray(kw, np.float64) - lo) / span

    def to_record(self):
        self._check()
        return {
            "columns": list(self.columns),
            "data_min": self.data_min.copy(),
            "data_max": self.data_max.copy(),
        }

    @classmethod
    def from_record(cls, record):
        s = cls()
        s.columns = tuple(record["columns"])
        s.data_min = np.asarray(record["data_min"], np.float64).copy()
        s.data_max = np.asarray(record["data_max"], np.float64).copy()
        return s


def split_counts(n_rows: int, ratios=(0.70, 0.15, 0.15)):
    """Floor train, floor val, remainder to test; ratios read as exact decimals."""
    fracs = [Fraction(str(r)) for r in ratios]
    if len(fracs) != 3 or sum(fracs) != 1:
        raise ConfigurationError(f"split ratios must be three values summing to 1, got {ratios}")
    train = int(n_rows * fracs[0])  # Fraction*int stays exact; int() floors
    val = int(n_rows * fracs[1])
    return train, val, n_rows - train - val


def chrono_split(n_rows: int, ratios=(0.70, 0.15, 0.15), min_segment: int = 0):
    """Contiguous chronological ranges (train, val, test), train earliest."""
    train, val, test = split_counts(n_rows, ratios)
    if min_segment and min(train, val, test) < min_segment:
        raise InsufficientDataError(
            f"split {train}/{val}/{test} has a segment below {min_segment} rows"
        )
    return (0, train), (train, train + val), (train + val, n_rows)


class WindowView:
    """Stride-1 windows over one chronological segment, gathered lazily.

    Materializing every window of a long segment would cost gigabytes; this
    view keeps the (rows, 28) normalized matrix and builds batches on demand.
    """

    def __init__(self, values_norm, kw_raw, minutes, seq_len=SEQ_LEN, horizon=HORIZON):
        self.values = np.ascontiguousarray(values_norm, dtype=np.float32)
        self.kw_raw = np.asarray(kw_raw, np.float64)
        self.minutes = np.asarray(minutes, np.int64)
        self.seq_len = seq_len
        self.horizon = horizon
        self.n = max(0, len(self.values) - seq_len - horizon + 1)

    def __len__(self):
        return self.n

    def _check(self, idx):
        idx = np.asarray(idx, np.int64)
        if idx.size and (idx.min() < 0 or idx.max() >= self.n):
            raise IndexError(f"window index out of range [0, {self.n})")
        return idx

    def batch(self, idx):
        """(X, Y): inputs (b, seq_len, 27) and normalized targets (b, horizon)."""
        idx = self._check(idx)
        rows = idx[:, None] + np.arange(self.seq_len)
        x = self.values[rows][:, :, 1:]
        trows = idx[:, None] + (self.seq_len + np.arange(self.horizon))
        y = self.values[trows, 0]
        return x, y

    def targets_kw(self, idx):
        """Raw-kW targets aligned with batch()'s Y."""
        idx = self._check(idx)
        trows = idx[:, None] + (self.seq_len + np.arange(self.horizon))
        return self.kw_raw[trows]

    def target_minutes(self, idx):
        idx = self._check(idx)
        trows = idx[:, None] + (self.seq_len + np.arange(self.horizon))
        return self.minutes[trows]

    def naive_forecast_kw(self, idx):
        """Same-time-yesterday baseline: step j of window t reads raw kW[t+j]."""
        idx = self._check(idx)
        rows = idx[:, None] + np.arange(self.horizon)
        return self.kw_raw[rows]


@dataclasses.dataclass
class PreparedDataset:
    """Normalized valid-row matrix with split bounds and the fitted scaler."""

    values: np.ndarray  # (V, 28) float32, normalized
    kw_raw: np.ndarray  # (V,) float64
    minutes: np.ndarray  # (V,) int64 epoch minutes
    bounds: tuple  # ((0,a),(a,b),(b,V)) over valid rows
    scaler: MinMaxScaler
    raw_rows: int
    nominal_counts: tuple  # split of the raw row count, before the lag drop
    seq_len: int = SEQ_LEN
    horizon: int = HORIZON

    SPLITS = ("train", "val", "test")

    def segment(self, split):
        lo, hi = self.bounds[self.SPLITS.index(split)]
        return lo, hi

    def view(self, split) -> WindowView:
        lo, hi = self.segment(split)
        if hi - lo < self.seq_len + self.horizon:
            warnings.warn(f"{split} segment of {hi - lo} rows is too short for one window")
        return WindowView(
            self.values[lo:hi], self.kw_raw[lo:hi], self.minutes[lo:hi], self.seq_len, self.horizon
        )

    def counts(self):
        return tuple(hi - lo for lo, hi in self.bounds)


def prepare(frame: RawFrame, calendar: HolidayCalendar, ratios=(0.70, 0.15, 0.15),
            seq_len=SEQ_LEN, horizon=HORIZON) -> PreparedDataset:
    """Impute, derive features, split chronologically, fit scaler, normalize.

    Ratios are applied to valid feature rows (after the 144-row lag drop);
    the nominal raw-row split is retained for reporting.
    """
    frame = impute_linear(frame)
    matrix = assemble(frame, calendar)
    values = matrix.valid_values()
    minutes = matrix.valid_timestamps().astype("datetime64[m]").astype(np.int64)
    n_valid = len(values)
    bounds = chrono_split(n_valid, ratios, min_segment=seq_len + horizon)
    scaler = MinMaxScaler().fit(values[: bounds[0][1]], matrix.columns)
    normalized = scaler.transform(values).astype(np.float32)
    return PreparedDataset(
        values=normalized,
        kw_raw=values[:, 0].copy(),
        minutes=minutes,
        bounds=bounds,
        scaler=scaler,
        raw_rows=len(frame),
        nominal_counts=split_counts(len(frame), ratios),
        seq_len=seq_len,
        horizon=horizon,
    )


def save_dataset(ds: PreparedDataset, path) -> None:
    serialize.save_npz_deterministic(
        path,
        {
            "values": ds.values,
            "kw_raw": ds.kw_raw,
            "minutes": ds.minutes,
            "bounds": np.asarray(ds.bounds, np.int64),
            "scaler_min": ds.scaler.data_min,
            "scaler_max": ds.scaler.data_max,
            "columns": np.array(ds.scaler.columns),
            "shape_params": np.asarray([ds.seq_len, ds.horizon, ds.raw_rows], np.int64),
            "nominal_counts": np.asarray(ds.nominal_counts, np.int64),
        },
    )


def load_dataset(path) -> PreparedDataset:
    arrays = serialize.load_npz(path)
    scaler = MinMaxScaler.from_record(
        {
            "columns": [str(c) for c in arrays["columns"]],
            "data_min": arrays["scaler_min"],
            "data_max": arrays["scaler_max"],
        }
    )
    seq_len, horizon, raw_rows = (int(v) for v in arrays["shape_params"])
    return PreparedDataset(
        values=arrays["values"],
        kw_raw=arrays["kw_raw"],
        minutes=arrays["minutes"],
        bounds=tuple((int(lo), int(hi)) for lo, hi in arrays["bounds"]),
        scaler=scaler,
        raw_rows=raw_rows,
        nominal_counts=tuple(int(v) for v in arrays["nominal_counts"]),
        seq_len=seq_len,
        horizon=horizon,
    )


@dataclasses.dataclass
class GeneratorProfile:
    """Shape constants for the synthetic building-load series."""

    start: str = "2024-01-01 00:00"
    base_kw: float = 54.0
    daily_amp: float = 24.0
    weekend_dip: float = 12.0
    business_uplift: float = 20.0
    temp_coeff: float = 2.0
    ar_rho: float = 0.95
    ar_sigma: float = 2.5
    noise_amp: float = 3.0
    clamp_floor: float = 5.0
    dbt_mean: float = 24.3
    dbt_seasonal_amp: float = 3.0
    dbt_daily_amp: float = 4.5
    dbt_noise: float = 0.8
    rh_mean: float = 68.5
    rh_slope: float = 2.2
    rh_noise: float = 5.0

    @classmethod
    def from_dict(cls, raw: dict):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown generator profile keys {sorted(unknown)}")
        return cls(**raw)


def synth_generate(rows: int, seed: int, profile: GeneratorProfile | None = None) -> RawFrame:
    """Deterministic synthetic telemetry with daily/weekly/thermal structure.

    Load = base + daily sinusoid + weekend dip + business-hours uplift +
    cooling demand above 20 degrees + slow AR(1) wander + bounded noise,
    clamped at the profile floor so percentage errors stay well-defined.
    """
    if rows < 1:
        raise ConfigurationError(f"rows must be >= 1, got {rows}")
    p = profile or GeneratorProfile()
    rng = np.random.default_rng(seed)

    start = _parse_ts(p.start)
    ts = start + np.arange(rows) * np.timedelta64(STEP_MINUTES, "m")
    minutes = ts.astype(np.int64)
    hour = (minutes % (24 * 60)) / 60.0
    dow = (minutes // (24 * 60) + 3) % 7
    day_frac = (minutes / (24 * 60.0)) % 365.25 / 365.25

    dbt = (
        p.dbt_mean
        + p.dbt_seasonal_amp * np.sin(2 * np.pi * (day_frac - 0.22))
        + p.dbt_daily_amp * np.sin(2 * np.pi * (hour - 10.0) / 24.0)
        + rng.normal(0.0, p.dbt_noise, rows)
    )
    dbt = np.clip(dbt, 15.2, 32.8)
    rh = np.clip(
        p.rh_mean - p.rh_slope * (dbt - p.dbt_mean) + rng.normal(0.0, p.rh_noise, rows),
        32.0,
        95.0,
    )

    weekend = dow >= 5
    business = (~weekend) & (hour >= 8.0) & (hour < 18.0)
    daily = p.daily_amp * np.sin(2 * np.pi * (hour - 9.0) / 24.0)
    cooling = p.temp_coeff * np.clip(dbt - 20.0, 0.0, None)

    # slow mean-reverting wander; the short loop keeps the recurrence exact
    eps = rng.normal(0.0, p.ar_sigma, rows)
    wander = np.empty(rows)
    acc = 0.0
    for i in range(rows):
        acc = p.ar_rho * acc + eps[i]
        wander[i] = acc

    noise = rng.uniform(-p.noise_amp, p.noise_amp, rows)
    kw = (
        p.base_kw
        + daily
        - p.weekend_dip * weekend
        + p.business_uplift * business
        + cooling
        + wander
        + noise
    )
    kw = np.clip(kw, p.clamp_floor, None)
    return RawFrame(ts, dbt, rh, kw)
