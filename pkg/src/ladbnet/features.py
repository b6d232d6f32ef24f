"""Feature engineering: raw sensor frames to the fixed 28-column table.

Column order is a format contract (the scaler record in model files refers
to it); see COLUMNS. Column 0 is the prediction target, columns 1..27 feed
the network.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from .errors import DataError, InsufficientDataError

STEP_MINUTES = 10
LAG_STEPS = (6, 12, 24, 72, 144)
MAX_LAG = max(LAG_STEPS)

COLUMNS = (
    "kW",
    "DBT",
    "RH",
    "hour_sin",
    "hour_cos",
    "dayofweek_sin",
    "dayofweek_cos",
    "month_sin",
    "month_cos",
    "weekend",
    "is_holiday",
    "is_business_hours",
    "is_night",
    "is_morning_peak",
    "is_evening_peak",
    "kW_lag_6",
    "kW_lag_12",
    "kW_lag_24",
    "kW_lag_72",
    "kW_lag_144",
    "kW_rolling_mean_6",
    "kW_rolling_mean_12",
    "kW_rolling_mean_24",
    "kW_rolling_std_12",
    "kW_rolling_std_24",
    "kW_rolling_max_24",
    "kW_rolling_min_24",
    "temp_humidity_interaction",
)
TARGET_COLUMN = COLUMNS[0]
INPUT_COLUMNS = COLUMNS[1:]

# contextual flag boundaries, fractional hours, half-open ranges
NIGHT_RANGE = (22.0, 6.0)  # wraps midnight
BUSINESS_RANGE = (8.0, 18.0)
MORNING_PEAK_RANGE = (7.0, 9.0)
EVENING_PEAK_RANGE = (17.0, 20.0)


@dataclasses.dataclass
class RawFrame:
    """Uniform 10-minute series of building telemetry; NaN marks missing."""

    timestamps: np.ndarray  # datetime64[m], strictly increasing, 10-min step
    dbt: np.ndarray
    rh: np.ndarray
    kw: np.ndarray

    def __len__(self):
        return len(self.timestamps)

    def validate_grid(self):
        if len(self.timestamps) > 1:
            deltas = np.diff(self.timestamps.astype("datetime64[m]").astype(np.int64))
            if not np.all(deltas == STEP_MINUTES):
                bad = int(np.argmax(deltas != STEP_MINUTES))
                raise DataError(
                    f"timestamps must advance by {STEP_MINUTES} minutes; "
                    f"row {bad + 1} jumps by {int(deltas[bad])} minutes"
                )


class HolidayCalendar:
    """Set of dates treated as holidays."""

    def __init__(self, dates=()):
        self.dates = frozenset(np.datetime64(d, "D") for d in dates)

    @classmethod
    def from_file(cls, path):
        """Parse a text file with one ISO date per line (blank lines skipped)."""
        dates = []
        with open(path, "r", encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                text = line.strip()
                if not text or text.startswith("#"):
                    continue
                try:
                    dates.append(np.datetime64(text, "D"))
                except ValueError as exc:
                    raise DataError(f"{path}: line {lineno}: invalid ISO date {text!r}") from exc
        return cls(dates)

    def mask(self, timestamps) -> np.ndarray:
        days = timestamps.astype("datetime64[D]")
        if not self.dates:
            return np.zeros(len(days), dtype=bool)
        table = np.array(sorted(self.dates), dtype="datetime64[D]")
        idx = np.searchsorted(table, days)
        idx = np.clip(idx, 0, len(table) - 1)
        return table[idx] == days


@dataclasses.dataclass
class FeatureMatrix:
    """The 28-column table plus row timestamps and the first fully-defined row."""

    columns: tuple
    values: np.ndarray  # (R, 28) float64
    timestamps: np.ndarray  # (R,) datetime64[m]
    valid_from: int

    def valid_values(self):
        return self.values[self.valid_from:]

    def valid_timestamps(self):
        return self.timestamps[self.valid_from:]


def _minutes(timestamps):
    return timestamps.astype("datetime64[m]").astype(np.int64)


def _frac_hour(timestamps):
    return (_minutes(timestamps) % (24 * 60)) / 60.0


def _dayofweek(timestamps):
    # epoch day 0 (1970-01-01) was a Thursday; 0 = Monday
    return (_minutes(timestamps) // (24 * 60) + 3) % 7


def _month_index(timestamps):
    return timestamps.astype("datetime64[M]").astype(np.int64) % 12


def cyclic_encode(frame: RawFrame):
    """Smooth encodings of hour, weekday, and month.

    Hour and weekday include the intra-day fraction so consecutive rows stay
    close across midnight; month uses the integer index 0..11.
    """
    hour = _frac_hour(frame.timestamps)
    dow = (_minutes(frame.timestamps) / (24.0 * 60.0) + 3.0) % 7.0
    month = _month_index(frame.timestamps).astype(np.float64)
    cols = np.column_stack(
        [
            np.sin(2 * np.pi * hour / 24.0),
            np.cos(2 * np.pi * hour / 24.0),
            np.sin(2 * np.pi * dow / 7.0),
            np.cos(2 * np.pi * dow / 7.0),
            np.sin(2 * np.pi * month / 12.0),
            np.cos(2 * np.pi * month / 12.0),
        ]
    )
    return COLUMNS[3:9], cols


def _in_range(hour, lo, hi):
    if lo <= hi:
        return (hour >= lo) & (hour < hi)
    return (hour >= lo) | (hour < hi)  # wraps midnight


def contextual_flags(frame: RawFrame, calendar: HolidayCalendar):
    hour = _frac_hour(frame.timestamps)
    dow = _dayofweek(frame.timestamps)
    holiday = calendar.mask(frame.timestamps)
    weekend = dow >= 5
    business = (dow < 5) & _in_range(hour, *BUSINESS_RANGE) & ~holiday
    cols = np.column_stack(
        [
            weekend,
            holiday,
            business,
            _in_range(hour, *NIGHT_RANGE),
            _in_range(hour, *MORNING_PEAK_RANGE),
            _in_range(hour, *EVENING_PEAK_RANGE),
        ]
    ).astype(np.float64)
    return COLUMNS[9:15], cols


def lag_features(frame: RawFrame):
    """kW shifted back by each lag; NaN where the shift runs off the start."""
    n = len(frame)
    cols = np.full((n, len(LAG_STEPS)), np.nan)
    for j, k in enumerate(LAG_STEPS):
        if k < n:
            cols[k:, j] = frame.kw[:-k]
    return COLUMNS[15:20], cols


def _rolling(values, window, fn):
    n = len(values)
    out = np.full(n, np.nan)
    if n >= window:
        view = np.lib.stride_tricks.sliding_window_view(values, window)
        out[window - 1:] = fn(view)
    return out


def rolling_stats(frame: RawFrame):
    """Trailing-window aggregates ending at the current row (inclusive)."""
    kw = frame.kw
    cols = np.column_stack(
        [
            _rolling(kw, 6, lambda v: v.mean(axis=1)),
            _rolling(kw, 12, lambda v: v.mean(axis=1)),
            _rolling(kw, 24, lambda v: v.mean(axis=1)),
            _rolling(kw, 12, lambda v: v.std(axis=1)),  # population denominator
            _rolling(kw, 24, lambda v: v.max(axis=1)),
            _rolling(kw, 24, lambda v: v.min(axis=1)),
        ]
    )
    names = ("kW_rolling_mean_6", "kW_rolling_mean_12", "kW_rolling_mean_24",
             "kW_rolling_std_12", "kW_rolling_max_24", "kW_rolling_min_24")
    return names, cols


def interaction(frame: RawFrame):
    return ("temp_humidity_interaction",), (frame.dbt * frame.rh / 100.0)[:, None]


def assemble(frame: RawFrame, calendar: HolidayCalendar) -> FeatureMatrix:
    """All 28 columns in the documented order; valid_from = largest lag.

    The table spans every input row; rows before valid_from carry NaN in the
    lag/rolling columns and must not reach downstream windowing.
    """
    if len(frame) < MAX_LAG + 1:
        raise InsufficientDataError(
            f"need at least {MAX_LAG + 1} rows to define all lags, got {len(frame)}"
        )
    for name, arr in (("DBT", frame.dbt), ("RH", frame.rh), ("kW", frame.kw)):
        if np.isnan(arr).any():
            raise DataError(f"column {name} contains missing values; impute before assembly")
    frame.validate_grid()

    _, cyc = cyclic_encode(frame)
    _, flags = contextual_flags(frame, calendar)
    _, lags = lag_features(frame)
    _, rolls = rolling_stats(frame)
    std24 = _rolling(frame.kw, 24, lambda v: v.std(axis=1))
    _, inter = interaction(frame)

    values = np.column_stack(
        [
            frame.kw,
            frame.dbt,
            frame.rh,
            cyc,
            flags,
            lags,
            rolls[:, :4],  # means and std_12
            std24,
            rolls[:, 4:],  # max_24, min_24
            inter,
        ]
    )
    assert values.shape[1] == len(COLUMNS)
    return FeatureMatrix(COLUMNS, values, frame.timestamps.copy(), MAX_LAG)
