"""Derive the 28-column feature table from raw telemetry.

Each row of the table describes one 10-minute timestep: the raw measurements,
cyclic encodings of time, contextual flags, 24 h of target lags, rolling
statistics, and one temperature interaction. The first 144 rows only exist to
seed the lag columns and are dropped before windowing.
"""

import numpy as np

from ladbnet.data import MinMaxScaler, synth_generate
from ladbnet.features import HolidayCalendar, assemble

frame = synth_generate(rows=3 * 144, seed=8)
matrix = assemble(frame, HolidayCalendar())

print(f"columns ({len(matrix.columns)}):")
for i, name in enumerate(matrix.columns):
    print(f"  {i:2d}  {name}")

print(f"\nrows: {len(matrix.values)}  valid from row {matrix.valid_from}")
lagged = matrix.values[: matrix.valid_from]
print("lag columns before that row are NaN:",
      bool(np.isnan(lagged[:, matrix.columns.index("kW_lag_144")]).all()))

# kW_lag_144 really is the same value 24 h (144 steps) earlier
valid = matrix.valid_values()
col = matrix.columns.index("kW_lag_144")
print("kW_lag_144 == kW shifted by a day:",
      bool(np.array_equal(valid[:, col], matrix.values[: len(valid), 0])))

# normalization is fitted on (a stand-in for) the training region only
scaler = MinMaxScaler().fit(valid[:200], matrix.columns)
normalized = scaler.transform(valid)
print(f"\nnormalized fit-region range: [{normalized[:200].min():.3f}, "
      f"{normalized[:200].max():.3f}] (later rows may exceed [0, 1])")
