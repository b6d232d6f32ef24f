"""Multi-horizon evaluation, the seasonal-naive yardstick, and robustness.

Accuracy is reported as MAPE and R² per forecast horizon (1 h to 12 h ahead),
pooling all steps up to each horizon. The same report run against the
same-time-yesterday baseline shows how much the model actually adds, and the
missing-data harness measures how gracefully accuracy degrades when rows are
knocked out and linearly re-imputed.
"""

from ladbnet.data import prepare, synth_generate
from ladbnet.features import HolidayCalendar
from ladbnet.model import ModelConfig, build
from ladbnet.training import TrainConfig, train
from ladbnet import evaluate as ev

config = ModelConfig(
    seq_len=48, lag_window=12, horizon=24,
    conv_filters=(16, 16), dilated_filters=24,
    lag_dense=(32, 16), fusion_dense=(32, 16),
)
frame = synth_generate(rows=10_000, seed=13)
calendar = HolidayCalendar()
ds = prepare(frame, calendar, seq_len=config.seq_len, horizon=config.horizon)
model = build(config, seed=0)
model, _ = train(model, ds, TrainConfig(batch_size=32, max_epochs=5, early_stop_patience=5))
model.scaler = ds.scaler.to_record()

view = ds.view("test")
horizons = (("1h", 6), ("2h", 12), ("4h", 24))
print(ev.format_report(ev.multi_horizon_report(model, view, horizons=horizons)))
print()
print("seasonal-naive baseline:")
print(ev.format_report(ev.seasonal_naive(view, horizons=horizons)))

print("\nmissing-data robustness (rows knocked out, then linearly imputed):")
rob = ev.robustness_missing(model, frame, calendar, seed=0, horizons=horizons)
print(f"clean MAPE({rob.horizon_label}): {rob.clean_mape:.3f}%")
for label, delta in sorted(rob.deltas.items(), key=lambda kv: float(kv[0].rstrip('%'))):
    print(f"  missing {label}: {delta:+.3f} points")
