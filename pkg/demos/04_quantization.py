"""Convert a trained float model to int8 and inspect what that buys.

The conversion is post-training and needs no labels: batch-norm layers are
folded into the preceding weights, a calibration sample fixes per-edge
activation ranges, and inference then runs on int8 weights with int32
accumulators. The payload shrinks to about a quarter; the outputs move by a
bounded fraction of the output quantization step.
"""

import numpy as np

from ladbnet.data import prepare, synth_generate
from ladbnet.features import HolidayCalendar
from ladbnet.model import ModelConfig, build, save
from ladbnet.training import TrainConfig, train
from ladbnet import evaluate as ev
from ladbnet import quant

config = ModelConfig(
    seq_len=48, lag_window=12, horizon=12,
    conv_filters=(16, 16), dilated_filters=24,
    lag_dense=(32, 16), fusion_dense=(32, 16),
)
frame = synth_generate(rows=8000, seed=21)
ds = prepare(frame, HolidayCalendar(), seq_len=config.seq_len, horizon=config.horizon)
model = build(config, seed=0)
model, _ = train(model, ds, TrainConfig(batch_size=32, max_epochs=4, early_stop_patience=4))
model.scaler = ds.scaler.to_record()
save(model, "/tmp/demo_float.ladb")

# fold batch norm, then calibrate activation ranges on training windows
windows = quant.representative_windows(ds.view("train"), count=300, seed=0)
qmodel = quant.calibrate(quant.fold_bn(model), windows)
quant.save_quantized(qmodel, "/tmp/demo_int8.ladb")

fbytes = quant.payload_bytes("/tmp/demo_float.ladb")
qbytes = quant.payload_bytes("/tmp/demo_int8.ladb")
print(f"payload: float {fbytes} bytes -> int8 {qbytes} bytes ({100 * qbytes / fbytes:.1f}%)")

# compare predictions on held-out windows
view = ds.view("test")
idx = np.arange(min(200, view.n))
float_kw = ev.predict_kw(model, view, idx)
int8_kw = ev.predict_kw(qmodel, view, idx)
worst = np.abs(float_kw - int8_kw).max()
out_scale = qmodel.act["output"].scale
kw_range = ds.scaler.data_max[0] - ds.scaler.data_min[0]
print(f"largest output shift: {worst:.4f} kW "
      f"({worst / (out_scale * kw_range):.2f} output quantization steps)")

report_f = ev.multi_horizon_report(model, view)
report_q = ev.multi_horizon_report(qmodel, view)
for label in ("1h", "2h"):
    f, q = report_f.horizons[label]["mape"], report_q.horizons[label]["mape"]
    print(f"MAPE({label}): float {f:.3f}%  int8 {q:.3f}%  (delta {q - f:+.3f})")
