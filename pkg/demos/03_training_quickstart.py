"""Train a reduced-size model end to end in about a minute.

The architecture is the real dual-branch network (a dense stack over the last
few hours of features next to a causal temporal-convolution stack over the
full window), just narrower and with a shorter window so the demo stays fast.
"""

import dataclasses

from ladbnet.data import prepare, synth_generate
from ladbnet.features import HolidayCalendar
from ladbnet.model import ModelConfig, build, count_params
from ladbnet.training import TrainConfig, train

config = ModelConfig(
    seq_len=48, lag_window=12, horizon=12,
    conv_filters=(16, 16), dilated_filters=24,
    lag_dense=(32, 16), fusion_dense=(32, 16),
)
frame = synth_generate(rows=8000, seed=21)
ds = prepare(frame, HolidayCalendar(), seq_len=config.seq_len, horizon=config.horizon)
print(f"windows: train {ds.view('train').n}  val {ds.view('val').n}  test {ds.view('test').n}")

model = build(config, seed=0)
print(f"parameters: {count_params(model)}")

train_config = TrainConfig(batch_size=32, max_epochs=8, early_stop_patience=3, seed=0)
model, history = train(model, ds, train_config, log=print)
model.scaler = ds.scaler.to_record()

print(f"\nbest epoch: {history.best_epoch + 1}  stopped early: {history.stopped_early}")
print("val loss per epoch:", " ".join(f"{v:.4f}" for v in history.val_loss))

# the variants used for ablation share the same constructor
for variant in ("lag_only", "tcn_only"):
    alt = build(dataclasses.replace(config, variant=variant), seed=0)
    print(f"{variant}: {count_params(alt)} parameters")
