"""Serve a model over HTTP and query it like a client would.

The service holds one read-only model and exposes three endpoints: a health
probe, rolling latency metrics, and the forecast endpoint, which takes raw
telemetry records (enough history to fill the lag features plus one input
window) and returns the multi-step forecast in kW.
"""

import json
import threading
import urllib.request

from ladbnet.data import _format_ts, prepare, synth_generate
from ladbnet.features import HolidayCalendar
from ladbnet.model import ModelConfig, build
from ladbnet.service import make_server
from ladbnet.training import TrainConfig, train

config = ModelConfig(
    seq_len=48, lag_window=12, horizon=12,
    conv_filters=(16, 16), dilated_filters=24,
    lag_dense=(32, 16), fusion_dense=(32, 16),
)
frame = synth_generate(rows=6000, seed=2)
ds = prepare(frame, HolidayCalendar(), seq_len=config.seq_len, horizon=config.horizon)
model = build(config, seed=0)
model, _ = train(model, ds, TrainConfig(batch_size=32, max_epochs=3, early_stop_patience=3))
model.scaler = ds.scaler.to_record()

server = make_server(model, HolidayCalendar(), port=0)
threading.Thread(target=server.serve_forever, daemon=True).start()
base = f"http://127.0.0.1:{server.server_address[1]}"
print("serving on", base)

with urllib.request.urlopen(base + "/v1/health") as resp:
    print("health:", json.loads(resp.read()))

# minimum history: 144 rows of lag fill plus one 48-step window
need = 144 + config.seq_len
records = [
    {"datetime": _format_ts(frame.timestamps[i]), "DBT": float(frame.dbt[i]),
     "RH": float(frame.rh[i]), "kW": float(frame.kw[i])}
    for i in range(len(frame) - need, len(frame))
]
request = urllib.request.Request(
    base + "/v1/predict",
    data=json.dumps({"records": records}).encode(),
    headers={"Content-Type": "application/json"},
)
with urllib.request.urlopen(request) as resp:
    forecast = json.loads(resp.read())
print(f"model: {forecast['model']}")
for minutes, kw in list(zip(forecast["horizon_minutes"], forecast["forecast_kw"]))[:6]:
    print(f"  +{minutes:3d} min  {kw:8.2f} kW")

with urllib.request.urlopen(base + "/v1/metrics") as resp:
    print("metrics:", json.loads(resp.read()))

server.shutdown()
server.server_close()
