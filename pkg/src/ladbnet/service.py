"""HTTP prediction service.

Stdlib-only: a ThreadingHTTPServer wrapping one loaded model. The model is
treated as read-only; per-request state lives on the handler's stack, so
concurrent requests are safe. Endpoints:

    GET  /v1/health   liveness probe
    GET  /v1/metrics  rolling latency stats over recent predictions
    POST /v1/predict  {"records": [{datetime, DBT, RH, kW}, ...]} -> forecast

All floats in responses are rounded to 6 significant digits.
"""

import collections
import json
import math
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np

from . import evaluate as ev
from .data import STEP_MINUTES, _parse_ts, build_frame, impute_linear
from .errors import DataError, InsufficientDataError
from .features import MAX_LAG, RawFrame, HolidayCalendar, assemble
from .model import count_params
from .quant import QuantizedModel

METRICS_WINDOW = 512  # predictions kept for the rolling latency stats


def sig6(x) -> float:
    return float(f"{float(x):.6g}")


def model_metadata(model_or_q) -> dict:
    config = model_or_q.config
    if isinstance(model_or_q, QuantizedModel):
        params = int(sum(w.size for w in model_or_q.weights.values())
                     + sum(b.size for b in model_or_q.biases.values()))
    else:
        params = count_params(model_or_q)
    return {
        "kind": ev.model_kind(model_or_q),
        "variant": config.variant,
        "parameters": params,
        "input_window_steps": config.seq_len,
        "horizon_steps": config.horizon,
        "step_minutes": STEP_MINUTES,
    }


def forecast_tail(model_or_q, frame: RawFrame, calendar: HolidayCalendar) -> dict:
    """Forecast from the most recent complete window of a telemetry frame.

    The earliest rows only feed the 24h lag columns, so the frame must cover
    the lag fill plus one model window.
    """
    config = model_or_q.config
    min_rows = MAX_LAG + config.seq_len
    if len(frame) < min_rows:
        raise InsufficientDataError(
            f"need at least {min_rows} records ({MAX_LAG} lag + {config.seq_len} window), "
            f"got {len(frame)}"
        )
    matrix = assemble(impute_linear(frame), calendar)
    values = matrix.valid_values()
    scaler = ev._embedded_scaler(model_or_q)
    window = scaler.transform(values[-config.seq_len:])[None, :, 1:].astype(np.float32)
    kw = scaler.invert_target(ev.predict_norm(model_or_q, window))[0]
    return {
        "forecast_kw": [sig6(v) for v in kw],
        "horizon_minutes": [(j + 1) * STEP_MINUTES for j in range(config.horizon)],
        "model": model_metadata(model_or_q),
    }


def records_frame(payload) -> RawFrame:
    """Request body -> RawFrame, via the same grid logic as CSV ingestion."""
    if not isinstance(payload, dict) or not isinstance(payload.get("records"), list):
        raise DataError("request body must be a JSON object with a 'records' list")
    records = payload["records"]
    stamps, dbt, rh, kw = [], [], [], []
    for i, rec in enumerate(records):
        if not isinstance(rec, dict):
            raise DataError(f"record {i} is not an object")
        for key in ("datetime", "DBT", "RH", "kW"):
            if key not in rec:
                raise DataError(f"record {i} is missing key {key!r}")
        if not isinstance(rec["datetime"], str):
            raise DataError(f"record {i}: datetime must be a string")
        try:
            stamps.append(_parse_ts(rec["datetime"]))
        except ValueError as exc:
            raise DataError(f"record {i}: bad timestamp {rec['datetime']!r}") from exc
        for name, dest in (("DBT", dbt), ("RH", rh), ("kW", kw)):
            value = rec[name]
            if value is None:
                dest.append(math.nan)
                continue
            if isinstance(value, bool) or not isinstance(value, (int, float)):
                raise DataError(f"record {i}: {name} must be a number or null")
            value = float(value)
            if name == "RH" and not 0.0 <= value <= 100.0:
                raise DataError(f"record {i}: RH {value} outside [0, 100]")
            if name == "kW" and value < 0.0:
                raise DataError(f"record {i}: negative kW {value}")
            dest.append(value)
    return build_frame(stamps, dbt, rh, kw, origin="request")


class ServiceApp:
    """Shared state behind the handler: the model, calendar, and latency ring."""

    def __init__(self, model_or_q, calendar: HolidayCalendar, log=None):
        self.model = model_or_q
        self.calendar = calendar
        self.log = log
        self._lock = threading.Lock()
        self._latency_ms = collections.deque(maxlen=METRICS_WINDOW)

    def record_latency(self, ms: float) -> None:
        with self._lock:
            self._latency_ms.append(ms)

    def metrics(self) -> dict:
        with self._lock:
            samples = list(self._latency_ms)
        if not samples:
            return {"samples": 0, "window": METRICS_WINDOW, "mean_ms": None,
                    "p50_ms": None, "p95_ms": None, "p99_ms": None}
        ordered = sorted(samples)
        return {
            "samples": len(samples),
            "window": METRICS_WINDOW,
            "mean_ms": sig6(math.fsum(samples) / len(samples)),
            "p50_ms": sig6(ev.nearest_rank(ordered, 50)),
            "p95_ms": sig6(ev.nearest_rank(ordered, 95)),
            "p99_ms": sig6(ev.nearest_rank(ordered, 99)),
        }


class _Handler(BaseHTTPRequestHandler):
    protocol_version = "HTTP/1.1"

    def log_message(self, fmt, *args):
        log = self.server.app.log
        if log is not None:
            log(f"{self.address_string()} {fmt % args}")

    def _send_json(self, code: int, payload: dict) -> None:
        body = json.dumps(payload, sort_keys=True).encode("utf-8") + b"\n"
        self.send_response(code)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def do_GET(self):
        if self.path == "/v1/health":
            self._send_json(200, {"status": "ok"})
        elif self.path == "/v1/metrics":
            self._send_json(200, self.server.app.metrics())
        else:
            self._send_json(404, {"error": f"unknown path {self.path}"})

    def do_POST(self):
        if self.path != "/v1/predict":
            self._send_json(404, {"error": f"unknown path {self.path}"})
            return
        app = self.server.app
        try:
            length = int(self.headers.get("Content-Length") or 0)
            payload = json.loads(self.rfile.read(length))
        except (ValueError, TypeError) as exc:
            self._send_json(400, {"error": f"malformed JSON body: {exc}"})
            return
        started = time.perf_counter()
        try:
            result = forecast_tail(app.model, records_frame(payload), app.calendar)
        except (DataError, InsufficientDataError) as exc:
            self._send_json(422, {"error": str(exc)})
            return
        except Exception as exc:  # noqa: BLE001 - the service must never crash
            self.log_message("internal error: %s: %s", type(exc).__name__, exc)
            self._send_json(500, {"error": f"internal error: {type(exc).__name__}"})
            return
        app.record_latency((time.perf_counter() - started) * 1000.0)
        self._send_json(200, result)


class PredictionServer(ThreadingHTTPServer):
    daemon_threads = True

    def __init__(self, app: ServiceApp, port: int):
        self.app = app
        super().__init__(("127.0.0.1", port), _Handler)


def make_server(model_or_q, calendar: HolidayCalendar, port: int = 0,
                log=None) -> PredictionServer:
    return PredictionServer(ServiceApp(model_or_q, calendar, log=log), port)


def run_server(model_or_q, calendar: HolidayCalendar, port: int, log=print) -> None:
    server = make_server(model_or_q, calendar, port=port, log=log)
    meta = model_metadata(model_or_q)
    if log is not None:
        log(f"serving {meta['kind']} model (variant {meta['variant']}) "
            f"on http://127.0.0.1:{server.server_address[1]}/v1/predict")
    try:
        server.serve_forever()
    except KeyboardInterrupt:
        pass
    finally:
        server.server_close()
