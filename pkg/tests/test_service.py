"""HTTP service contract: endpoints, status codes, determinism, concurrency."""

import concurrent.futures
import json
import threading
import urllib.error
import urllib.request

import pytest

from ladbnet.data import _format_ts, load_csv
from ladbnet.features import HolidayCalendar
from ladbnet.model import load
from ladbnet.service import make_server, sig6


@pytest.fixture(scope="module")
def service(pipeline_env):
    model = load(pipeline_env["model"])
    server = make_server(model, HolidayCalendar(), port=0)
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    frame = load_csv(pipeline_env["csv"])
    yield {"base": f"http://127.0.0.1:{server.server_address[1]}", "frame": frame}
    server.shutdown()
    server.server_close()


def get(base, path):
    try:
        with urllib.request.urlopen(base + path, timeout=10) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def post(base, path, body, raw=None):
    data = raw if raw is not None else json.dumps(body).encode()
    req = urllib.request.Request(base + path, data=data,
                                 headers={"Content-Type": "application/json"})
    try:
        with urllib.request.urlopen(req, timeout=30) as resp:
            return resp.status, json.loads(resp.read())
    except urllib.error.HTTPError as exc:
        return exc.code, json.loads(exc.read())


def tail_records(frame, n):
    """Last n rows of the frame as request records."""
    lo = len(frame) - n
    return {"records": [
        {"datetime": _format_ts(frame.timestamps[i]), "DBT": float(frame.dbt[i]),
         "RH": float(frame.rh[i]), "kW": float(frame.kw[i])}
        for i in range(lo, len(frame))
    ]}


def test_health(service):
    assert get(service["base"], "/v1/health") == (200, {"status": "ok"})


def test_unknown_paths_404(service):
    assert get(service["base"], "/v1/nope")[0] == 404
    assert post(service["base"], "/v2/predict", {})[0] == 404


def test_malformed_json_400(service):
    code, body = post(service["base"], "/v1/predict", None, raw=b"{broken")
    assert code == 400
    assert "malformed JSON" in body["error"]


def test_below_minimum_names_required_count(service):
    # model window is 36 steps, lag fill is 144 rows -> 180 records minimum
    code, body = post(service["base"], "/v1/predict", tail_records(service["frame"], 179))
    assert code == 422
    assert body["error"] == "need at least 180 records (144 lag + 36 window), got 179"


def test_predict_ok_and_deterministic(service):
    body = tail_records(service["frame"], 200)
    code1, out1 = post(service["base"], "/v1/predict", body)
    code2, out2 = post(service["base"], "/v1/predict", body)
    assert code1 == code2 == 200
    assert out1 == out2
    assert len(out1["forecast_kw"]) == 12
    assert out1["horizon_minutes"][0] == 10 and out1["horizon_minutes"][-1] == 120
    assert all(v == sig6(v) for v in out1["forecast_kw"])
    meta = out1["model"]
    assert meta["kind"] == "float32" and meta["variant"] == "full"
    assert meta["input_window_steps"] == 36 and meta["horizon_steps"] == 12


def test_null_values_imputed(service):
    body = tail_records(service["frame"], 200)
    body["records"][50]["kW"] = None
    body["records"][51]["DBT"] = None
    assert post(service["base"], "/v1/predict", body)[0] == 200


def test_semantic_errors_422(service):
    base = service["base"]
    body = tail_records(service["frame"], 190)
    body["records"][5]["RH"] = 250.0
    code, out = post(base, "/v1/predict", body)
    assert code == 422 and "RH" in out["error"]

    body = tail_records(service["frame"], 190)
    del body["records"][3]["kW"]
    code, out = post(base, "/v1/predict", body)
    assert code == 422 and "missing key" in out["error"]

    body = tail_records(service["frame"], 190)
    body["records"][8]["datetime"] = body["records"][7]["datetime"]
    code, out = post(base, "/v1/predict", body)
    assert code == 422 and "duplicate" in out["error"]

    code, out = post(base, "/v1/predict", {"rows": []})
    assert code == 422 and "records" in out["error"]

    body = tail_records(service["frame"], 190)
    body["records"][0]["kW"] = "high"
    code, out = post(base, "/v1/predict", body)
    assert code == 422 and "must be a number" in out["error"]


def test_metrics_rolls_up_predictions(pipeline_env):
    # dedicated server so earlier tests don't pollute the sample count
    model = load(pipeline_env["model"])
    server = make_server(model, HolidayCalendar(), port=0)
    threading.Thread(target=server.serve_forever, daemon=True).start()
    base = f"http://127.0.0.1:{server.server_address[1]}"
    try:
        assert get(base, "/v1/metrics") == (200, {
            "samples": 0, "window": 512, "mean_ms": None,
            "p50_ms": None, "p95_ms": None, "p99_ms": None,
        })
        frame = load_csv(pipeline_env["csv"])
        body = tail_records(frame, 200)
        for _ in range(3):
            assert post(base, "/v1/predict", body)[0] == 200
        code, metrics = get(base, "/v1/metrics")
        assert code == 200 and metrics["samples"] == 3
        assert 0 < metrics["p50_ms"] <= metrics["p95_ms"] <= metrics["p99_ms"]
        assert metrics["mean_ms"] == sig6(metrics["mean_ms"])
    finally:
        server.shutdown()
        server.server_close()


def test_concurrent_requests_identical(service):
    body = tail_records(service["frame"], 220)
    with concurrent.futures.ThreadPoolExecutor(max_workers=6) as pool:
        results = list(pool.map(
            lambda _: post(service["base"], "/v1/predict", body), range(6)
        ))
    codes = {code for code, _ in results}
    forecasts = [tuple(out["forecast_kw"]) for _, out in results]
    assert codes == {200}
    assert len(set(forecasts)) == 1
