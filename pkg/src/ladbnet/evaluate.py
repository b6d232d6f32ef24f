"""Accuracy metrics, multi-horizon reports, baselines, robustness, latency.

Metric reductions use compensated summation (math.fsum) so values are
independent of chunking order and reproducible across runs to 1e-12.
"""

import dataclasses
import json
import math
import time

import numpy as np

from . import autograd as ag
from .data import MinMaxScaler, WindowView, impute_linear
from .errors import ConfigurationError, ContractError, DataError, InsufficientDataError
from .features import assemble
from .model import Model, forward
from .quant import QuantizedModel

MAPE_FLOOR = 1e-6  # kW; guards Eq-style percentage error against division blowup

HORIZONS = (("1h", 6), ("2h", 12), ("4h", 24), ("8h", 48), ("12h", 72))


def mape(actual, predicted) -> float:
    """Mean absolute percentage error: (100/n) * sum(|a - p| / |a|)."""
    a = np.asarray(actual, np.float64).ravel()
    p = np.asarray(predicted, np.float64).ravel()
    if a.shape != p.shape:
        raise ContractError(f"length mismatch: {a.shape} actuals vs {p.shape} predictions")
    if a.size < 1:
        raise InsufficientDataError("mape needs at least one pair")
    if np.min(np.abs(a)) < MAPE_FLOOR:
        raise DataError(f"actual values below the {MAPE_FLOOR} kW floor make MAPE unstable")
    terms = np.abs(a - p) / np.abs(a)
    return 100.0 * math.fsum(terms.tolist()) / a.size


def r_squared(actual, predicted) -> float:
    """Coefficient of determination: 1 - SS_res / SS_tot."""
    a = np.asarray(actual, np.float64).ravel()
    p = np.asarray(predicted, np.float64).ravel()
    if a.shape != p.shape:
        raise ContractError(f"length mismatch: {a.shape} actuals vs {p.shape} predictions")
    if a.size < 2:
        raise InsufficientDataError("r_squared needs at least two pairs")
    mean = math.fsum(a.tolist()) / a.size
    ss_tot = math.fsum(((a - mean) ** 2).tolist())
    if ss_tot == 0.0:
        raise DataError("r_squared is undefined for constant actuals")
    ss_res = math.fsum(((a - p) ** 2).tolist())
    return 1.0 - ss_res / ss_tot


@dataclasses.dataclass
class ForecastReport:
    """Per-horizon accuracy plus a weekday/weekend MAPE breakdown."""

    horizons: dict  # label -> {"steps", "mape", "r2"} in ascending step order
    mape_weekday: float | None
    mape_weekend: float | None
    n_windows: int
    mode: str  # "cumulative" or "per_step"
    model_kind: str

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def model_kind(model_or_q) -> str:
    return "int8" if isinstance(model_or_q, QuantizedModel) else "float32"


def predict_norm(model_or_q, x_norm, chunk: int = 256):
    """Normalized windows (B, seq, feat) -> normalized forecasts (B, horizon)."""
    x_norm = np.asarray(x_norm, np.float32)
    out = []
    for start in range(0, len(x_norm), chunk):
        piece = x_norm[start : start + chunk]
        if isinstance(model_or_q, QuantizedModel):
            out.append(model_or_q.forward_normalized(piece))
        else:
            with ag.no_grad():
                out.append(forward(model_or_q, piece, mode="infer").data.astype(np.float64))
    return np.concatenate(out, axis=0)


def _embedded_scaler(model_or_q) -> MinMaxScaler:
    record = model_or_q.scaler
    if record is None:
        raise ContractError("model has no embedded scaler")
    return MinMaxScaler.from_record(record)


def predict_kw(model_or_q, view: WindowView, idx=None, chunk: int = 256, scaler=None):
    """kW-space forecasts for the given window indices (all windows by default)."""
    if idx is None:
        idx = np.arange(view.n)
    scaler = scaler or _embedded_scaler(model_or_q)
    x, _ = view.batch(idx)
    return scaler.invert_target(predict_norm(model_or_q, x, chunk=chunk))


def _pool(values, k: int, mode: str):
    return values[:, k - 1 : k] if mode == "per_step" else values[:, :k]


def report_from_predictions(target_kw, pred_kw, target_min, mode="cumulative",
                            horizons=HORIZONS, kind="float32") -> ForecastReport:
    """Metrics from aligned (n, horizon) kW targets and predictions."""
    if mode not in ("cumulative", "per_step"):
        raise ConfigurationError(f"mode must be 'cumulative' or 'per_step', got {mode!r}")
    pred_kw = np.asarray(pred_kw, np.float64)
    target_kw = np.asarray(target_kw, np.float64)
    if pred_kw.shape != target_kw.shape or pred_kw.ndim != 2:
        raise ContractError(f"target/prediction shape mismatch: {target_kw.shape} vs {pred_kw.shape}")
    max_steps = pred_kw.shape[1]
    table = {}
    for label, k in sorted(horizons, key=lambda item: item[1]):
        if k > max_steps:
            continue
        a = _pool(target_kw, k, mode)
        p = _pool(pred_kw, k, mode)
        try:
            r2 = r_squared(a, p)
        except DataError:  # constant targets leave explained variance undefined
            r2 = None
        table[label] = {"steps": k, "mape": mape(a, p), "r2": r2}
    weekend = ((np.asarray(target_min, np.int64) // 1440 + 3) % 7) >= 5
    by_day = []
    for mask in (~weekend, weekend):
        by_day.append(mape(target_kw[mask], pred_kw[mask]) if mask.any() else None)
    return ForecastReport(
        horizons=table,
        mape_weekday=by_day[0],
        mape_weekend=by_day[1],
        n_windows=pred_kw.shape[0],
        mode=mode,
        model_kind=kind,
    )


def multi_horizon_report(model_or_q, view: WindowView, mode="cumulative",
                         horizons=HORIZONS, chunk: int = 256) -> ForecastReport:
    """Evaluate a model over every window of a segment, in kW space."""
    if view.n < 1:
        raise InsufficientDataError("evaluation segment has no complete window")
    idx = np.arange(view.n)
    pred = predict_kw(model_or_q, view, idx, chunk=chunk)
    return report_from_predictions(
        view.targets_kw(idx), pred, view.target_minutes(idx),
        mode=mode, horizons=horizons, kind=model_kind(model_or_q),
    )


def seasonal_naive(view: WindowView, mode="cumulative", horizons=HORIZONS) -> ForecastReport:
    """Same-time-yesterday baseline: step t+h predicts raw kW at t+h-144."""
    if view.n < 1:
        raise InsufficientDataError("evaluation segment has no complete window")
    idx = np.arange(view.n)
    return report_from_predictions(
        view.targets_kw(idx), view.naive_forecast_kw(idx), view.target_minutes(idx),
        mode=mode, horizons=horizons, kind="baseline",
    )


@dataclasses.dataclass
class RobustnessReport:
    clean_mape: float
    deltas: dict  # "5%" -> MAPE delta in points vs clean
    rates: list
    seed: int
    horizon_label: str

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def mask_rows(permutation, n_rows: int, rate: float):
    """First round(rate * n_rows) entries of a shared permutation: nested by rate."""
    if not 0.0 <= rate < 1.0:
        raise ConfigurationError(f"missing-data rate must be in [0, 1), got {rate}")
    count = min(int(round(rate * n_rows)), len(permutation))
    return permutation[:count]


def robustness_missing(model, frame, calendar, rates=(0.05, 0.10, 0.20), seed: int = 0,
                       horizon_label: str = "1h", horizons=HORIZONS) -> RobustnessReport:
    """MAPE degradation under random missing raw rows, linearly re-imputed.

    Only the model's inputs are corrupted; every run is scored against the
    clean series, so the deltas isolate how imputation noise propagates into
    predictions. Masks share one seeded permutation so higher rates strictly
    contain lower ones; the first and last rows stay intact so interpolation
    has anchors.
    """
    for rate in rates:
        if not 0.0 <= rate < 1.0:
            raise ConfigurationError(f"missing-data rate must be in [0, 1), got {rate}")
    steps = dict(horizons).get(horizon_label)
    if steps is None:
        raise ConfigurationError(f"unknown horizon label {horizon_label!r}")
    scaler = _embedded_scaler(model)
    config = model.config

    def run(masked_frame, target_kw):
        matrix = assemble(impute_linear(masked_frame), calendar)
        raw = matrix.valid_values()
        values = scaler.transform(raw).astype(np.float32)
        minutes = matrix.valid_timestamps().astype("datetime64[m]").astype(np.int64)
        view = WindowView(values, target_kw, minutes, config.seq_len, config.horizon)
        if view.n < 1:
            raise InsufficientDataError("frame too short for one evaluation window")
        idx = np.arange(view.n)
        pred = predict_kw(model, view, idx, scaler=scaler)
        return mape(view.targets_kw(idx)[:, :steps], pred[:, :steps])

    clean_matrix = assemble(impute_linear(frame), calendar)
    target_kw = clean_matrix.valid_values()[:, 0].copy()
    clean = run(frame, target_kw)
    n_rows = len(frame.timestamps)
    maskable = np.random.default_rng(seed).permutation(np.arange(1, n_rows - 1))
    deltas = {}
    for rate in rates:
        rows = mask_rows(maskable, n_rows, rate)
        masked = dataclasses.replace(
            frame,
            dbt=frame.dbt.copy(),
            rh=frame.rh.copy(),
            kw=frame.kw.copy(),
        )
        for column in (masked.dbt, masked.rh, masked.kw):
            column[rows] = np.nan
        deltas[f"{rate:.0%}"] = run(masked, target_kw) - clean
    return RobustnessReport(
        clean_mape=clean, deltas=deltas, rates=list(rates), seed=seed, horizon_label=horizon_label
    )


@dataclasses.dataclass
class LatencyReport:
    mean_ms: float
    p50_ms: float
    p95_ms: float
    p99_ms: float
    throughput_per_s: float
    batch_mode: bool
    iterations: int
    model_kind: str

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


def nearest_rank(sorted_values, percentile: float) -> float:
    """Nearest-rank percentile: the ceil(p/100 * n)-th smallest value."""
    n = len(sorted_values)
    if n < 1:
        raise InsufficientDataError("percentile of an empty sample")
    rank = max(1, math.ceil(percentile / 100.0 * n))
    return float(sorted_values[min(rank, n) - 1])


def latency_bench(model_or_q, windows_norm, iterations: int = 1000, warmup: int = 50,
                  batch_mode: bool = False) -> LatencyReport:
    """Time normalize-free inference plus denormalization per prediction.

    windows_norm is a (N, seq, feat) normalized array; iterations cycle
    through it. Single-stream mode times one window per iteration; batch mode
    times the whole array and divides by its size.
    """
    if iterations < 100:
        raise ConfigurationError(f"latency bench needs >= 100 iterations, got {iterations}")
    windows_norm = np.asarray(windows_norm, np.float32)
    if windows_norm.ndim != 3 or len(windows_norm) < 1:
        raise ContractError(f"expected (N, seq, feat) windows, got shape {windows_norm.shape}")
    scaler = _embedded_scaler(model_or_q)
    count = len(windows_norm)

    def once(piece):
        return scaler.invert_target(predict_norm(model_or_q, piece, chunk=len(piece)))

    for i in range(warmup):
        once(windows_norm[i % count : i % count + 1])
    samples = []
    per_iter = count if batch_mode else 1
    for i in range(iterations):
        piece = windows_norm if batch_mode else windows_norm[i % count : i % count + 1]
        t0 = time.perf_counter()
        once(piece)
        samples.append((time.perf_counter() - t0) * 1000.0)
    ordered = sorted(samples)
    total_s = math.fsum(samples) / 1000.0
    return LatencyReport(
        mean_ms=math.fsum(samples) / iterations / per_iter,
        p50_ms=nearest_rank(ordered, 50) / per_iter,
        p95_ms=nearest_rank(ordered, 95) / per_iter,
        p99_ms=nearest_rank(ordered, 99) / per_iter,
        throughput_per_s=(iterations * per_iter) / total_s if total_s > 0 else float("inf"),
        batch_mode=batch_mode,
        iterations=iterations,
        model_kind=model_kind(model_or_q),
    )


def format_report(report: ForecastReport) -> str:
    """Aligned plain-text table of a ForecastReport."""
    lines = [
        f"windows: {report.n_windows}   mode: {report.mode}   model: {report.model_kind}",
        f"{'horizon':<8}{'steps':>6}{'MAPE %':>10}{'R2':>9}",
    ]
    for label, row in report.horizons.items():
        lines.append(f"{label:<8}{row['steps']:>6}{row['mape']:>10.2f}{row['r2']:>9.3f}")
    for name, value in (("weekday", report.mape_weekday), ("weekend", report.mape_weekend)):
        shown = f"{value:.2f}" if value is not None else "-"
        lines.append(f"MAPE {name}: {shown}")
    return "\n".join(lines)


def format_latency(report: LatencyReport) -> str:
    mode = "batch" if report.batch_mode else "single"
    return "\n".join(
        [
            f"iterations: {report.iterations}   mode: {mode}   model: {report.model_kind}",
            f"mean {report.mean_ms:.2f} ms   P50 {report.p50_ms:.2f} ms   "
            f"P95 {report.p95_ms:.2f} ms   P99 {report.p99_ms:.2f} ms",
            f"throughput: {report.throughput_per_s:.1f} predictions/s",
        ]
    )


def format_ablation(reports: dict) -> str:
    """Variant-by-horizon MAPE comparison, one row per variant."""
    labels = []
    for report in reports.values():
        for label in report.horizons:
            if label not in labels:
                labels.append(label)
    head = f"{'variant':<14}" + "".join(f"{label:>9}" for label in labels)
    lines = [head]
    for variant, report in reports.items():
        cells = []
        for label in labels:
            row = report.horizons.get(label)
            cells.append(f"{row['mape']:>9.2f}" if row else f"{'-':>9}")
        lines.append(f"{variant:<14}" + "".join(cells))
    return "\n".join(lines)


def write_window_errors_csv(path, view: WindowView, pred_kw, horizons=HORIZONS) -> None:
    """Per-window MAPE rows for external plotting."""
    import csv

    idx = np.arange(view.n)
    target = view.targets_kw(idx)
    minutes = view.target_minutes(idx)
    pred_kw = np.asarray(pred_kw, np.float64)
    keep = [(label, k) for label, k in sorted(horizons, key=lambda item: item[1])
            if k <= pred_kw.shape[1]]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["window", "start_minute"] + [f"mape_{label}" for label, _ in keep])
        for i in range(view.n):
            row = [i, int(minutes[i, 0])]
            for _label, k in keep:
                row.append(f"{mape(target[i, :k], pred_kw[i, :k]):.6f}")
            writer.writerow(row)
