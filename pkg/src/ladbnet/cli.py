"""Command-line front end for the forecasting pipeline.

Commands: gen-data, prepare, train, eval, ablate, quantize, bench, predict,
robustness, serve. Every command resolves settings as flag > config file >
default, and all randomness flows from a single --seed.
"""

import argparse
import dataclasses
import json
import sys

import numpy as np

from . import evaluate as ev
from . import quant
from .config import AppConfig, load_app_config
from .data import load_csv, load_dataset, prepare, save_dataset, synth_generate, write_csv
from .errors import ConfigurationError, LadbnetError
from .features import HolidayCalendar
from .model import VARIANTS, build, count_params, load, save
from .training import train


def _calendar(cfg: AppConfig) -> HolidayCalendar:
    return HolidayCalendar.from_file(cfg.calendar) if cfg.calendar else HolidayCalendar()


def _prepare(frame, cfg: AppConfig):
    # window dims follow the model config so views match what it expects
    return prepare(frame, _calendar(cfg), ratios=cfg.ratios,
                   seq_len=cfg.model_config.seq_len, horizon=cfg.model_config.horizon)


def _dataset(path, cfg: AppConfig):
    """Prepared dataset from either a prepared .npz or a raw telemetry CSV."""
    if str(path).endswith(".npz"):
        return load_dataset(path)
    return _prepare(load_csv(path), cfg)


def _load_model(path, quantized: bool):
    return quant.load_quantized(path) if quantized else load(path)


def _seed(args, cfg: AppConfig) -> int:
    return cfg.seed if args.seed is None else args.seed


def _write_json(path, payload) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")


def _eval_mode(cfg: AppConfig) -> str:
    return "per_step" if cfg.eval_per_step else "cumulative"


def cmd_gen_data(args, cfg: AppConfig) -> int:
    rows = args.rows if args.rows is not None else cfg.rows
    out = args.out or cfg.data
    frame = synth_generate(rows, seed=_seed(args, cfg), profile=cfg.generator)
    write_csv(frame, out)
    print(f"wrote {rows} rows to {out}")
    return 0


def cmd_prepare(args, cfg: AppConfig) -> int:
    data = args.data or cfg.data
    out = args.out or str(data).rsplit(".", 1)[0] + ".npz"
    ds = _prepare(load_csv(data), cfg)
    save_dataset(ds, out)
    nominal = "/".join(str(c) for c in ds.nominal_counts)
    valid = "/".join(str(c) for c in ds.counts())
    print(f"raw rows {ds.raw_rows} -> nominal split {nominal}")
    print(f"valid feature rows {sum(ds.counts())} (first {ds.raw_rows - sum(ds.counts())} "
          f"dropped to fill lags) -> split {valid}, saved to {out}")
    return 0


def cmd_train(args, cfg: AppConfig) -> int:
    ds = _dataset(args.data or cfg.data, cfg)
    seed = _seed(args, cfg)
    model_config = cfg.model_config
    if args.variant:
        model_config = dataclasses.replace(model_config, variant=args.variant)
    train_config = dataclasses.replace(cfg.train_config, seed=seed)
    model = build(model_config, seed=seed)
    model, history = train(model, ds, train_config, log=print)
    model.scaler = ds.scaler.to_record()
    out = args.model or cfg.model
    save(model, out)
    history_path = str(out) + ".history.json"
    with open(history_path, "w", encoding="utf-8") as fh:
        fh.write(history.to_json())
        fh.write("\n")
    print(f"saved model ({count_params(model)} parameters, variant {model_config.variant}) "
          f"to {out}; history in {history_path}")
    return 0


def cmd_eval(args, cfg: AppConfig) -> int:
    model = _load_model(args.model or cfg.model, args.quantized)
    ds = _dataset(args.data or cfg.data, cfg)
    view = ds.view("test")
    mode = _eval_mode(cfg)
    report = ev.multi_horizon_report(model, view, mode=mode)
    baseline = ev.seasonal_naive(view, mode=mode)
    print(ev.format_report(report))
    print()
    print("seasonal-naive baseline:")
    print(ev.format_report(baseline))
    if args.out:
        _write_json(args.out, {"model": report.to_dict(), "baseline": baseline.to_dict()})
        print(f"report written to {args.out}")
    return 0


def cmd_ablate(args, cfg: AppConfig) -> int:
    ds = _dataset(args.data or cfg.data, cfg)
    seed = _seed(args, cfg)
    train_config = dataclasses.replace(cfg.train_config, seed=seed)
    mode = _eval_mode(cfg)
    view = ds.view("test")
    reports, params = {}, {}
    for variant in VARIANTS:
        model_config = dataclasses.replace(cfg.model_config, variant=variant)
        model = build(model_config, seed=seed)
        model, _history = train(model, ds, train_config)
        model.scaler = ds.scaler.to_record()
        reports[variant] = ev.multi_horizon_report(model, view, mode=mode)
        params[variant] = count_params(model)
        print(f"{variant}: trained ({params[variant]} parameters)")
    print()
    print(ev.format_ablation(reports))
    if args.out:
        payload = {
            variant: {"params": params[variant], "report": reports[variant].to_dict()}
            for variant in reports
        }
        _write_json(args.out, payload)
        print(f"comparison written to {args.out}")
    return 0


def cmd_quantize(args, cfg: AppConfig) -> int:
    model_path = args.model or cfg.model
    model = load(model_path)
    ds = _dataset(args.data or cfg.data, cfg)
    windows = quant.representative_windows(
        ds.view("train"), count=cfg.calibration_windows, seed=_seed(args, cfg)
    )
    qmodel = quant.calibrate(quant.fold_bn(model), windows)
    out = args.out or str(model_path).rsplit(".", 1)[0] + ".int8.ladb"
    quant.save_quantized(qmodel, out)
    fbytes = quant.payload_bytes(model_path)
    qbytes = quant.payload_bytes(out)
    print(f"calibrated on {len(windows)} windows; wrote {out}")
    print(f"tensor payload {qbytes} bytes vs float {fbytes} bytes ({100 * qbytes / fbytes:.1f}%)")
    return 0


def cmd_bench(args, cfg: AppConfig) -> int:
    model = _load_model(args.model or cfg.model, args.quantized)
    ds = _dataset(args.data or cfg.data, cfg)
    view = ds.view("test")
    take = min(64, view.n)
    if take < 1:
        raise ConfigurationError("test split has no complete window to benchmark on")
    windows = view.batch(np.arange(take))[0]
    report = ev.latency_bench(model, windows, iterations=args.iterations)
    print(ev.format_latency(report))
    if args.out:
        _write_json(args.out, report.to_dict())
    return 0


def cmd_predict(args, cfg: AppConfig) -> int:
    from .service import forecast_tail

    model = _load_model(args.model or cfg.model, args.quantized)
    frame = load_csv(args.data or cfg.data)
    payload = forecast_tail(model, frame, _calendar(cfg))
    text = json.dumps(payload, indent=2, sort_keys=True)
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            fh.write(text)
            fh.write("\n")
        print(f"forecast written to {args.out}")
    else:
        print(text)
    return 0


def cmd_robustness(args, cfg: AppConfig) -> int:
    model = load(args.model or cfg.model)
    frame = load_csv(args.data or cfg.data)
    report = ev.robustness_missing(model, frame, _calendar(cfg), seed=_seed(args, cfg))
    print(f"clean MAPE({report.horizon_label}): {report.clean_mape:.3f}%")
    for label, delta in report.deltas.items():
        print(f"missing {label}: {delta:+.3f} points")
    if args.out:
        _write_json(args.out, report.to_dict())
    return 0


def cmd_serve(args, cfg: AppConfig) -> int:
    from .service import run_server

    model = _load_model(args.model or cfg.model, args.quantized)
    port = args.port if args.port is not None else cfg.port
    run_server(model, _calendar(cfg), port=port, log=print)
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ladbnet", description="Dual-branch short-term load forecasting pipeline."
    )
    sub = parser.add_subparsers(dest="command", required=True, metavar="command")

    def add(name, func, help_text, *flags):
        p = sub.add_parser(name, help=help_text)
        p.set_defaults(func=func)
        p.add_argument("--config", help="path to the JSON config file")
        if "seed" in flags:
            p.add_argument("--seed", type=int, help="override the config seed")
        if "data" in flags:
            p.add_argument("--data", help="telemetry CSV or prepared .npz dataset")
        if "model" in flags:
            p.add_argument("--model", help="model file path")
        if "out" in flags:
            p.add_argument("--out", help="output file path")
        if "rows" in flags:
            p.add_argument("--rows", type=int, help="number of synthetic rows")
        if "port" in flags:
            p.add_argument("--port", type=int, help="HTTP service port")
        if "iterations" in flags:
            p.add_argument("--iterations", type=int, default=1000,
                           help="benchmark iterations (default 1000)")
        if "variant" in flags:
            p.add_argument("--variant", choices=VARIANTS, help="architecture variant")
        if "quantized" in flags:
            p.add_argument("--quantized", action="store_true",
                           help="treat the model file as an int8 model")
        return p

    add("gen-data", cmd_gen_data, "generate a synthetic telemetry CSV", "seed", "rows", "out")
    add("prepare", cmd_prepare, "derive features, split, and save a dataset", "data", "out")
    add("train", cmd_train, "train a model on a dataset", "data", "model", "seed", "variant")
    add("eval", cmd_eval, "multi-horizon accuracy report on the test split",
        "data", "model", "out", "quantized")
    add("ablate", cmd_ablate, "train and compare all architecture variants", "data", "seed", "out")
    add("quantize", cmd_quantize, "calibrate and save an int8 model", "data", "model", "seed", "out")
    add("bench", cmd_bench, "latency benchmark", "data", "model", "iterations", "quantized", "out")
    add("predict", cmd_predict, "forecast 12 hours from the tail of a CSV",
        "data", "model", "quantized", "out")
    add("robustness", cmd_robustness, "missing-data degradation harness",
        "data", "model", "seed", "out")
    add("serve", cmd_serve, "run the HTTP prediction service", "model", "port", "quantized")
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_app_config(args.config)
        return args.func(args, cfg)
    except LadbnetError as exc:
        print(f"ladbnet: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"ladbnet: error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
