"""Post-training int8 quantization.

Two stages: ``fold_bn`` collapses inference-mode batch norm into the
preceding affine layer, then ``calibrate`` measures activation ranges on
representative windows and emits a ``QuantizedModel`` whose forward pass
runs entirely in integer arithmetic between the input quantize and the
final dequantize.

Scheme: weights are symmetric per-tensor (zero point 0, values clipped to
[-127, 127]); activations are affine per-tensor with the calibrated range
nudged to include zero so that the zero point represents 0.0 exactly;
biases are int32 at scale s_in * s_w. Requantization multiplies the int32
accumulator by an int32 mantissa and applies a rounding right shift, both
derived from the exact float ratio via frexp.
"""

import dataclasses
import math

import numpy as np

from . import autograd as ag
from . import serialize
from .data import MinMaxScaler
from .errors import (
    CalibrationError,
    ConfigurationError,
    ContractError,
    DimensionError,
    FormatError,
    StructuralError,
)
from .model import Model, ModelConfig, forward

QMIN = -128
QMAX = 127

# (bn layer, affine layer it normalizes) in graph order
BN_PAIRS = (
    ("lag_bn1", "lag_dense1"),
    ("lag_bn2", "lag_dense2"),
    ("tcn_bn1", "conv1"),
    ("tcn_bn2", "conv2"),
    ("tcn_bn3", "conv3"),
    ("fusion_bn1", "fusion_dense1"),
)


def _round_half_away(x):
    """Round to nearest, ties away from zero (np.round ties to even)."""
    return np.trunc(x + np.copysign(0.5, x))


@dataclasses.dataclass
class QuantParams:
    """Per-tensor quantization parameters.

    scale and zero_point map float x to int8 q = round(x / scale) + zero_point.
    scheme is "symmetric" (weights, zero_point 0) or "affine" (activations).
    """

    scale: float
    zero_point: int
    scheme: str

    def __post_init__(self):
        if self.scheme not in ("symmetric", "affine"):
            raise ContractError(f"unknown quantization scheme {self.scheme!r}")
        if self.scale <= 0.0 or not math.isfinite(self.scale):
            raise ContractError(f"quantization scale must be finite and positive, got {self.scale}")
        if self.scheme == "symmetric" and self.zero_point != 0:
            raise ContractError("symmetric scheme requires zero_point 0")
        if not QMIN <= self.zero_point <= QMAX:
            raise ContractError(f"zero_point {self.zero_point} outside int8 range")

    def quantize(self, x):
        q = _round_half_away(np.asarray(x, dtype=np.float64) / self.scale) + self.zero_point
        lo = -QMAX if self.scheme == "symmetric" else QMIN
        return np.clip(q, lo, QMAX).astype(np.int8)

    def dequantize(self, q):
        return (np.asarray(q, dtype=np.float64) - self.zero_point) * self.scale

    def to_dict(self):
        return {"scale": self.scale, "zero_point": self.zero_point, "scheme": self.scheme}

    @classmethod
    def from_dict(cls, d):
        return cls(scale=float(d["scale"]), zero_point=int(d["zero_point"]), scheme=str(d["scheme"]))


def weight_params(w) -> QuantParams:
    """Symmetric per-tensor parameters; an all-zero tensor gets scale 1.0."""
    peak = float(np.max(np.abs(w))) if w.size else 0.0
    scale = peak / QMAX if peak > 0.0 else 1.0
    return QuantParams(scale=scale, zero_point=0, scheme="symmetric")


def activation_params(lo: float, mx: float) -> QuantParams:
    """Affine per-tensor parameters from an observed [lo, mx] range.

    The range is widened to include 0.0 so the zero point is exact; a
    degenerate all-zero range maps to scale 1.0.
    """
    if not (math.isfinite(lo) and math.isfinite(mx)):
        raise CalibrationError("non-finite activation range")
    lo = min(lo, 0.0)
    mx = max(mx, 0.0)
    if mx == lo:
        return QuantParams(scale=1.0, zero_point=QMIN, scheme="affine")
    scale = (mx - lo) / (QMAX - QMIN)
    zp = int(np.clip(_round_half_away(QMIN - lo / scale), QMIN, QMAX))
    return QuantParams(scale=scale, zero_point=zp, scheme="affine")


def _requant_multiplier(ratio: float):
    """Decompose ratio into (int32 mantissa, right shift): ratio ~= mant / 2^shift."""
    if ratio <= 0.0 or not math.isfinite(ratio):
        raise ContractError(f"requantization ratio must be finite and positive, got {ratio}")
    mant_f, exp = math.frexp(ratio)  # mant_f in [0.5, 1)
    mant = int(round(mant_f * (1 << 31)))
    if mant == (1 << 31):
        mant >>= 1
        exp += 1
    shift = 31 - exp
    if not 1 <= shift <= 62:
        raise ContractError(f"requantization ratio {ratio} outside the encodable range")
    return mant, shift


def _rounding_rshift(x, shift: int):
    """Shift right with round-half-away-from-zero, elementwise on int64."""
    mag = np.abs(x) + (np.int64(1) << np.int64(shift - 1))
    return np.sign(x) * (mag >> np.int64(shift))


def fold_bn(model: Model) -> Model:
    """Return a copy of model with batch norm folded into the affine layers.

    Uses running statistics, so the copy matches inference-mode forward
    output. Raises StructuralError if there is nothing left to fold or a
    norm layer has no preceding affine layer.
    """
    if not model.bn_state:
        raise StructuralError("model has no batch norm layers to fold")
    affine_of = dict(BN_PAIRS)
    folded = Model(config=model.config)
    if model.scaler is not None:
        folded.scaler = {
            "columns": list(model.scaler["columns"]),
            "data_min": np.asarray(model.scaler["data_min"], np.float64).copy(),
            "data_max": np.asarray(model.scaler["data_max"], np.float64).copy(),
        }
    skip = set()
    for bn_name in model.bn_state:
        if bn_name not in affine_of:
            raise StructuralError(f"norm layer {bn_name!r} has no preceding affine layer")
        skip.add(f"{bn_name}.gamma")
        skip.add(f"{bn_name}.beta")
    for name, p in model.parameters.items():
        if name not in skip:
            folded.parameters[name] = ag.Tensor(p.data.copy(), requires_grad=False)
    for bn_name, state in model.bn_state.items():
        affine = affine_of[bn_name]
        gamma = model.parameters[f"{bn_name}.gamma"].data.astype(np.float64)
        beta = model.parameters[f"{bn_name}.beta"].data.astype(np.float64)
        mean = state.running_mean.astype(np.float64)
        var = state.running_var.astype(np.float64)
        factor = gamma / np.sqrt(var + ag.BN_EPSILON)
        w = folded.parameters[f"{affine}.w"]
        b = folded.parameters[f"{affine}.b"]
        # w' = w * factor over output channels (last axis for dense and conv alike)
        w.data = (w.data.astype(np.float64) * factor).astype(np.float32)
        b.data = ((b.data.astype(np.float64) - mean) * factor + beta).astype(np.float32)
    return folded


def _layer_table(config: ModelConfig):
    """Integer-graph topology: (kind, name, in_edge, out_edge, extras) in order."""
    layers = []
    if config.has_lag:
        layers.append(("dense", "lag_dense1", "input", "lag.relu1", None))
        layers.append(("dense", "lag_dense2", "lag.relu1", "lag.relu2", None))
    if config.has_tcn:
        layers.append(("conv", "conv1", "input", "tcn.relu1", 1))
        layers.append(("conv", "conv2", "tcn.relu1", "tcn.relu2", 1))
        if config.has_dilated:
            layers.append(("conv", "conv3", "tcn.relu2", "tcn.relu3", config.dilation))
    layers.append(("dense", "fusion_dense1", "fusion.concat", "fusion.relu1", None))
    layers.append(("dense", "fusion_dense2", "fusion.relu1", "fusion.relu2", None))
    layers.append(("output", "output", "fusion.relu2", None, None))
    return layers


def _calibration_edges(config: ModelConfig):
    # "output" is dequantized straight from the int32 accumulator; its params
    # are still recorded because they define the output quantization step,
    # the yardstick for the integer graph's end-to-end rounding error.
    edges = ["input", "fusion.concat", "output"]
    for kind, _name, _in_edge, out_edge, _x in _layer_table(config):
        if kind != "output":
            edges.append(out_edge)
    return edges


_ACC_LIMIT = 2**31 - 1


def _check_accumulator(name: str, fan_in: int, bias_i32):
    """int32 bound: centered inputs span 255, weights 127, plus the bias."""
    worst = fan_in * (QMAX - QMIN) * QMAX + int(np.max(np.abs(bias_i32), initial=0))
    if worst > _ACC_LIMIT:
        raise ContractError(f"layer {name!r} could overflow int32 accumulation ({worst})")


class QuantizedModel:
    """Integer-only inference model produced by calibrate()."""

    def __init__(self, config: ModelConfig, weights, w_params, biases, act, scaler):
        self.config = config
        self.weights = weights  # name -> int8 ndarray
        self.w_params = w_params  # name -> QuantParams (symmetric)
        self.biases = biases  # name -> int32 ndarray
        self.act = act  # edge -> QuantParams (affine)
        self.scaler = scaler
        self._plan = self._build_plan()

    def _build_plan(self):
        plan = {}
        for kind, name, in_edge, out_edge, _extra in _layer_table(self.config):
            s_in = self.act[in_edge].scale
            s_w = self.w_params[name].scale
            if kind == "output":
                plan[name] = {"dequant_scale": s_in * s_w}
            else:
                s_out = self.act[out_edge].scale
                plan[name] = dict(zip(("mant", "shift"), _requant_multiplier(s_in * s_w / s_out)))
        # branch outputs are requantized onto the fusion concat range
        concat = self.act["fusion.concat"]
        for edge in self._branch_edges():
            ratio = self.act[edge].scale / concat.scale
            plan[f"concat:{edge}"] = dict(zip(("mant", "shift"), _requant_multiplier(ratio)))
        return plan

    def _branch_edges(self):
        config = self.config
        edges = []
        if config.has_lag:
            edges.append("lag.relu2")
        if config.has_tcn:
            edges.append("tcn.relu3" if config.has_dilated else "tcn.relu2")
        return edges

    def _trace(self, audit, label, arr):
        if audit is not None:
            audit.append((label, str(arr.dtype)))

    def _requant_relu(self, acc, name, out_edge, audit):
        """int32 accumulator -> int8 on the out_edge params, ReLU included.

        ReLU in the integer domain is max(q, zero_point) because the zero
        point represents 0.0 exactly.
        """
        step = self._plan[name]
        zp = self.act[out_edge].zero_point
        scaled = _rounding_rshift(acc.astype(np.int64) * np.int64(step["mant"]), step["shift"])
        q = np.maximum(scaled + np.int64(zp), np.int64(zp))
        q = np.minimum(q, np.int64(QMAX)).astype(np.int8)
        self._trace(audit, out_edge, q)
        return q

    def _requant_edge(self, q, src_edge, audit):
        """Re-express int8 values from src_edge params on the concat params."""
        src = self.act[src_edge]
        dst = self.act["fusion.concat"]
        step = self._plan[f"concat:{src_edge}"]
        centered = q.astype(np.int64) - np.int64(src.zero_point)
        scaled = _rounding_rshift(centered * np.int64(step["mant"]), step["shift"])
        out = np.clip(scaled + np.int64(dst.zero_point), QMIN, QMAX).astype(np.int8)
        self._trace(audit, f"concat<-{src_edge}", out)
        return out

    def _dense_int(self, q_x, name, in_edge, audit):
        z_in = np.int32(self.act[in_edge].zero_point)
        acc = (q_x.astype(np.int32) - z_in) @ self.weights[name].astype(np.int32)
        acc = acc + self.biases[name]
        self._trace(audit, f"{name}.acc", acc)
        return acc

    def _conv_int(self, q_x, name, in_edge, dilation, audit):
        """Causal conv on int8 (B, T, C) input; returns the int32 accumulator."""
        z_in = self.act[in_edge].zero_point
        w = self.weights[name]
        k, c_in, c_out = w.shape
        batch, steps, _ = q_x.shape
        pad = (k - 1) * dilation
        # pad with the zero point: those taps contribute exactly 0 after centering
        xp = np.full((batch, steps + pad, c_in), z_in, dtype=np.int32)
        xp[:, pad:, :] = q_x
        xp -= np.int32(z_in)
        acc = np.zeros((batch * steps, c_out), dtype=np.int32)
        for tap in range(k):
            start = tap * dilation
            sl = xp[:, start : start + steps, :].reshape(batch * steps, c_in)
            acc += sl @ w[tap].astype(np.int32)
        acc = acc.reshape(batch, steps, c_out) + self.biases[name]
        self._trace(audit, f"{name}.acc", acc)
        return acc

    def _pool_int(self, q, audit):
        """Global pooling on int8 (B, T, C); output keeps the input params.

        Average uses round-half-away integer division; max is exact because
        quantization is monotone.
        """
        config = self.config
        steps = q.shape[1]
        total = q.astype(np.int64).sum(axis=1)
        # |total|/steps can only tie at .5 when steps is even; +steps//2 then rounds away
        avg = np.sign(total) * ((np.abs(total) + steps // 2) // steps)
        avg = avg.astype(np.int8)
        self._trace(audit, "tcn.pool_avg", avg)
        if not config.dual_pool:
            return avg
        mx = q.max(axis=1)
        self._trace(audit, "tcn.pool_max", mx)
        pooled = np.concatenate([avg, mx], axis=1)
        self._trace(audit, "tcn.pooled", pooled)
        return pooled

    def forward_normalized(self, x, audit=None):
        """Normalized feature windows (B, T, F) -> normalized forecasts (B, H)."""
        config = self.config
        x = np.asarray(x)
        if x.ndim != 3 or x.shape[1] != config.seq_len or x.shape[2] != config.n_features:
            raise DimensionError(
                f"expected (batch, {config.seq_len}, {config.n_features}) input, got {x.shape}"
            )
        q_in = self.act["input"].quantize(x)
        self._trace(audit, "input", q_in)
        pieces = []
        if config.has_lag:
            lag = q_in[:, -config.lag_window :, :].reshape(x.shape[0], -1)
            h = self._requant_relu(self._dense_int(lag, "lag_dense1", "input", audit), "lag_dense1", "lag.relu1", audit)
            h = self._requant_relu(self._dense_int(h, "lag_dense2", "lag.relu1", audit), "lag_dense2", "lag.relu2", audit)
            pieces.append(self._requant_edge(h, "lag.relu2", audit))
        if config.has_tcn:
            t = self._requant_relu(self._conv_int(q_in, "conv1", "input", 1, audit), "conv1", "tcn.relu1", audit)
            t = self._requant_relu(self._conv_int(t, "conv2", "tcn.relu1", 1, audit), "conv2", "tcn.relu2", audit)
            edge = "tcn.relu2"
            if config.has_dilated:
                t = self._requant_relu(
                    self._conv_int(t, "conv3", "tcn.relu2", config.dilation, audit), "conv3", "tcn.relu3", audit
                )
                edge = "tcn.relu3"
            pieces.append(self._requant_edge(self._pool_int(t, audit), edge, audit))
        fused = pieces[0] if len(pieces) == 1 else np.concatenate(pieces, axis=1)
        self._trace(audit, "fusion.concat", fused)
        h = self._requant_relu(self._dense_int(fused, "fusion_dense1", "fusion.concat", audit), "fusion_dense1", "fusion.relu1", audit)
        h = self._requant_relu(self._dense_int(h, "fusion_dense2", "fusion.relu1", audit), "fusion_dense2", "fusion.relu2", audit)
        acc = self._dense_int(h, "output", "fusion.relu2", audit)
        return acc.astype(np.float64) * self._plan["output"]["dequant_scale"]


def representative_windows(view, count: int = 1000, seed: int = 0):
    """Seeded sample of calibration windows (without replacement) from a view."""
    if view.n < 1:
        raise CalibrationError("window view has no complete window to calibrate on")
    take = min(count, view.n)
    idx = np.sort(np.random.default_rng(seed).choice(view.n, size=take, replace=False))
    return view.batch(idx)[0]


def calibrate(model: Model, windows, chunk: int = 256) -> QuantizedModel:
    """Measure activation ranges on representative windows and quantize.

    model must already be BN-folded; windows is a normalized (N, seq_len,
    n_features) array with N >= 1.
    """
    if model.bn_state:
        raise StructuralError("fold batch norm before calibration")
    windows = np.asarray(windows, dtype=np.float32)
    if windows.ndim != 3 or windows.shape[0] < 1:
        raise CalibrationError(
            f"calibration needs at least one (seq_len, n_features) window, got shape {windows.shape}"
        )
    edges = _calibration_edges(model.config)
    lo = {e: math.inf for e in edges}
    hi = {e: -math.inf for e in edges}
    with ag.no_grad():
        for start in range(0, windows.shape[0], chunk):
            capture = {}
            forward(model, windows[start : start + chunk], mode="infer", capture=capture)
            for edge in edges:
                arr = capture[edge]
                lo[edge] = min(lo[edge], float(arr.min()))
                hi[edge] = max(hi[edge], float(arr.max()))
    act = {e: activation_params(lo[e], hi[e]) for e in edges}

    weights, w_params, biases = {}, {}, {}
    for kind, name, in_edge, _out_edge, _extra in _layer_table(model.config):
        w = model.parameters[f"{name}.w"].data
        b = model.parameters[f"{name}.b"].data.astype(np.float64)
        params = weight_params(w)
        q_w = params.quantize(w)
        bias_scale = act[in_edge].scale * params.scale
        b_i32 = _round_half_away(b / bias_scale)
        if np.max(np.abs(b_i32), initial=0) > _ACC_LIMIT:
            raise CalibrationError(f"bias of layer {name!r} overflows int32 at scale {bias_scale}")
        b_i32 = b_i32.astype(np.int32)
        fan_in = w.shape[0] if kind == "dense" or kind == "output" else w.shape[0] * w.shape[1]
        _check_accumulator(name, fan_in, b_i32)
        weights[name] = q_w
        w_params[name] = params
        biases[name] = b_i32
    return QuantizedModel(model.config, weights, w_params, biases, act, model.scaler)


def quantized_forward(qmodel: QuantizedModel, window):
    """Raw feature windows -> kW forecasts.

    window is (seq_len, n_features) or (batch, seq_len, n_features) in raw
    feature units; inputs are normalized with the embedded scaler, the
    integer pass runs, and outputs are denormalized to kW.
    """
    if qmodel.scaler is None:
        raise ContractError("quantized model has no embedded scaler")
    scaler = MinMaxScaler.from_record(qmodel.scaler)
    x = np.asarray(window, dtype=np.float64)
    squeeze = x.ndim == 2
    if squeeze:
        x = x[None]
    full = np.concatenate([np.zeros(x.shape[:2] + (1,)), x], axis=2)  # target column placeholder
    flat = scaler.transform(full.reshape(-1, full.shape[2]))
    xn = flat.reshape(full.shape)[:, :, 1:].astype(np.float32)
    out = qmodel.forward_normalized(xn)
    kw = scaler.invert_target(out)
    return kw[0] if squeeze else kw


def save_quantized(qmodel: QuantizedModel, path) -> None:
    if qmodel.scaler is None:
        raise ContractError("refusing to save a quantized model without its scaler")
    meta = {
        "kind": "quantized_model",
        "model_dtype": "int8",
        "config": qmodel.config.to_dict(),
        "scaler": {"columns": list(qmodel.scaler["columns"])},
        "weight_params": {k: v.to_dict() for k, v in qmodel.w_params.items()},
        "activation_params": {k: v.to_dict() for k, v in qmodel.act.items()},
    }
    tensors = {}
    for name, q_w in qmodel.weights.items():
        tensors[f"{name}.w"] = q_w
        tensors[f"{name}.b"] = qmodel.biases[name]
    tensors["scaler.data_min"] = np.asarray(qmodel.scaler["data_min"], np.float64)
    tensors["scaler.data_max"] = np.asarray(qmodel.scaler["data_max"], np.float64)
    serialize.write_container(path, meta, tensors)


def load_quantized(path) -> QuantizedModel:
    meta, tensors = serialize.read_container(path)
    if meta.get("kind") != "quantized_model":
        raise FormatError(f"expected a quantized model container, got kind {meta.get('kind')!r}")
    try:
        config = ModelConfig(**meta["config"])
    except (KeyError, TypeError, ConfigurationError) as exc:
        raise FormatError(f"config: invalid model configuration ({exc})") from exc
    w_params = {k: QuantParams.from_dict(v) for k, v in meta["weight_params"].items()}
    act = {k: QuantParams.from_dict(v) for k, v in meta["activation_params"].items()}
    weights, biases = {}, {}
    for kind, name, _in_edge, _out_edge, _extra in _layer_table(config):
        for suffix, store, dtype in ((".w", weights, np.int8), (".b", biases, np.int32)):
            key = name + suffix
            if key not in tensors:
                raise FormatError(f"quantized model container is missing tensor {key!r}")
            if tensors[key].dtype != dtype:
                raise FormatError(f"tensor {key!r} has dtype {tensors[key].dtype}, expected {np.dtype(dtype)}")
            store[name] = tensors[key]
        if name not in w_params:
            raise FormatError(f"quantized model container is missing weight params for {name!r}")
    scaler = None
    if meta.get("scaler") is not None:
        for key in ("scaler.data_min", "scaler.data_max"):
            if key not in tensors:
                raise FormatError(f"quantized model container is missing tensor {key!r}")
        scaler = {
            "columns": list(meta["scaler"]["columns"]),
            "data_min": tensors["scaler.data_min"].copy(),
            "data_max": tensors["scaler.data_max"].copy(),
        }
    return QuantizedModel(config, weights, w_params, biases, act, scaler)


def payload_bytes(path) -> int:
    """Total tensor payload size of a container, headers and metadata excluded."""
    _meta, tensors = serialize.read_container(path)
    return sum(t.nbytes for t in tensors.values())
