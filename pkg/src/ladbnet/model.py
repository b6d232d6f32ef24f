"""Dual-branch forecaster: a lag MLP plus a temporal conv net, fused.

The lag branch reads only the trailing window of the input sequence through
dense layers; the conv branch reads the whole sequence through causal
convolutions (the last one dilated) and dual global pooling. Ablation
variants drop one branch or sub-block while keeping the output head.
"""

from __future__ import annotations

import dataclasses

import numpy as np

from . import autograd as ag
from . import serialize
from .errors import ConfigurationError, DimensionError, FormatError

VARIANTS = ("full", "lag_only", "tcn_only", "no_dilated", "no_dual_pool")


@dataclasses.dataclass
class ModelConfig:
    seq_len: int = 144
    n_features: int = 27
    lag_window: int = 24
    horizon: int = 72
    conv_filters: tuple = (64, 64)
    dilated_filters: int = 128
    kernel_size: int = 3
    dilation: int = 2
    lag_dense: tuple = (256, 128)
    fusion_dense: tuple = (256, 128)
    dropout: float = 0.1
    variant: str = "full"

    def __post_init__(self):
        self.conv_filters = tuple(self.conv_filters)
        self.lag_dense = tuple(self.lag_dense)
        self.fusion_dense = tuple(self.fusion_dense)
        if self.variant not in VARIANTS:
            raise ConfigurationError(f"unknown variant {self.variant!r}, expected one of {VARIANTS}")
        if not 1 <= self.lag_window <= self.seq_len:
            raise ConfigurationError(f"lag_window {self.lag_window} must be in [1, seq_len={self.seq_len}]")
        if self.horizon < 1:
            raise ConfigurationError(f"horizon must be >= 1, got {self.horizon}")
        sizes = (
            self.n_features,
            self.dilated_filters,
            self.kernel_size,
            self.dilation,
            *self.conv_filters,
            *self.lag_dense,
            *self.fusion_dense,
        )
        if any(s < 1 for s in sizes):
            raise ConfigurationError(f"all layer sizes must be >= 1, got {sizes}")
        if not 0.0 <= self.dropout < 1.0:
            raise ConfigurationError(f"dropout must be in [0, 1), got {self.dropout}")

    def to_dict(self):
        d = dataclasses.asdict(self)
        for key in ("conv_filters", "lag_dense", "fusion_dense"):
            d[key] = list(d[key])
        return d

    @property
    def has_lag(self):
        return self.variant != "tcn_only"

    @property
    def has_tcn(self):
        return self.variant != "lag_only"

    @property
    def has_dilated(self):
        return self.has_tcn and self.variant != "no_dilated"

    @property
    def dual_pool(self):
        return self.variant != "no_dual_pool"

    @property
    def tcn_channels(self):
        """Channel width of the feature map that feeds the pooling stage."""
        return self.dilated_filters if self.has_dilated else self.conv_filters[-1]

    @property
    def tcn_width(self):
        return self.tcn_channels * (2 if self.dual_pool else 1)

    @property
    def fusion_in(self):
        width = 0
        if self.has_lag:
            width += self.lag_dense[-1]
        if self.has_tcn:
            width += self.tcn_width
        return width


class Model:
    """Parameters plus batch-norm buffers for one configured network.

    parameters maps layer-qualified names to Tensors in a fixed build order;
    bn_state maps batch-norm layer names to running statistics. An optional
    scaler record travels with the model so a loaded file can normalize raw
    inputs and denormalize predictions on its own.
    """

    def __init__(self, config: ModelConfig):
        self.config = config
        self.parameters: dict = {}
        self.bn_state: dict = {}
        self.scaler = None

    def param_list(self):
        return list(self.parameters.values())

    def zero_grad(self):
        for p in self.parameters.values():
            p.grad = None


def _glorot(rng, shape, fan_in, fan_out):
    limit = np.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-limit, limit, size=shape).astype(np.float32)


def build(config: ModelConfig, seed: int) -> Model:
    """Construct a model with Glorot-uniform weights from one seeded stream.

    Same config and seed give bitwise-identical parameters; layers are
    created (and the rng consumed) in a fixed order.
    """
    rng = np.random.default_rng(seed)
    model = Model(config)
    params = model.parameters

    def dense(name, n_in, n_out):
        params[f"{name}.w"] = ag.Tensor(_glorot(rng, (n_in, n_out), n_in, n_out), requires_grad=True)
        params[f"{name}.b"] = ag.Tensor(np.zeros(n_out, np.float32), requires_grad=True)

    def bn(name, channels):
        params[f"{name}.gamma"] = ag.Tensor(np.ones(channels, np.float32), requires_grad=True)
        params[f"{name}.beta"] = ag.Tensor(np.zeros(channels, np.float32), requires_grad=True)
        model.bn_state[name] = ag.BNState(channels)

    def conv(name, c_in, c_out, k):
        fan = (k * c_in, k * c_out)
        params[f"{name}.w"] = ag.Tensor(_glorot(rng, (k, c_in, c_out), *fan), requires_grad=True)
        params[f"{name}.b"] = ag.Tensor(np.zeros(c_out, np.float32), requires_grad=True)

    if config.has_lag:
        dense("lag_dense1", config.lag_window * config.n_features, config.lag_dense[0])
        bn("lag_bn1", config.lag_dense[0])
        dense("lag_dense2", config.lag_dense[0], config.lag_dense[1])
        bn("lag_bn2", config.lag_dense[1])
    if config.has_tcn:
        k = config.kernel_size
        conv("conv1", config.n_features, config.conv_filters[0], k)
        bn("tcn_bn1", config.conv_filters[0])
        conv("conv2", config.conv_filters[0], config.conv_filters[1], k)
        bn("tcn_bn2", config.conv_filters[1])
        if config.has_dilated:
            conv("conv3", config.conv_filters[1], config.dilated_filters, k)
            bn("tcn_bn3", config.dilated_filters)
    dense("fusion_dense1", config.fusion_in, config.fusion_dense[0])
    bn("fusion_bn1", config.fusion_dense[0])
    dense("fusion_dense2", config.fusion_dense[0], config.fusion_dense[1])
    dense("output", config.fusion_dense[1], config.horizon)
    return model


def forward(model: Model, batch, mode: str, rng=None, capture=None):
    """Run the network on (B, seq_len, n_features); returns (B, horizon).

    mode 'train' applies batch statistics and dropout (rng required when
    dropout > 0); mode 'infer' is deterministic. When capture is a dict it
    receives the float activations at every quantization edge.
    """
    cfg = model.config
    x = batch if isinstance(batch, ag.Tensor) else ag.Tensor(batch)
    if x.data.ndim != 3 or x.data.shape[1:] != (cfg.seq_len, cfg.n_features):
        raise DimensionError(
            f"expected input (B, {cfg.seq_len}, {cfg.n_features}), got {x.data.shape}"
        )
    if mode not in ("train", "infer"):
        raise ConfigurationError(f"mode must be 'train' or 'infer', got {mode!r}")
    if mode == "train" and cfg.dropout > 0.0 and rng is None:
        raise ConfigurationError("train-mode forward with dropout requires an rng")
    p = model.parameters

    def record(name, tensor):
        if capture is not None:
            capture[name] = tensor.data

    def block(name, h, bn_name):
        """affine output -> BN (absent once folded) -> relu -> dropout."""
        if bn_name is not None and bn_name in model.bn_state:
            h = ag.batch_norm(
                h, p[f"{bn_name}.gamma"], p[f"{bn_name}.beta"], model.bn_state[bn_name], mode
            )
        h = ag.relu(h)
        record(name, h)
        return ag.dropout(h, cfg.dropout, mode, rng)

    record("input", x)
    branches = []
    if cfg.has_lag:
        h = ag.flatten(ag.slice_last_k(x, cfg.lag_window))
        h = block("lag.relu1", ag.dense(h, p["lag_dense1.w"], p["lag_dense1.b"]), "lag_bn1")
        h = block("lag.relu2", ag.dense(h, p["lag_dense2.w"], p["lag_dense2.b"]), "lag_bn2")
        branches.append(h)
    if cfg.has_tcn:
        h = block("tcn.relu1", ag.causal_conv1d(x, p["conv1.w"], p["conv1.b"], dilation=1), "tcn_bn1")
        h = block("tcn.relu2", ag.causal_conv1d(h, p["conv2.w"], p["conv2.b"], dilation=1), "tcn_bn2")
        if cfg.has_dilated:
            h = block(
                "tcn.relu3",
                ag.causal_conv1d(h, p["conv3.w"], p["conv3.b"], dilation=cfg.dilation),
                "tcn_bn3",
            )
        avg = ag.global_pool(h, "avg")
        record("tcn.pool_avg", avg)
        if cfg.dual_pool:
            mx = ag.global_pool(h, "max")
            record("tcn.pool_max", mx)
            pooled = ag.concat([avg, mx])
        else:
            pooled = avg
        record("tcn.pooled", pooled)
        branches.append(pooled)
    fused = ag.concat(branches) if len(branches) > 1 else branches[0]
    record("fusion.concat", fused)
    h = block("fusion.relu1", ag.dense(fused, p["fusion_dense1.w"], p["fusion_dense1.b"]), "fusion_bn1")
    h = block("fusion.relu2", ag.dense(h, p["fusion_dense2.w"], p["fusion_dense2.b"]), None)
    out = ag.dense(h, p["output.w"], p["output.b"])
    record("output", out)
    return out


def count_params(model: Model) -> int:
    """Trainable scalars: weights, biases, BN gamma/beta (not running stats)."""
    return sum(int(p.data.size) for p in model.parameters.values())


def save(model: Model, path, extra_meta: dict | None = None) -> None:
    meta = {
        "kind": "model",
        "model_dtype": "float32",
        "config": model.config.to_dict(),
        "scaler": None,
    }
    if extra_meta:
        overlap = set(extra_meta) & set(meta)
        if overlap:
            raise ConfigurationError(f"extra metadata would shadow reserved keys {sorted(overlap)}")
        meta.update(extra_meta)
    tensors = {name: p.data for name, p in model.parameters.items()}
    for name, state in model.bn_state.items():
        tensors[f"{name}.running_mean"] = state.running_mean
        tensors[f"{name}.running_var"] = state.running_var
    if model.scaler is not None:
        meta["scaler"] = {"columns": list(model.scaler["columns"])}
        tensors["scaler.data_min"] = np.asarray(model.scaler["data_min"], np.float64)
        tensors["scaler.data_max"] = np.asarray(model.scaler["data_max"], np.float64)
    serialize.write_container(path, meta, tensors)


def load(path) -> Model:
    meta, tensors = serialize.read_container(path)
    if meta.get("kind") != "model":
        raise FormatError(f"metadata: expected kind 'model', found {meta.get('kind')!r}")
    if meta.get("model_dtype") != "float32":
        raise FormatError(f"metadata: expected a float32 model, found {meta.get('model_dtype')!r}")
    try:
        config = ModelConfig(**meta["config"])
    except (KeyError, TypeError, ConfigurationError) as exc:
        raise FormatError(f"config: invalid model configuration ({exc})") from exc
    model = build(config, seed=0)
    for name, param in model.parameters.items():
        if name not in tensors:
            raise FormatError(f"tensor {name!r}: missing from file")
        arr = tensors[name]
        if arr.shape != param.data.shape or arr.dtype != np.float32:
            raise FormatError(
                f"tensor {name!r}: expected float32 {param.data.shape}, found {arr.dtype} {arr.shape}"
            )
        param.data = arr.copy()
    for name, state in model.bn_state.items():
        for field in ("running_mean", "running_var"):
            key = f"{name}.{field}"
            if key not in tensors:
                raise FormatError(f"tensor {key!r}: missing from file")
            setattr(state, field, tensors[key].astype(np.float32, copy=True))
    if meta.get("scaler") is not None:
        model.scaler = {
            "columns": list(meta["scaler"]["columns"]),
            "data_min": tensors["scaler.data_min"].copy(),
            "data_max": tensors["scaler.data_max"].copy(),
        }
    return model
