"""Architecture assembly, forward semantics, and model file round-trips."""

import numpy as np
import pytest

from ladbnet import model as M
from ladbnet.errors import ConfigurationError, DimensionError, FormatError

SMALL = dict(
    seq_len=20,
    n_features=5,
    lag_window=6,
    horizon=4,
    conv_filters=(8, 8),
    dilated_filters=12,
    lag_dense=(16, 10),
    fusion_dense=(14, 9),
)


def small_model(variant="full", seed=0, **overrides):
    cfg = M.ModelConfig(**{**SMALL, **overrides, "variant": variant})
    return M.build(cfg, seed=seed)


def test_forward_on_zeros_returns_finite_horizon_vector():
    net = M.build(M.ModelConfig(), seed=0)
    out = M.forward(net, np.zeros((1, 144, 27), np.float32), mode="infer")
    assert out.data.shape == (1, 72)
    assert np.all(np.isfinite(out.data))


def test_all_variants_emit_horizon_width():
    x = np.random.default_rng(0).normal(size=(3, 20, 5)).astype(np.float32)
    for variant in M.VARIANTS:
        net = small_model(variant)
        out = M.forward(net, x, mode="infer")
        assert out.data.shape == (3, 4), variant


def test_build_is_bitwise_deterministic():
    a = M.build(M.ModelConfig(), seed=42)
    b = M.build(M.ModelConfig(), seed=42)
    assert list(a.parameters) == list(b.parameters)
    for name in a.parameters:
        assert np.array_equal(a.parameters[name].data, b.parameters[name].data), name


def test_different_seeds_differ():
    a = M.build(M.ModelConfig(variant="lag_only"), seed=1)
    b = M.build(M.ModelConfig(variant="lag_only"), seed=2)
    assert not np.array_equal(a.parameters["lag_dense1.w"].data, b.parameters["lag_dense1.w"].data)


def test_infer_mode_is_deterministic():
    net = small_model()
    x = np.random.default_rng(1).normal(size=(2, 20, 5)).astype(np.float32)
    o1 = M.forward(net, x, mode="infer").data
    o2 = M.forward(net, x, mode="infer").data
    assert np.array_equal(o1, o2)


def test_lag_only_ignores_timesteps_before_window():
    net = small_model("lag_only")
    rng = np.random.default_rng(2)
    x1 = rng.normal(size=(2, 20, 5)).astype(np.float32)
    x2 = x1.copy()
    x2[:, : 20 - 6, :] = rng.normal(size=(2, 14, 5)).astype(np.float32)
    assert np.array_equal(
        M.forward(net, x1, mode="infer").data, M.forward(net, x2, mode="infer").data
    )
    x3 = x1.copy()
    x3[:, -1, :] += 1.0
    assert not np.array_equal(
        M.forward(net, x1, mode="infer").data, M.forward(net, x3, mode="infer").data
    )


def test_full_model_sees_earliest_timestep():
    net = small_model("full")
    rng = np.random.default_rng(3)
    x1 = rng.normal(size=(1, 20, 5)).astype(np.float32)
    x2 = x1.copy()
    x2[0, 0, :] += 3.0
    assert not np.array_equal(
        M.forward(net, x1, mode="infer").data, M.forward(net, x2, mode="infer").data
    )


def test_train_mode_uses_dropout_and_batch_stats():
    net = small_model()
    x = np.random.default_rng(4).normal(size=(4, 20, 5)).astype(np.float32)
    o1 = M.forward(net, x, mode="train", rng=np.random.default_rng(0)).data
    o2 = M.forward(net, x, mode="train", rng=np.random.default_rng(1)).data
    assert not np.array_equal(o1, o2)
    with pytest.raises(ConfigurationError):
        M.forward(net, x, mode="train")


def test_wrong_input_shape_rejected():
    net = small_model()
    with pytest.raises(DimensionError):
        M.forward(net, np.zeros((2, 21, 5), np.float32), mode="infer")
    with pytest.raises(DimensionError):
        M.forward(net, np.zeros((20, 5), np.float32), mode="infer")


def test_unknown_variant_rejected():
    with pytest.raises(ConfigurationError):
        M.ModelConfig(variant="bogus")


def test_config_invariants_enforced():
    with pytest.raises(ConfigurationError):
        M.ModelConfig(lag_window=200, seq_len=144)
    with pytest.raises(ConfigurationError):
        M.ModelConfig(horizon=0)
    with pytest.raises(ConfigurationError):
        M.ModelConfig(dropout=1.0)


# parameter counts below were summed by hand from the layer dimensions
# (weights, biases, BN gamma/beta; running stats excluded)


def test_count_params_tiny_dense_case():
    net = small_model("lag_only", lag_dense=(3, 2), fusion_dense=(2, 2), lag_window=1, n_features=2)
    # lag: 2*3+3 + BN 6 + 3*2+2 + BN 4 = 27; fusion: 2*2+2 + BN 4 + 2*2+2 = 16; out: 2*4+4 = 12
    assert M.count_params(net) == 27 + 16 + 12


def test_count_params_default_architecture():
    assert M.count_params(M.build(M.ModelConfig(), seed=0)) == 383_880


def test_count_params_per_variant():
    expected = {
        "full": 383_880,
        "lag_only": 275_528,
        "tcn_only": 151_304,
        "no_dilated": 326_152,
        "no_dual_pool": 351_112,
    }
    for variant, count in expected.items():
        net = M.build(M.ModelConfig(variant=variant), seed=0)
        assert M.count_params(net) == count, variant
    assert expected["tcn_only"] < expected["full"]


def test_fusion_width_per_variant():
    widths = {"full": 384, "lag_only": 128, "tcn_only": 256, "no_dilated": 256, "no_dual_pool": 256}
    for variant, width in widths.items():
        cfg = M.ModelConfig(variant=variant)
        assert cfg.fusion_in == width, variant
        net = M.build(cfg, seed=0)
        assert net.parameters["fusion_dense1.w"].data.shape == (width, 256)


def test_no_dual_pool_uses_average_only():
    net = small_model("no_dual_pool")
    x = np.random.default_rng(5).normal(size=(2, 20, 5)).astype(np.float32)
    capture = {}
    M.forward(net, x, mode="infer", capture=capture)
    assert "tcn.pool_max" not in capture
    assert np.array_equal(capture["tcn.pooled"], capture["tcn.pool_avg"])
    assert capture["tcn.pooled"].shape == (2, 12)


def test_capture_exposes_quantization_edges():
    net = small_model("full")
    x = np.random.default_rng(6).normal(size=(2, 20, 5)).astype(np.float32)
    capture = {}
    out = M.forward(net, x, mode="infer", capture=capture)
    for edge in (
        "input",
        "lag.relu1",
        "lag.relu2",
        "tcn.relu1",
        "tcn.relu2",
        "tcn.relu3",
        "tcn.pool_avg",
        "tcn.pool_max",
        "tcn.pooled",
        "fusion.concat",
        "fusion.relu1",
        "fusion.relu2",
        "output",
    ):
        assert edge in capture, edge
    assert capture["fusion.concat"].shape == (2, 10 + 24)
    assert np.array_equal(capture["output"], out.data)


def test_save_load_roundtrip_forward_bitwise(tmp_path):
    net = small_model()
    # make BN buffers non-trivial before saving
    x = np.random.default_rng(7).normal(size=(4, 20, 5)).astype(np.float32)
    M.forward(net, x, mode="train", rng=np.random.default_rng(0))
    net.scaler = {
        "columns": ["kW", "DBT"],
        "data_min": np.array([1.5, -3.25], np.float64),
        "data_max": np.array([99.0, 41.5], np.float64),
    }
    path = tmp_path / "model.ladb"
    M.save(net, path)
    back = M.load(path)
    assert back.config == net.config
    assert np.array_equal(
        M.forward(net, x, mode="infer").data, M.forward(back, x, mode="infer").data
    )
    assert back.scaler["columns"] == ["kW", "DBT"]
    assert np.array_equal(back.scaler["data_min"], net.scaler["data_min"])


def test_load_rejects_corrupted_magic(tmp_path):
    path = tmp_path / "model.ladb"
    M.save(small_model(), path)
    raw = bytearray(path.read_bytes())
    raw[:4] = b"NOPE"
    path.write_bytes(bytes(raw))
    with pytest.raises(FormatError, match="magic"):
        M.load(path)


def test_load_rejects_truncated_file(tmp_path):
    path = tmp_path / "model.ladb"
    M.save(small_model(), path)
    raw = path.read_bytes()
    path.write_bytes(raw[: len(raw) - 10])
    with pytest.raises(FormatError):
        M.load(path)


def test_load_rejects_wrong_kind(tmp_path):
    from ladbnet import serialize

    path = tmp_path / "other.ladb"
    serialize.write_container(path, {"kind": "dataset"}, {"x": np.zeros(2, np.float32)})
    with pytest.raises(FormatError, match="kind"):
        M.load(path)
