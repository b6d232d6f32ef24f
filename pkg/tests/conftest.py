"""Pin BLAS threading before numpy loads so reductions are deterministic."""

import os

for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS"):
    os.environ.setdefault(var, "1")


import json

import pytest


@pytest.fixture(scope="session")
def pipeline_env(tmp_path_factory):
    """Tiny trained artifact set (CSV, dataset, float and int8 models) shared
    by the CLI and service tests; built once through the CLI itself."""
    from ladbnet import cli

    root = tmp_path_factory.mktemp("pipeline")
    cfg = {
        "data": str(root / "d.csv"),
        "model": str(root / "m.ladb"),
        "rows": 6000,
        "seed": 7,
        "calibration_windows": 64,
        "model_config": {
            "seq_len": 36, "lag_window": 12, "horizon": 12,
            "conv_filters": [8, 8], "dilated_filters": 12,
            "lag_dense": [16, 10], "fusion_dense": [14, 9],
        },
        "train_config": {"max_epochs": 2, "batch_size": 32, "early_stop_patience": 2},
    }
    cfg_path = root / "cfg.json"
    cfg_path.write_text(json.dumps(cfg))
    c = str(cfg_path)
    assert cli.main(["gen-data", "--config", c]) == 0
    assert cli.main(["prepare", "--config", c, "--out", str(root / "d.npz")]) == 0
    assert cli.main(["train", "--config", c, "--data", str(root / "d.npz"), "--seed", "3"]) == 0
    assert cli.main(["quantize", "--config", c, "--data", str(root / "d.npz")]) == 0
    return {
        "root": root,
        "config": c,
        "cfg_dict": cfg,
        "csv": str(root / "d.csv"),
        "npz": str(root / "d.npz"),
        "model": str(root / "m.ladb"),
        "qmodel": str(root / "m.int8.ladb"),
    }
