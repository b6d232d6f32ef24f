"""Mini-batch training: Adam updates, MSE loss, early stopping on validation.

One seeded generator drives both batch shuffling and dropout masks, so a
fixed seed reproduces training bitwise in single-threaded mode.
"""

from __future__ import annotations

import dataclasses
import json
import time

import numpy as np

from . import autograd as ag
from . import model as M
from .errors import ConfigurationError, ContractError


@dataclasses.dataclass
class TrainConfig:
    learning_rate: float = 5e-4
    batch_size: int = 16
    max_epochs: int = 400
    early_stop_patience: int = 50
    adam_beta1: float = 0.9
    adam_beta2: float = 0.999
    adam_epsilon: float = 1e-8
    seed: int = 0
    shuffle: bool = True

    def __post_init__(self):
        positive = {
            "learning_rate": self.learning_rate,
            "batch_size": self.batch_size,
            "max_epochs": self.max_epochs,
            "early_stop_patience": self.early_stop_patience,
            "adam_beta1": self.adam_beta1,
            "adam_beta2": self.adam_beta2,
            "adam_epsilon": self.adam_epsilon,
        }
        for name, value in positive.items():
            if value <= 0:
                raise ConfigurationError(f"{name} must be positive, got {value}")
        if self.early_stop_patience > self.max_epochs:
            raise ConfigurationError(
                f"patience {self.early_stop_patience} exceeds max_epochs {self.max_epochs}"
            )

    @classmethod
    def from_dict(cls, raw: dict):
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ConfigurationError(f"unknown training config keys {sorted(unknown)}")
        return cls(**raw)

    def to_dict(self):
        return dataclasses.asdict(self)


@dataclasses.dataclass
class TrainHistory:
    train_loss: list
    val_loss: list
    epoch_seconds: list
    best_epoch: int  # 0-based index into the loss lists
    stopped_early: bool

    def to_dict(self):
        return dataclasses.asdict(self)

    def to_json(self):
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)


class AdamState:
    """First/second moment buffers and the shared step counter."""

    def __init__(self):
        self.m = {}
        self.v = {}
        self.step = 0


def adam_step(params: dict, state: AdamState, config: TrainConfig) -> None:
    """One bias-corrected Adam update over named parameters, in place."""
    state.step += 1
    t = state.step
    b1, b2 = config.adam_beta1, config.adam_beta2
    corr1 = 1.0 - b1**t
    corr2 = 1.0 - b2**t
    for name, p in params.items():
        g = p.grad
        if g is None:
            raise ContractError(f"parameter {name} has no gradient")
        if not np.all(np.isfinite(g)):
            raise ContractError(f"non-finite gradient in parameter {name}")
        if name not in state.m:
            state.m[name] = np.zeros_like(p.data)
            state.v[name] = np.zeros_like(p.data)
        m = state.m[name]
        v = state.v[name]
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * (g * g)
        m_hat = m / corr1
        v_hat = v / corr2
        p.data -= (config.learning_rate * m_hat / (np.sqrt(v_hat) + config.adam_epsilon)).astype(
            p.data.dtype
        )


def batch_indices(n: int, batch_size: int, order: np.ndarray):
    """Partition `order` into batches; a trailing singleton joins the previous
    batch so batch-norm always sees at least two samples."""
    batches = [order[s:s + batch_size] for s in range(0, n, batch_size)]
    if len(batches) >= 2 and len(batches[-1]) == 1:
        batches[-2] = np.concatenate([batches[-2], batches[-1]])
        batches.pop()
    return batches


def _validation_mse(model, view, chunk=256) -> float:
    total = 0.0
    count = 0
    with ag.no_grad():
        for start in range(0, len(view), chunk):
            idx = np.arange(start, min(start + chunk, len(view)))
            x, y = view.batch(idx)
            pred = M.forward(model, x, mode="infer").data
            diff = pred.astype(np.float64) - y.astype(np.float64)
            total += float((diff * diff).sum())
            count += diff.size
    return total / count


def train(model, dataset, config: TrainConfig, log=None):
    """Fit on the train split, select on validation, restore the best epoch.

    Returns (model, TrainHistory); the passed model is updated in place and
    ends up carrying the best-epoch weights and BN statistics.
    """
    train_view = dataset.view("train")
    val_view = dataset.view("val")
    if len(train_view) < 2 or len(val_view) < 1:
        raise ConfigurationError(
            f"training needs >= 2 train and >= 1 val windows, got {len(train_view)}/{len(val_view)}"
        )
    rng = np.random.default_rng(config.seed)
    adam = AdamState()
    history = TrainHistory([], [], [], best_epoch=0, stopped_early=False)
    best_val = np.inf
    best_params = None
    best_bn = None
    since_improve = 0

    for epoch in range(config.max_epochs):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_view)) if config.shuffle else np.arange(len(train_view))
        sse = 0.0
        count = 0
        for idx in batch_indices(len(train_view), config.batch_size, order):
            x, y = train_view.batch(idx)
            model.zero_grad()
            pred = M.forward(model, x, mode="train", rng=rng)
            loss = ag.mse_loss(pred, ag.Tensor(y))
            ag.backward(loss)
            adam_step(model.parameters, adam, config)
            sse += float(loss.data) * y.size
            count += y.size
        train_mse = sse / count
        val_mse = _validation_mse(model, val_view)
        history.train_loss.append(train_mse)
        history.val_loss.append(val_mse)
        history.epoch_seconds.append(time.perf_counter() - t0)

        if val_mse < best_val:
            best_val = val_mse
            history.best_epoch = epoch
            best_params = {k: p.data.copy() for k, p in model.parameters.items()}
            best_bn = {k: s.copy() for k, s in model.bn_state.items()}
            since_improve = 0
        else:
            since_improve += 1
        if log is not None:
            log(
                f"epoch {epoch + 1}/{config.max_epochs} "
                f"train_mse {train_mse:.6f} val_mse {val_mse:.6f} "
                f"{history.epoch_seconds[-1]:.1f}s"
            )
        if since_improve >= config.early_stop_patience:
            history.stopped_early = True
            break

    for name, arr in best_params.items():
        model.parameters[name].data = arr
    for name, state in best_bn.items():
        model.bn_state[name] = state
    return model, history
