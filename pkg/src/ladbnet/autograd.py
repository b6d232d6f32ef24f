"""Reverse-mode automatic differentiation over numpy arrays.

Deliberately small: exactly the operations the dual-branch forecaster needs,
no general broadcasting, no fusion. Graphs are built through closures stored
on result tensors and replayed once in reverse topological order.
"""

from __future__ import annotations

import contextlib

import numpy as np

from .errors import ConfigurationError, ContractError, DimensionError

FLOAT_DTYPES = (np.float32, np.float64)

_grad_enabled = True


@contextlib.contextmanager
def no_grad():
    """Disable graph recording inside the block (inference / evaluation)."""
    global _grad_enabled
    prev = _grad_enabled
    _grad_enabled = False
    try:
        yield
    finally:
        _grad_enabled = prev


class Tensor:
    """A dense float array plus an optional gradient buffer.

    data is contiguous float32 or float64; grad, when populated, always has
    the same shape and dtype as data. Gradients from multiple consumers
    accumulate additively.
    """

    __slots__ = ("data", "grad", "requires_grad", "_parents", "_backward")

    def __init__(self, data, requires_grad=False):
        arr = np.asarray(data)
        if arr.dtype not in FLOAT_DTYPES:
            arr = arr.astype(np.float32)
        # ascontiguousarray would promote 0-d scalars to 1-d; keep them 0-d
        self.data = arr if arr.flags["C_CONTIGUOUS"] else np.ascontiguousarray(arr)
        self.grad = None
        self.requires_grad = bool(requires_grad)
        self._parents = ()
        self._backward = None

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def zero_grad(self):
        self.grad = None

    def detach(self):
        return Tensor(self.data, requires_grad=False)

    def __repr__(self):
        return f"Tensor(shape={self.data.shape}, dtype={self.data.dtype}, requires_grad={self.requires_grad})"


def _result(data, parents, backward_fn):
    """Wrap an op result, recording the graph edge only when it can matter."""
    out = Tensor(data)
    if _grad_enabled and any(p.requires_grad for p in parents):
        out.requires_grad = True
        out._parents = tuple(parents)
        out._backward = backward_fn
    return out


def _accumulate(tensor, grad):
    if not tensor.requires_grad:
        return
    if tensor.grad is None:
        tensor.grad = np.zeros_like(tensor.data)
    tensor.grad += grad


def backward(loss):
    """Populate grad on every requires_grad tensor reachable from `loss`.

    `loss` must be a scalar produced through recorded operations.
    """
    if loss.data.size != 1:
        raise ContractError(f"backward requires a scalar loss, got shape {loss.data.shape}")
    topo = []
    visited = set()
    stack = [(loss, False)]
    while stack:
        node, processed = stack.pop()
        if processed:
            topo.append(node)
            continue
        if id(node) in visited:
            continue
        visited.add(id(node))
        stack.append((node, True))
        for parent in node._parents:
            if id(parent) not in visited:
                stack.append((parent, False))
    loss.grad = np.ones_like(loss.data)
    for node in reversed(topo):
        if node._backward is not None:
            node._backward(node.grad)


# ---------------------------------------------------------------------------
# operations


def matmul(a, b):
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.data.shape} x {b.data.shape}")
    out_data = a.data @ b.data

    def _bw(grad):
        _accumulate(a, grad @ b.data.T)
        _accumulate(b, a.data.T @ grad)

    return _result(out_data, (a, b), _bw)


def add_bias(x, bias):
    """Add a per-channel bias to the last axis."""
    if bias.data.ndim != 1 or x.data.shape[-1] != bias.data.shape[0]:
        raise DimensionError(f"bias shape {bias.data.shape} does not match input {x.data.shape}")
    out_data = x.data + bias.data

    def _bw(grad):
        _accumulate(x, grad)
        _accumulate(bias, grad.reshape(-1, grad.shape[-1]).sum(axis=0))

    return _result(out_data, (x, bias), _bw)


def relu(x):
    out_data = np.maximum(x.data, 0)

    def _bw(grad):
        _accumulate(x, grad * (x.data > 0))

    return _result(out_data, (x,), _bw)


def causal_conv1d(x, w, bias, dilation=1):
    """Causal 1-D convolution over the time axis.

    x: (T, C_in) or (B, T, C_in); w: (K, C_in, C_out); bias: (C_out,).
    The input is left-padded with (K-1)*dilation zeros so the output keeps
    the input length and output[t] depends only on inputs at times <= t.
    """
    if dilation < 1 or int(dilation) != dilation:
        raise ConfigurationError(f"dilation must be a positive integer, got {dilation}")
    if w.data.ndim != 3:
        raise DimensionError(f"conv weight must be (K, C_in, C_out), got {w.data.shape}")
    squeeze = x.data.ndim == 2
    xd = x.data[None] if squeeze else x.data
    if xd.ndim != 3:
        raise DimensionError(f"conv input must be (T, C_in) or (B, T, C_in), got {x.data.shape}")
    batch, steps, c_in = xd.shape
    k, c_in_w, c_out = w.data.shape
    if c_in != c_in_w:
        raise DimensionError(f"conv channel mismatch: input has {c_in}, weight expects {c_in_w}")
    if bias.data.shape != (c_out,):
        raise DimensionError(f"conv bias must be ({c_out},), got {bias.data.shape}")

    pad = (k - 1) * dilation
    xp = np.concatenate([np.zeros((batch, pad, c_in), dtype=xd.dtype), xd], axis=1)
    acc = np.zeros((batch * steps, c_out), dtype=xd.dtype)
    for tap in range(k):
        start = tap * dilation
        acc += xp[:, start:start + steps, :].reshape(batch * steps, c_in) @ w.data[tap]
    out_data = acc.reshape(batch, steps, c_out) + bias.data
    if squeeze:
        out_data = out_data[0]

    def _bw(grad):
        g3 = grad[None] if squeeze else grad
        g2 = g3.reshape(batch * steps, c_out)
        _accumulate(bias, g2.sum(axis=0))
        if w.requires_grad:
            gw = np.empty_like(w.data)
            for tap in range(k):
                start = tap * dilation
                xs = xp[:, start:start + steps, :].reshape(batch * steps, c_in)
                gw[tap] = xs.T @ g2
            _accumulate(w, gw)
        if x.requires_grad:
            gxp = np.zeros_like(xp)
            for tap in range(k):
                start = tap * dilation
                gxp[:, start:start + steps, :] += (g2 @ w.data[tap].T).reshape(batch, steps, c_in)
            gx = gxp[:, pad:, :]
            _accumulate(x, gx[0] if squeeze else gx)

    return _result(out_data, (x, w, bias), _bw)


BN_EPSILON = 1e-3


class BNState:
    """Running statistics of one batch-norm layer (inference-time buffers)."""

    __slots__ = ("running_mean", "running_var")

    def __init__(self, channels, dtype=np.float32):
        self.running_mean = np.zeros(channels, dtype=dtype)
        self.running_var = np.ones(channels, dtype=dtype)

    def copy(self):
        out = BNState(self.running_mean.shape[0], self.running_mean.dtype)
        out.running_mean = self.running_mean.copy()
        out.running_var = self.running_var.copy()
        return out


def batch_norm(x, gamma, beta, state, mode, momentum=0.99, epsilon=BN_EPSILON):
    """Normalize over all axes except the last (channel) axis.

    Train mode uses batch statistics (population variance) and updates the
    running statistics in place; infer mode uses the running statistics only.
    """
    if mode not in ("train", "infer"):
        raise ConfigurationError(f"batch_norm mode must be 'train' or 'infer', got {mode!r}")
    channels = x.data.shape[-1]
    if gamma.data.shape != (channels,) or beta.data.shape != (channels,):
        raise DimensionError(
            f"batch_norm gamma/beta must be ({channels},), got {gamma.data.shape} and {beta.data.shape}"
        )
    axes = tuple(range(x.data.ndim - 1))

    if mode == "train":
        n = int(np.prod([x.data.shape[a] for a in axes])) if axes else 1
        if n < 2:
            raise ConfigurationError(f"batch_norm train mode needs >= 2 samples per channel, got {n}")
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)  # population (biased) estimator
        state.running_mean = (momentum * state.running_mean + (1.0 - momentum) * mean).astype(
            state.running_mean.dtype
        )
        state.running_var = (momentum * state.running_var + (1.0 - momentum) * var).astype(
            state.running_var.dtype
        )
    else:
        mean = state.running_mean.astype(x.data.dtype)
        var = state.running_var.astype(x.data.dtype)

    inv_std = 1.0 / np.sqrt(var + epsilon)
    xhat = (x.data - mean) * inv_std
    out_data = gamma.data * xhat + beta.data

    def _bw(grad):
        _accumulate(gamma, (grad * xhat).sum(axis=axes))
        _accumulate(beta, grad.sum(axis=axes))
        if x.requires_grad:
            if mode == "train":
                gx = gamma.data * inv_std * (
                    grad
                    - grad.mean(axis=axes)
                    - xhat * (grad * xhat).mean(axis=axes)
                )
            else:
                gx = grad * (gamma.data * inv_std)
            _accumulate(x, gx)

    return _result(out_data, (x, gamma, beta), _bw)


def dropout(x, rate, mode, rng=None):
    """Inverted dropout: identity at inference, scaled masking in training.

    The rng stream is consumed only when 0 < rate < 1 in train mode, so
    disabled layers never shift downstream draws.
    """
    if rate >= 1.0 or rate < 0.0:
        raise ConfigurationError(f"dropout rate must be in [0, 1), got {rate}")
    if mode not in ("train", "infer"):
        raise ConfigurationError(f"dropout mode must be 'train' or 'infer', got {mode!r}")
    if mode == "infer" or rate == 0.0:
        out_data = x.data

        def _bw_id(grad):
            _accumulate(x, grad)

        return _result(out_data, (x,), _bw_id)

    if rng is None:
        raise ConfigurationError("dropout in train mode requires a seeded rng")
    keep = 1.0 - rate
    mask = (rng.random(x.data.shape) >= rate).astype(x.data.dtype)
    scale = np.asarray(1.0 / keep, dtype=x.data.dtype)
    out_data = x.data * mask * scale

    def _bw(grad):
        _accumulate(x, grad * mask * scale)

    return _result(out_data, (x,), _bw)


def global_pool(x, kind):
    """Per-channel mean or max over the time axis ((B,T,C) -> (B,C), (T,C) -> (C,))."""
    if x.data.ndim not in (2, 3):
        raise DimensionError(f"global_pool expects (T, C) or (B, T, C), got {x.data.shape}")
    t_axis = x.data.ndim - 2
    steps = x.data.shape[t_axis]
    if steps < 1:
        raise DimensionError("global_pool over an empty time axis")
    if kind == "avg":
        out_data = x.data.mean(axis=t_axis)

        def _bw(grad):
            g = np.expand_dims(grad, t_axis) / steps
            _accumulate(x, np.broadcast_to(g, x.data.shape).astype(x.data.dtype))

    elif kind == "max":
        idx = np.argmax(x.data, axis=t_axis)
        out_data = np.take_along_axis(x.data, np.expand_dims(idx, t_axis), axis=t_axis).squeeze(t_axis)

        def _bw(grad):
            gx = np.zeros_like(x.data)
            np.put_along_axis(gx, np.expand_dims(idx, t_axis), np.expand_dims(grad, t_axis), axis=t_axis)
            _accumulate(x, gx)

    else:
        raise ConfigurationError(f"global_pool kind must be 'avg' or 'max', got {kind!r}")
    return _result(out_data, (x,), _bw)


def concat(tensors, axis=-1):
    """Concatenate along the channel (last) axis."""
    if not tensors:
        raise DimensionError("concat of zero tensors")
    shapes = [t.data.shape for t in tensors]
    base = shapes[0][:-1]
    if any(s[:-1] != base for s in shapes):
        raise DimensionError(f"concat requires matching leading dims, got {shapes}")
    if axis != -1:
        raise ConfigurationError("concat supports the channel axis only")
    out_data = np.concatenate([t.data for t in tensors], axis=-1)
    widths = [s[-1] for s in shapes]

    def _bw(grad):
        offset = 0
        for t, width in zip(tensors, widths):
            _accumulate(t, grad[..., offset:offset + width])
            offset += width

    return _result(out_data, tuple(tensors), _bw)


def slice_last_k(x, k):
    """Keep the trailing k timesteps of a (T, C) or (B, T, C) tensor."""
    if x.data.ndim not in (2, 3):
        raise DimensionError(f"slice_last_k expects (T, C) or (B, T, C), got {x.data.shape}")
    t_axis = x.data.ndim - 2
    steps = x.data.shape[t_axis]
    if k < 1 or k > steps:
        raise DimensionError(f"slice_last_k k={k} out of range for T={steps}")
    sl = [slice(None)] * x.data.ndim
    sl[t_axis] = slice(steps - k, steps)
    sl = tuple(sl)
    out_data = x.data[sl]

    def _bw(grad):
        gx = np.zeros_like(x.data)
        gx[sl] = grad
        _accumulate(x, gx)

    return _result(out_data, (x,), _bw)


def flatten(x):
    """Flatten the time/channel axes: (B, T, C) -> (B, T*C), (T, C) -> (T*C,)."""
    if x.data.ndim == 3:
        out_shape = (x.data.shape[0], x.data.shape[1] * x.data.shape[2])
    elif x.data.ndim == 2:
        out_shape = (x.data.shape[0] * x.data.shape[1],)
    else:
        raise DimensionError(f"flatten expects (T, C) or (B, T, C), got {x.data.shape}")
    in_shape = x.data.shape
    out_data = x.data.reshape(out_shape)

    def _bw(grad):
        _accumulate(x, grad.reshape(in_shape))

    return _result(out_data, (x,), _bw)


def mse_loss(pred, target):
    """Mean squared error over all elements; returns a scalar tensor."""
    if pred.data.shape != target.data.shape:
        raise DimensionError(f"mse_loss shape mismatch: {pred.data.shape} vs {target.data.shape}")
    diff = pred.data - target.data
    n = diff.size
    out_data = np.asarray((diff * diff).mean(), dtype=pred.data.dtype)

    def _bw(grad):
        g = grad * 2.0 * diff / n
        _accumulate(pred, g.astype(pred.data.dtype))
        if target.requires_grad:
            _accumulate(target, (-g).astype(target.data.dtype))

    return _result(out_data, (pred, target), _bw)


def tensor_sum(x):
    """Sum of all elements; returns a scalar tensor."""
    out_data = np.asarray(x.data.sum(), dtype=x.data.dtype)

    def _bw(grad):
        _accumulate(x, np.full_like(x.data, grad))

    return _result(out_data, (x,), _bw)


def dense(x, w, bias):
    """Fully connected layer: matmul plus bias."""
    return add_bias(matmul(x, w), bias)
