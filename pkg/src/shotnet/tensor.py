"""Dense tensors with tape-based reverse-mode differentiation.

Only the operations the shot-detection network needs are provided. Tensors
hold float32 data by default; passing a float64 ``ndarray`` keeps float64,
which is used as a high-precision shadow mode for gradient checks.

Recording happens only inside an active :class:`Tape`::

    with Tape() as tape:
        loss = sum_all(square(x))
    tape.backward(loss)
    x.grad
"""
from __future__ import annotations

import threading

import numpy as np

from . import kernels
from .errors import DimensionError, InputError, ParameterError, StateError

_local = threading.local()


class Tensor:
    """N-dimensional array with an optional accumulated gradient."""

    def __init__(self, data, requires_grad=False, name=None):
        if isinstance(data, np.ndarray) and data.dtype == np.float64:
            arr = data
        else:
            arr = np.asarray(data, dtype=np.float32)
        self.data = arr
        self.grad = None
        self.requires_grad = requires_grad
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def dtype(self):
        return self.data.dtype

    def numpy(self):
        return self.data

    def zero_grad(self):
        self.grad = None

    def __repr__(self):
        label = f" {self.name!r}" if self.name else ""
        return f"Tensor{label}(shape={self.shape}, dtype={self.dtype}, requires_grad={self.requires_grad})"


class Tape:
    """Ordered record of executed operations.

    Each record is ``(output, inputs, backward_fn)`` where ``backward_fn``
    maps the output gradient to a tuple of input gradients (``None`` for
    inputs that need none).
    """

    def __init__(self):
        self.records = []
        self._produced = {}

    def __enter__(self):
        stack = getattr(_local, "stack", None)
        if stack is None:
            stack = _local.stack = []
        stack.append(self)
        return self

    def __exit__(self, *exc):
        _local.stack.pop()
        return False

    def record(self, out, inputs, backward_fn):
        self._produced[id(out)] = len(self.records)
        self.records.append((out, inputs, backward_fn))

    def backward(self, loss):
        """Propagate d(loss)/d(.) to every leaf tensor with ``requires_grad``.

        Leaf gradients accumulate into ``.grad`` (summed over all uses).
        """
        if not self.records:
            raise StateError("backward called on an empty tape; run a forward pass first")
        stop = self._produced.get(id(loss))
        if stop is None or self.records[stop][0] is not loss:
            raise StateError("loss was not produced by an operation recorded on this tape")
        pending = {id(loss): np.ones_like(loss.data)}
        for out, inputs, backward_fn in reversed(self.records[: stop + 1]):
            g = pending.pop(id(out), None)
            if g is None:
                continue
            for inp, gi in zip(inputs, backward_fn(g)):
                if gi is None or not inp.requires_grad:
                    continue
                key = id(inp)
                idx = self._produced.get(key)
                if idx is not None and self.records[idx][0] is inp:
                    if key in pending:
                        pending[key] = pending[key] + gi
                    else:
                        pending[key] = gi
                elif inp.grad is None:
                    inp.grad = np.array(gi, dtype=inp.data.dtype)
                else:
                    inp.grad += gi


def current_tape():
    stack = getattr(_local, "stack", None)
    return stack[-1] if stack else None


def backward(loss, tape=None):
    """Run the backward pass of ``tape`` (default: the active tape)."""
    tape = tape if tape is not None else current_tape()
    if tape is None:
        raise StateError("no tape available; wrap the forward pass in `with Tape():`")
    tape.backward(loss)


def _result(data, inputs, backward_fn):
    out = Tensor(data)
    tape = current_tape()
    if tape is not None and any(t.requires_grad for t in inputs):
        out.requires_grad = True
        tape.record(out, inputs, backward_fn)
    return out


def _as_tensor(x):
    return x if isinstance(x, Tensor) else Tensor(x)


# --------------------------------------------------------------------------
# convolutions and dense
# --------------------------------------------------------------------------

def conv2d_spatial(x, w, b):
    """Per-frame k x k cross-correlation with zero same-padding.

    x: (B, T, H, W, Cin), w: (k, k, Cin, Cout), b: (Cout,)
    """
    if x.data.ndim != 5:
        raise DimensionError(f"conv2d_spatial expects x of rank 5 (B,T,H,W,C), got shape {x.shape}")
    if w.data.ndim != 4 or w.shape[0] != w.shape[1] or w.shape[0] % 2 == 0:
        raise DimensionError(f"conv2d_spatial kernel axes 0,1 must be equal and odd, got shape {w.shape}")
    if w.shape[2] != x.shape[4]:
        raise DimensionError(
            f"conv2d_spatial channel mismatch: x axis 4 = {x.shape[4]}, w axis 2 = {w.shape[2]}")
    if b.shape != (w.shape[3],):
        raise DimensionError(f"conv2d_spatial bias shape {b.shape} != (w axis 3 = {w.shape[3]},)")
    bsz, t, h, wd, ci = x.shape
    x4 = np.ascontiguousarray(x.data.reshape(bsz * t, h, wd, ci))
    wk = np.ascontiguousarray(w.data)
    out = kernels.conv2d_forward(x4, wk, b.data).reshape(bsz, t, h, wd, -1)

    def backward_fn(g):
        g4 = np.ascontiguousarray(g.reshape(bsz * t, h, wd, -1))
        dx, dw, db = kernels.conv2d_backward(x4, wk, g4)
        return dx.reshape(x.shape), dw, db

    return _result(out, (x, w, b), backward_fn)


def conv1d_temporal(x, w, b, dilation=1):
    """Kernel-3 dilated temporal cross-correlation, zero same-padding along T.

    x: (B, T, H, W, Cin), w: (3, Cin, Cout), b: (Cout,). Output at ``t`` reads
    inputs at ``t - d``, ``t`` and ``t + d``.
    """
    if int(dilation) != dilation or dilation < 1:
        raise ParameterError(f"dilation must be a positive integer, got {dilation!r}")
    dilation = int(dilation)
    if x.data.ndim != 5:
        raise DimensionError(f"conv1d_temporal expects x of rank 5 (B,T,H,W,C), got shape {x.shape}")
    if w.data.ndim != 3 or w.shape[0] != 3:
        raise DimensionError(f"conv1d_temporal kernel must have shape (3, Cin, Cout), got {w.shape}")
    if w.shape[1] != x.shape[4]:
        raise DimensionError(
            f"conv1d_temporal channel mismatch: x axis 4 = {x.shape[4]}, w axis 1 = {w.shape[1]}")
    if b.shape != (w.shape[2],):
        raise DimensionError(f"conv1d_temporal bias shape {b.shape} != (w axis 2 = {w.shape[2]},)")
    bsz, t, h, wd, ci = x.shape
    x4 = np.ascontiguousarray(x.data.reshape(bsz, t, h * wd, ci))
    wk = np.ascontiguousarray(w.data)
    out = kernels.conv1d_forward(x4, wk, b.data, dilation).reshape(bsz, t, h, wd, -1)

    def backward_fn(g):
        g4 = np.ascontiguousarray(g.reshape(bsz, t, h * wd, -1))
        dx, dw, db = kernels.conv1d_backward(x4, wk, g4, dilation)
        return dx.reshape(x.shape), dw, db

    return _result(out, (x, w, b), backward_fn)


def dense(x, w, b):
    """Affine map over the last axis: ``x @ w + b``."""
    if w.data.ndim != 2 or x.shape[-1] != w.shape[0]:
        raise DimensionError(f"dense: x last axis {x.shape[-1]} does not match w axis 0 of shape {w.shape}")
    if b.shape != (w.shape[1],):
        raise DimensionError(f"dense bias shape {b.shape} != (w axis 1 = {w.shape[1]},)")
    x2 = x.data.reshape(-1, w.shape[0])
    out = (x2 @ w.data + b.data).reshape(x.shape[:-1] + (w.shape[1],))

    def backward_fn(g):
        g2 = g.reshape(-1, w.shape[1])
        return (g2 @ w.data.T).reshape(x.shape), x2.T @ g2, g2.sum(axis=0)

    return _result(out, (x, w, b), backward_fn)


# --------------------------------------------------------------------------
# normalisation, activations, pooling, reshaping
# --------------------------------------------------------------------------

def batchnorm(x, gamma, beta, moving_mean, moving_var, training, eps=1e-3, momentum=0.99):
    """Batch normalisation over every axis except the last (channels).

    In training mode batch statistics are used and ``moving_mean`` /
    ``moving_var`` are updated in place with
    ``m <- momentum * m + (1 - momentum) * batch_stat``.
    """
    c = x.shape[-1]
    for name, p in (("gamma", gamma), ("beta", beta), ("moving_mean", moving_mean), ("moving_var", moving_var)):
        if p.shape != (c,):
            raise DimensionError(f"batchnorm {name} shape {p.shape} != (channels = {c},)")
    if eps <= 0:
        raise ParameterError("batchnorm eps must be > 0")
    axes = tuple(range(x.data.ndim - 1))
    if training:
        mean = x.data.mean(axis=axes)
        var = x.data.var(axis=axes)
        dt = moving_mean.data.dtype
        moving_mean.data = (momentum * moving_mean.data + (1 - momentum) * mean).astype(dt)
        moving_var.data = (momentum * moving_var.data + (1 - momentum) * var).astype(dt)
    else:
        mean = moving_mean.data
        var = moving_var.data
    inv_std = 1.0 / np.sqrt(var + eps)
    xhat = (x.data - mean) * inv_std
    out = gamma.data * xhat + beta.data
    count = x.data.size // c

    def backward_fn(g):
        gsum = g.sum(axis=axes)
        dgamma = (g * xhat).sum(axis=axes)
        if training:
            dx = (gamma.data * inv_std / count) * (count * g - gsum - xhat * dgamma)
        else:
            dx = g * (gamma.data * inv_std)
        return dx, dgamma, gsum, None, None

    return _result(out.astype(x.dtype, copy=False), (x, gamma, beta, moving_mean, moving_var), backward_fn)


def relu(x):
    mask = x.data > 0
    return _result(np.where(mask, x.data, 0).astype(x.dtype), (x,), lambda g: (g * mask,))


def avgpool_spatial(x, crop_odd=False):
    """2 x 2 non-overlapping spatial mean on (B, T, H, W, C).

    With ``crop_odd`` the last row/column of an odd dimension is dropped
    first (27 -> 13 -> 6 -> 3); otherwise odd dimensions are rejected.
    """
    if x.data.ndim != 5:
        raise DimensionError(f"avgpool_spatial expects rank 5 input, got shape {x.shape}")
    bsz, t, h, w, c = x.shape
    if not crop_odd and (h % 2 or w % 2):
        raise DimensionError(f"avgpool_spatial needs even H and W, got H={h}, W={w}")
    h2, w2 = h // 2, w // 2
    if h2 == 0 or w2 == 0:
        raise DimensionError(f"avgpool_spatial cannot halve spatial dims H={h}, W={w}")
    xc = x.data[:, :, : 2 * h2, : 2 * w2, :]
    out = xc.reshape(bsz, t, h2, 2, w2, 2, c).mean(axis=(3, 5))

    def backward_fn(g):
        dx = np.zeros_like(x.data)
        dx[:, :, : 2 * h2, : 2 * w2, :] = np.repeat(np.repeat(g * 0.25, 2, axis=2), 2, axis=3)
        return (dx,)

    return _result(out.astype(x.dtype, copy=False), (x,), backward_fn)


def spatial_mean(x):
    """(B, T, H, W, C) -> (B, T, C) mean over H and W."""
    if x.data.ndim != 5:
        raise DimensionError(f"spatial_mean expects rank 5 input, got shape {x.shape}")
    h, w = x.shape[2], x.shape[3]
    out = x.data.mean(axis=(2, 3))

    def backward_fn(g):
        return (np.broadcast_to((g / (h * w))[:, :, None, None, :], x.shape).astype(x.dtype),)

    return _result(out.astype(x.dtype, copy=False), (x,), backward_fn)


def concat_channels(xs):
    xs = list(xs)
    lead = xs[0].shape[:-1]
    for t in xs[1:]:
        if t.shape[:-1] != lead:
            raise DimensionError(f"concat_channels leading axes differ: {lead} vs {t.shape[:-1]}")
    sizes = [t.shape[-1] for t in xs]
    splits = np.cumsum(sizes)[:-1]
    out = np.concatenate([t.data for t in xs], axis=-1)
    return _result(out, tuple(xs), lambda g: tuple(np.split(g, splits, axis=-1)))


def add(*xs):
    """Elementwise sum of equally shaped tensors."""
    shape = xs[0].shape
    for t in xs[1:]:
        if t.shape != shape:
            raise DimensionError(f"add shape mismatch: {shape} vs {t.shape}")
    out = xs[0].data.copy()
    for t in xs[1:]:
        out += t.data
    return _result(out, tuple(xs), lambda g: (g,) * len(xs))


def linear_combination(xs, coeffs, constant=0.0):
    """``sum(c_i * x_i) + constant`` for equally shaped tensors."""
    xs = list(xs)
    out = np.zeros_like(xs[0].data)
    for t, c in zip(xs, coeffs):
        if t.shape != xs[0].shape:
            raise DimensionError(f"linear_combination shape mismatch: {xs[0].shape} vs {t.shape}")
        out += c * t.data
    out += constant
    return _result(out, tuple(xs), lambda g: tuple(c * g for c in coeffs))


def squeeze_last(x):
    if x.shape[-1] != 1:
        raise DimensionError(f"squeeze_last needs a trailing axis of size 1, got shape {x.shape}")
    return _result(x.data[..., 0], (x,), lambda g: (g[..., None],))


def sum_all(x):
    return _result(np.asarray(x.data.sum(), dtype=x.dtype), (x,), lambda g: (np.full_like(x.data, g),))


def square(x):
    return _result(x.data * x.data, (x,), lambda g: (2 * x.data * g,))


# --------------------------------------------------------------------------
# similarity band
# --------------------------------------------------------------------------

def cosine_band(x, half_window=50):
    """Windowed cosine self-similarity of per-frame vectors.

    x: (B, T, C) -> (B, T, 2 * half_window + 1). Entry ``[b, i, j]`` is the
    cosine between frames ``i`` and ``i + j - half_window``; positions outside
    the sequence are 0. Zero vectors normalise to zero (cosine 0 to all).
    """
    if x.data.ndim != 3:
        raise DimensionError(f"cosine_band expects (B, T, C), got shape {x.shape}")
    bsz, t, _ = x.shape
    width = 2 * half_window + 1
    norm = np.sqrt((x.data * x.data).sum(axis=-1, keepdims=True))
    nonzero = norm > 0
    safe = np.where(nonzero, norm, 1)
    n = np.where(nonzero, x.data / safe, 0).astype(x.dtype)
    sim = n @ n.transpose(0, 2, 1)
    rows = np.arange(t)[:, None]
    cols = rows + np.arange(width)[None, :]
    padded = np.zeros((bsz, t, t + 2 * half_window), dtype=x.dtype)
    padded[:, :, half_window:half_window + t] = sim
    out = padded[:, rows, cols]

    def backward_fn(g):
        dpad = np.zeros_like(padded)
        dpad[:, rows, cols] = g
        ds = dpad[:, :, half_window:half_window + t]
        dn = (ds + ds.transpose(0, 2, 1)) @ n
        radial = (n * dn).sum(axis=-1, keepdims=True)
        dx = np.where(nonzero, (dn - n * radial) / safe, 0)
        return (dx.astype(x.dtype),)

    return _result(out, (x,), backward_fn)


# --------------------------------------------------------------------------
# loss and optimiser
# --------------------------------------------------------------------------

def _softplus(z):
    return np.maximum(z, 0) + np.log1p(np.exp(-np.abs(z)))


def sigmoid_xent_loss(logits, targets, pos_weight=1.0):
    """Mean binary cross-entropy on logits, positives weighted by ``pos_weight``."""
    tgt = np.asarray(targets.data if isinstance(targets, Tensor) else targets)
    if tgt.shape != logits.shape:
        raise DimensionError(f"targets shape {tgt.shape} != logits shape {logits.shape}")
    if not np.all((tgt == 0) | (tgt == 1)):
        raise InputError("sigmoid_xent_loss targets must be binary (0 or 1)")
    z = logits.data
    tgt = tgt.astype(z.dtype)
    per = pos_weight * tgt * _softplus(-z) + (1 - tgt) * _softplus(z)
    count = z.size
    out = np.asarray(per.sum() / count, dtype=z.dtype)

    def backward_fn(g):
        sig = 0.5 * (1 + np.tanh(0.5 * z))
        dz = pos_weight * tgt * (sig - 1) + (1 - tgt) * sig
        return ((g / count * dz).astype(z.dtype),)

    return _result(out, (logits,), backward_fn)


def sgd_momentum_step(params, grads, state, lr, momentum, l2=0.0, decay=None):
    """One in-place SGD-with-momentum update.

    ``v <- momentum * v + (grad + l2 * param)`` then ``param <- param - lr * v``.
    ``decay`` is the set of parameter names receiving the ``l2`` term (all
    names when ``None``). Missing gradients count as zero. Returns ``state``.
    """
    if lr < 0:
        raise ParameterError(f"learning rate must be >= 0, got {lr}")
    if not 0 <= momentum < 1:
        raise ParameterError(f"momentum must satisfy 0 <= momentum < 1, got {momentum}")
    for name, p in params.items():
        g = grads.get(name)
        g = np.zeros_like(p.data) if g is None else g
        if l2 and (decay is None or name in decay):
            g = g + p.data.dtype.type(l2) * p.data
        v = state.get(name)
        v = g.astype(p.data.dtype) if v is None else (p.data.dtype.type(momentum) * v + g).astype(p.data.dtype)
        state[name] = v
        p.data = p.data - p.data.dtype.type(lr) * v
    return state
