"""Shot-transition network: dilated factorized convolution cells, frame
similarity branches and two per-frame classification heads.

Parameters live in an ordered ``{name: Tensor}`` map. Names::

    cell{c}/d{r}/spatial/kernel   (3, 3, Cin, F)     c in 1..6, r in 1,2,4,8
    cell{c}/d{r}/spatial/bias     (F,)
    cell{c}/d{r}/temporal/kernel  (3, F, F)
    cell{c}/d{r}/temporal/bias    (F,)
    cell{c}/bn/{gamma,beta,moving_mean,moving_var}  (4F,)
    sim{k}/proj/{kernel,bias}     (4F_k, P), (P,)    k in 1..3, one per pooling stage
    sim{k}/window/{kernel,bias}   (2h+1, D), (D,)
    hist/window/{kernel,bias}     (2h+1, D), (D,)
    head/hidden/{kernel,bias}     (Cfeat, H), (H,)
    head/single/{kernel,bias}     (H, 1), (1,)
    head/all/{kernel,bias}        (H, 1), (1,)
"""
from __future__ import annotations

from collections import OrderedDict
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import DimensionError, InputError
from .tensor import (
    Tensor,
    add,
    avgpool_spatial,
    batchnorm,
    concat_channels,
    conv1d_temporal,
    conv2d_spatial,
    cosine_band,
    dense,
    relu,
    spatial_mean,
    squeeze_last,
)

WINDOW = 100  # frames per network input window
HIST_BINS = 512
DILATIONS = (1, 2, 4, 8)
NUM_CELLS = 6


@dataclass(frozen=True)
class ModelConfig:
    """Network dimensions. ``filters`` gives F for cell pairs (1,2), (3,4), (5,6)."""

    filters: tuple = (16, 32, 64)
    proj_dim: int = 128
    sim_dim: int = 128
    hidden: int = 1024
    half_window: int = 50
    use_similarity: bool = True
    use_histogram: bool = True
    in_channels: int = 3
    bn_eps: float = 1e-3
    bn_momentum: float = 0.99

    def cell_filters(self, cell):
        return self.filters[(cell - 1) // 2]

    def cell_in_channels(self, cell):
        if cell == 1:
            return self.in_channels
        return 4 * self.cell_filters(cell - 1)

    @property
    def feature_channels(self):
        n_sim = (3 if self.use_similarity else 0) + (1 if self.use_histogram else 0)
        return 4 * self.filters[2] + n_sim * self.sim_dim


def param_count(cfg):
    """Number of trainable scalars (moving statistics excluded).

    cell c with input Ci, filters F:  4 * (9*Ci*F + F + 3*F*F + F) + 2 * 4F
    similarity source k (learned):    4F_k*P + P + (2h+1)*D + D
    histogram source:                 (2h+1)*D + D
    heads:                            Cfeat*H + H + 2 * (H + 1)
    """
    total = 0
    for c in range(1, NUM_CELLS + 1):
        ci, f = cfg.cell_in_channels(c), cfg.cell_filters(c)
        total += 4 * (9 * ci * f + f + 3 * f * f + f) + 2 * 4 * f
    width = 2 * cfg.half_window + 1
    if cfg.use_similarity:
        for k in range(3):
            total += 4 * cfg.filters[k] * cfg.proj_dim + cfg.proj_dim + width * cfg.sim_dim + cfg.sim_dim
    if cfg.use_histogram:
        total += width * cfg.sim_dim + cfg.sim_dim
    h = cfg.hidden
    total += cfg.feature_channels * h + h + 2 * (h + 1)
    return total


def trainable_names(params):
    return [n for n in params if not n.endswith(("moving_mean", "moving_var"))]


def decay_names(params):
    """Names that receive L2 regularisation: kernels only."""
    return {n for n in params if n.endswith("/kernel")}


def init_params(cfg=ModelConfig(), seed=0, dtype=np.float32):
    """He-normal kernels, zero biases, identity batch norm."""
    rng = np.random.default_rng(seed)
    params = OrderedDict()

    def kernel(name, shape, fan_in):
        data = rng.standard_normal(shape) * np.sqrt(2.0 / fan_in)
        params[name] = Tensor(data.astype(dtype), requires_grad=True, name=name)

    def const(name, shape, value, grad=True):
        params[name] = Tensor(np.full(shape, value, dtype=dtype), requires_grad=grad, name=name)

    for c in range(1, NUM_CELLS + 1):
        ci, f = cfg.cell_in_channels(c), cfg.cell_filters(c)
        for d in DILATIONS:
            p = f"cell{c}/d{d}"
            kernel(f"{p}/spatial/kernel", (3, 3, ci, f), 9 * ci)
            const(f"{p}/spatial/bias", (f,), 0.0)
            kernel(f"{p}/temporal/kernel", (3, f, f), 3 * f)
            const(f"{p}/temporal/bias", (f,), 0.0)
        const(f"cell{c}/bn/gamma", (4 * f,), 1.0)
        const(f"cell{c}/bn/beta", (4 * f,), 0.0)
        const(f"cell{c}/bn/moving_mean", (4 * f,), 0.0, grad=False)
        const(f"cell{c}/bn/moving_var", (4 * f,), 1.0, grad=False)
    width = 2 * cfg.half_window + 1
    if cfg.use_similarity:
        for k in range(1, 4):
            c = 4 * cfg.filters[k - 1]
            kernel(f"sim{k}/proj/kernel", (c, cfg.proj_dim), c)
            const(f"sim{k}/proj/bias", (cfg.proj_dim,), 0.0)
            kernel(f"sim{k}/window/kernel", (width, cfg.sim_dim), width)
            const(f"sim{k}/window/bias", (cfg.sim_dim,), 0.0)
    if cfg.use_histogram:
        kernel("hist/window/kernel", (width, cfg.sim_dim), width)
        const("hist/window/bias", (cfg.sim_dim,), 0.0)
    kernel("head/hidden/kernel", (cfg.feature_channels, cfg.hidden), cfg.feature_channels)
    const("head/hidden/bias", (cfg.hidden,), 0.0)
    for head in ("single", "all"):
        kernel(f"head/{head}/kernel", (cfg.hidden, 1), cfg.hidden)
        const(f"head/{head}/bias", (1,), 0.0)
    return params


def config_from_params(params, **overrides):
    """Recover a :class:`ModelConfig` from parameter shapes."""
    try:
        filters = tuple(params[f"cell{c}/d1/spatial/kernel"].shape[3] for c in (1, 3, 5))
        in_channels = params["cell1/d1/spatial/kernel"].shape[2]
        hidden = params["head/hidden/kernel"].shape[1]
    except KeyError as exc:
        raise InputError(f"parameter set is missing {exc.args[0]!r}") from None
    use_similarity = "sim1/proj/kernel" in params
    use_histogram = "hist/window/kernel" in params
    proj_dim, sim_dim, width = 128, 128, 101
    if use_similarity:
        proj_dim = params["sim1/proj/kernel"].shape[1]
        width, sim_dim = params["sim1/window/kernel"].shape
    elif use_histogram:
        width, sim_dim = params["hist/window/kernel"].shape
    kw = dict(filters=filters, proj_dim=proj_dim, sim_dim=sim_dim, hidden=hidden,
              half_window=(width - 1) // 2, use_similarity=use_similarity,
              use_histogram=use_histogram, in_channels=in_channels)
    kw.update(overrides)
    cfg = ModelConfig(**kw)
    expected = init_params(cfg)
    for name, t in expected.items():
        if name not in params or params[name].shape != t.shape:
            got = params[name].shape if name in params else "missing"
            raise InputError(f"parameter {name!r}: expected shape {t.shape}, got {got}")
    return cfg


def cast_params(params, dtype):
    """Copy of ``params`` with every tensor converted to ``dtype``."""
    out = OrderedDict()
    for name, t in params.items():
        out[name] = Tensor(t.data.astype(dtype), requires_grad=t.requires_grad, name=name)
    return out


def ddcnn_cell(x, params, cell, cfg=ModelConfig(), training=False):
    """Four factorized dilated branches -> concat -> batch norm -> relu.

    Each branch: 3x3 spatial conv -> relu -> kernel-3 temporal conv with
    dilation 1, 2, 4 or 8.
    """
    branches = []
    for d in DILATIONS:
        p = f"cell{cell}/d{d}"
        h = relu(conv2d_spatial(x, params[f"{p}/spatial/kernel"], params[f"{p}/spatial/bias"]))
        branches.append(conv1d_temporal(h, params[f"{p}/temporal/kernel"], params[f"{p}/temporal/bias"], d))
    y = concat_channels(branches)
    bn = f"cell{cell}/bn"
    y = batchnorm(y, params[f"{bn}/gamma"], params[f"{bn}/beta"], params[f"{bn}/moving_mean"],
                  params[f"{bn}/moving_var"], training, eps=cfg.bn_eps, momentum=cfg.bn_momentum)
    return relu(y)


def backbone(x, params, cfg=ModelConfig(), training=False):
    """Six cells in three pairs; each pair adds its first cell's output to
    its second cell's output and halves the spatial resolution.

    Returns ``(features (B, T, C), [three pooled taps])``.
    """
    taps = []
    h = x
    for pair in range(3):
        a = ddcnn_cell(h, params, 2 * pair + 1, cfg, training)
        b = ddcnn_cell(a, params, 2 * pair + 2, cfg, training)
        h = avgpool_spatial(add(a, b), crop_odd=True)
        taps.append(h)
    return spatial_mean(h), taps


def rgb_histogram(frames):
    """Normalised 8x8x8 joint RGB histogram per frame.

    frames: (B, T, H, W, 3) with values in [0, 1] -> Tensor (B, T, 512).
    Bin index is ``64*qR + 8*qG + qB`` with ``q = min(floor(8v), 7)``.
    """
    data = frames.data if isinstance(frames, Tensor) else np.asarray(frames)
    if data.ndim != 5 or data.shape[-1] != 3:
        raise DimensionError(f"rgb_histogram expects (B, T, H, W, 3), got shape {data.shape}")
    if data.dtype != np.float64:
        data = data.astype(np.float32)
    if not np.all(np.isfinite(data)) or data.min() < 0 or data.max() > 1:
        raise InputError("rgb_histogram pixel values must lie in [0, 1]")
    bsz, t, h, w, _ = data.shape
    pixels = np.ascontiguousarray(data.reshape(bsz * t, h * w, 3))
    return Tensor(kernels.rgb_histogram(pixels).reshape(bsz, t, HIST_BINS))


def similarity_features(vectors, kernel, bias, half_window=50):
    """Windowed cosine similarities of per-frame vectors -> dense -> relu."""
    return relu(dense(cosine_band(vectors, half_window), kernel, bias))


def forward(frames, params, cfg=ModelConfig(), training=False):
    """Per-frame logits of both heads.

    frames: (B, T, H, W, C) array or Tensor with values in [0, 1].
    Returns ``(single_logits, all_logits)``, each a Tensor of shape (B, T).
    """
    x = frames if isinstance(frames, Tensor) else Tensor(np.asarray(frames, dtype=_param_dtype(params)))
    if x.data.ndim != 5 or x.shape[-1] != cfg.in_channels:
        raise DimensionError(f"forward expects (B, T, H, W, {cfg.in_channels}), got shape {x.shape}")
    features, taps = backbone(x, params, cfg, training)
    blocks = [features]
    if cfg.use_similarity:
        for k, tap in enumerate(taps, start=1):
            proj = dense(spatial_mean(tap), params[f"sim{k}/proj/kernel"], params[f"sim{k}/proj/bias"])
            blocks.append(similarity_features(proj, params[f"sim{k}/window/kernel"],
                                              params[f"sim{k}/window/bias"], cfg.half_window))
    if cfg.use_histogram:
        hist = rgb_histogram(x)
        blocks.append(similarity_features(hist, params["hist/window/kernel"],
                                          params["hist/window/bias"], cfg.half_window))
    feats = concat_channels(blocks) if len(blocks) > 1 else blocks[0]
    hidden = relu(dense(feats, params["head/hidden/kernel"], params["head/hidden/bias"]))
    single = squeeze_last(dense(hidden, params["head/single/kernel"], params["head/single/bias"]))
    all_ = squeeze_last(dense(hidden, params["head/all/kernel"], params["head/all/bias"]))
    return single, all_


def _param_dtype(params):
    return next(iter(params.values())).data.dtype
