"""Training-sequence rendering: synthetic cuts and dissolves between shot
segments, real annotated transitions, augmentation and colour transfer.

Conventions used throughout:

* A cut at ``cut_pos`` labels the first frame of the new shot in both heads.
* A dissolve of length ``t`` starting at ``start`` blends frame
  ``start + i`` (``i = 0..t-1``) with ``alpha = (i + 1) / (t + 1)``; its
  middle frame is ``start + (t - 1) // 2``.
"""
from __future__ import annotations

import logging
import warnings
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InputError

log = logging.getLogger(__name__)

SEQ_LEN = 100
SEGMENT_LEN = 300
MIN_DISSOLVE, MAX_DISSOLVE = 2, 30


@dataclass
class ShotSegment:
    """Frames of one shot: (T, H, W, 3) float32 in [0, 1]."""

    frames: np.ndarray
    source_id: str = ""
    position: str = "start"

    def __post_init__(self):
        if self.frames.ndim != 4 or len(self.frames) < 1:
            raise InputError(f"segment frames must be (T>=1, H, W, 3), got {self.frames.shape}")

    def __len__(self):
        return len(self.frames)


@dataclass
class TransitionLabel:
    single_frame: np.ndarray
    all_frame: np.ndarray


@dataclass
class RenderedExample:
    frames: np.ndarray
    label: TransitionLabel
    kind: str
    span: tuple

    def __len__(self):
        return len(self.frames)


@dataclass
class AnnotatedVideo:
    """A real video with annotated transition spans (inclusive indices)."""

    frames: np.ndarray
    transitions: list
    video_id: str = ""


def make_label(length, start, end):
    """Labels for one transition spanning ``[start, end]``."""
    single = np.zeros(length, dtype=np.float32)
    all_ = np.zeros(length, dtype=np.float32)
    all_[start:end + 1] = 1
    single[start + (end - start) // 2] = 1
    return TransitionLabel(single, all_)


def check_label(label):
    """Raise ``AssertionError`` unless the label invariants hold."""
    s, a = label.single_frame, label.all_frame
    assert s.shape == a.shape
    assert set(np.unique(s)) <= {0, 1} and set(np.unique(a)) <= {0, 1}
    assert s.sum() == 1
    assert np.all(s <= a)
    idx = np.flatnonzero(a)
    assert len(idx) and np.all(np.diff(idx) == 1), "all-frame target must be one contiguous run"


def _frames(seg):
    return seg.frames if isinstance(seg, ShotSegment) else np.asarray(seg)


def render_cut(a, b, cut_pos, length=SEQ_LEN):
    """Frames ``[0, cut_pos)`` from ``a``, ``[cut_pos, length)`` from ``b``.

    Both segments must already hold at least ``length`` frames (use
    :func:`random_crop`); frame ``i`` of the output is frame ``i`` of the
    contributing segment.
    """
    fa, fb = _frames(a), _frames(b)
    if len(fa) < length or len(fb) < length:
        raise InputError(f"segments too short for a {length}-frame render: {len(fa)}, {len(fb)}")
    if not 1 <= cut_pos <= length - 1:
        raise InputError(f"cut_pos must be in [1, {length - 1}], got {cut_pos}")
    frames = np.concatenate([fa[:cut_pos], fb[cut_pos:length]])
    return RenderedExample(frames, make_label(length, cut_pos, cut_pos), "cut", (cut_pos, cut_pos))


def dissolve_alphas(t):
    return np.arange(1, t + 1, dtype=np.float64) / (t + 1)


def render_dissolve(a, b, start, t, length=SEQ_LEN):
    """Cross-fade from ``a`` to ``b`` over frames ``start .. start + t - 1``."""
    fa, fb = _frames(a), _frames(b)
    if len(fa) < length or len(fb) < length:
        raise InputError(f"segments too short for a {length}-frame render: {len(fa)}, {len(fb)}")
    if not MIN_DISSOLVE <= t <= MAX_DISSOLVE:
        raise InputError(f"dissolve length must be in [{MIN_DISSOLVE}, {MAX_DISSOLVE}], got {t}")
    end = start + t - 1
    if start < 0 or end > length - 1:
        raise InputError(f"dissolve span [{start}, {end}] does not fit in [0, {length - 1}]")
    frames = np.concatenate([fa[:start], fa[start:end + 1], fb[end + 1:length]]).astype(np.float32)
    alpha = dissolve_alphas(t)[:, None, None, None]
    blend = (1 - alpha) * fa[start:end + 1] + alpha * fb[start:end + 1]
    frames[start:end + 1] = blend.astype(np.float32)
    return RenderedExample(frames, make_label(length, start, end), "dissolve", (start, end))


def random_crop(seg, rng, length=SEQ_LEN):
    f = _frames(seg)
    if len(f) < length:
        raise InputError(f"segment of {len(f)} frames cannot be cropped to {length}")
    o = int(rng.integers(0, len(f) - length + 1))
    return f[o:o + length]


def sample_real(video, rng, length=SEQ_LEN):
    """Random ``length``-frame crop around one annotated transition.

    Returns ``None`` (with a warning) when the chosen transition cannot fit.
    """
    if not video.transitions:
        raise InputError(f"video {video.video_id!r} has no annotated transitions")
    s, e = video.transitions[int(rng.integers(len(video.transitions)))]
    n = len(video.frames)
    if e - s + 1 > length or length > n or e >= n:
        warnings.warn(f"skipping transition [{s}, {e}] of {video.video_id!r}: does not fit a {length}-frame crop",
                      stacklevel=2)
        return None
    lo, hi = max(0, e - length + 1), min(s, n - length)
    o = int(rng.integers(lo, hi + 1))
    frames = np.asarray(video.frames[o:o + length], dtype=np.float32)
    return RenderedExample(frames, make_label(length, s - o, e - o), "real", (s - o, e - o))


# --------------------------------------------------------------------------
# augmentation
# --------------------------------------------------------------------------

@dataclass
class AugmentPolicy:
    """Probabilities and strength ranges; one draw per sequence."""

    p_flip_lr: float = 0.5
    p_flip_ud: float = 0.1
    p_jitter: float = 1.0
    brightness: float = 0.1
    contrast: tuple = (0.8, 1.2)
    saturation: tuple = (0.8, 1.2)
    hue: float = 0.05
    p_equalize: float = 0.05
    p_posterize: float = 0.05
    posterize_bits: int = 4
    p_color: float = 0.05
    color: tuple = (0.5, 1.5)

    @classmethod
    def disabled(cls):
        return cls(p_flip_lr=0, p_flip_ud=0, p_jitter=0, p_equalize=0, p_posterize=0, p_color=0)


_LUMA = np.array([0.299, 0.587, 0.114], dtype=np.float32)
_TO_YIQ = np.array([[0.299, 0.587, 0.114],
                    [0.596, -0.274, -0.322],
                    [0.211, -0.523, 0.312]])


def _gray(x):
    return (x @ _LUMA)[..., None]


def _rotate_hue(x, turns):
    theta = 2 * np.pi * turns
    rot = np.array([[1, 0, 0],
                    [0, np.cos(theta), -np.sin(theta)],
                    [0, np.sin(theta), np.cos(theta)]])
    m = np.linalg.inv(_TO_YIQ) @ rot @ _TO_YIQ
    return x @ m.T.astype(np.float32)


def _equalize(x):
    # per frame, per channel, on 8-bit levels
    q = np.clip(np.rint(x * 255), 0, 255).astype(np.int64)
    out = np.empty_like(x)
    for i in range(q.shape[0]):
        for c in range(3):
            ch = q[i, ..., c]
            hist = np.bincount(ch.ravel(), minlength=256)
            cdf = np.cumsum(hist)
            nz = cdf[hist > 0]
            lo = nz[0] if len(nz) else 0
            denom = ch.size - lo
            if denom <= 0:
                out[i, ..., c] = x[i, ..., c]
                continue
            lut = np.clip(np.rint((cdf - lo) / denom * 255), 0, 255)
            out[i, ..., c] = lut[ch] / 255.0
    return out


def augment_sequence(frames, rng, policy=AugmentPolicy()):
    """Apply one randomly drawn set of image operations to every frame.

    A draw consumes a fixed number of random values regardless of which
    operations fire, so streams stay aligned across policies.
    """
    x = np.asarray(frames, dtype=np.float32)
    draws = rng.random(7)
    brightness = rng.uniform(-policy.brightness, policy.brightness)
    contrast = rng.uniform(*policy.contrast)
    saturation = rng.uniform(*policy.saturation)
    hue = rng.uniform(-policy.hue, policy.hue)
    color = rng.uniform(*policy.color)
    jitter_order = rng.permutation(4)

    if draws[0] < policy.p_flip_lr:
        x = x[:, :, ::-1]
    if draws[1] < policy.p_flip_ud:
        x = x[:, ::-1]
    x = np.ascontiguousarray(x)
    if draws[2] < policy.p_jitter:
        for op in jitter_order:
            if op == 0:
                x = x + np.float32(brightness)
            elif op == 1:
                mean = x.mean(axis=(1, 2), keepdims=True)
                x = mean + np.float32(contrast) * (x - mean)
            elif op == 2:
                g = _gray(x)
                x = g + np.float32(saturation) * (x - g)
            elif op == 3 and hue != 0:
                x = _rotate_hue(x, hue)
            x = np.clip(x, 0, 1)
    if draws[3] < policy.p_equalize:
        x = _equalize(x)
    if draws[4] < policy.p_posterize:
        shift = 8 - policy.posterize_bits
        q = np.clip(np.rint(x * 255), 0, 255).astype(np.uint8)
        x = ((q >> shift) << shift).astype(np.float32) / 255.0
    if draws[5] < policy.p_color:
        g = _gray(x)
        x = g + np.float32(color) * (x - g)
    return np.clip(x, 0, 1).astype(np.float32)


def color_transfer(src, ref):
    """Match ``src``'s per-channel mean/std to those of ``ref`` (whole-segment stats)."""
    fs, fr = _frames(src), _frames(ref)
    if fs.size == 0 or fr.size == 0:
        raise InputError("color_transfer needs non-empty segments")
    axes = tuple(range(fs.ndim - 1))
    ms, ss = fs.mean(axis=axes), fs.std(axis=axes)
    mr, sr = fr.mean(axis=axes), fr.std(axis=axes)
    # float32 std of a constant channel is rounding noise, not zero
    flat = ss <= 1e-6
    scale = np.where(flat, 1.0, sr / np.where(flat, 1, ss))
    out = np.clip((fs - ms) * scale + mr, 0, 1).astype(np.float32)
    if isinstance(src, ShotSegment):
        return ShotSegment(out, src.source_id, src.position)
    return out


# --------------------------------------------------------------------------
# corpus preparation and sampling
# --------------------------------------------------------------------------

def extract_segments(frames, source_id="", segment_len=SEGMENT_LEN):
    """Up to three non-overlapping ``segment_len`` windows (start, center, end).

    Scenes shorter than ``segment_len`` yield nothing; overlapping windows are
    dropped (center first).
    """
    n = len(frames)
    if n < segment_len:
        return []
    starts = {"start": 0, "center": (n - segment_len) // 2, "end": n - segment_len}
    kept = []
    for pos in ("start", "end", "center"):
        o = starts[pos]
        if all(o + segment_len <= k or k + segment_len <= o for _, k in kept):
            kept.append((pos, o))
    kept.sort(key=lambda item: item[1])
    return [ShotSegment(frames[o:o + segment_len], source_id, pos) for pos, o in kept]


@dataclass
class SamplerConfig:
    mix: tuple = (0.15, 0.35, 0.50)  # real, cut, dissolve
    length: int = SEQ_LEN
    p_color_transfer: float = 0.10
    augment: AugmentPolicy = field(default_factory=AugmentPolicy)


KINDS = ("real", "cut", "dissolve")


def batch_sampler(real_pool, synth_pool, rng, config=SamplerConfig()):
    """Infinite i.i.d. stream of :class:`RenderedExample`.

    ``real_pool`` holds :class:`AnnotatedVideo` items, ``synth_pool``
    :class:`ShotSegment` items. Every example holds exactly one transition.
    """
    mix = np.asarray(config.mix, dtype=np.float64)
    problems = []
    if mix.shape != (3,) or np.any(mix < 0) or abs(mix.sum() - 1) > 1e-9:
        problems.append(f"mix must be three non-negative fractions summing to 1, got {tuple(config.mix)}")
    else:
        if mix[0] > 0 and not real_pool:
            problems.append("real fraction > 0 but the real pool is empty")
        if mix[1] + mix[2] > 0 and not synth_pool:
            problems.append("synthetic fraction > 0 but the shot pool is empty")
        usable = [s for s in synth_pool if len(s) >= config.length]
        if mix[1] + mix[2] > 0 and synth_pool and not usable:
            problems.append(f"no shot segment has the required {config.length} frames")
        if mix[2] > 0 and config.length < MAX_DISSOLVE:
            problems.append(f"dissolves need length >= {MAX_DISSOLVE}, got {config.length}")
        if mix[1] > 0 and config.length < 2:
            problems.append(f"cuts need length >= 2, got {config.length}")
    if problems:
        raise ConfigError(problems)
    length = config.length
    while True:
        kind = KINDS[int(rng.choice(3, p=mix))]
        if kind == "real":
            video = real_pool[int(rng.integers(len(real_pool)))]
            ex = sample_real(video, rng, length)
            if ex is None:
                continue
            ex.frames = augment_sequence(ex.frames, rng, config.augment)
            yield ex
            continue
        a = usable[int(rng.integers(len(usable)))]
        b = usable[int(rng.integers(len(usable)))]
        fa = random_crop(a, rng, length)
        fb = random_crop(b, rng, length)
        if rng.random() < config.p_color_transfer:
            fa = color_transfer(fa, fb)
        fa = augment_sequence(fa, rng, config.augment)
        fb = augment_sequence(fb, rng, config.augment)
        if kind == "cut":
            yield render_cut(fa, fb, int(rng.integers(1, length)), length)
        else:
            t = int(rng.integers(MIN_DISSOLVE, MAX_DISSOLVE + 1))
            yield render_dissolve(fa, fb, int(rng.integers(0, length - t + 1)), t, length)


def stack_batch(examples):
    """Examples -> (frames (B,T,H,W,3), single (B,T), all (B,T))."""
    frames = np.stack([e.frames for e in examples]).astype(np.float32)
    single = np.stack([e.label.single_frame for e in examples])
    all_ = np.stack([e.label.all_frame for e in examples])
    return frames, single, all_


def downsample(frames, factor):
    """Block-average spatial downsampling by an integer factor (H, W must divide)."""
    if factor == 1:
        return frames
    *lead, h, w, c = frames.shape
    if h % factor or w % factor:
        raise InputError(f"spatial dims {h}x{w} not divisible by {factor}")
    x = frames.reshape(*lead, h // factor, factor, w // factor, factor, c)
    return x.mean(axis=(-4, -2)).astype(frames.dtype)


# --------------------------------------------------------------------------
# procedural shots for desk-scale corpora
# --------------------------------------------------------------------------

def synthesize_shot(rng, n_frames, height=27, width=48):
    """A moving, textured, colour-consistent synthetic shot in [0, 1].

    Each shot has its own palette, drifting sinusoidal texture, a moving
    blob and slow brightness drift, so shots are visually distinct while
    consecutive frames within a shot are similar.
    """
    yy, xx = np.mgrid[0:height, 0:width].astype(np.float32)
    base = rng.uniform(0.15, 0.85, size=3).astype(np.float32)
    accent = rng.uniform(0, 1, size=3).astype(np.float32)
    freq = rng.uniform(0.1, 0.5, size=2)
    vel = rng.uniform(-1.5, 1.5, size=2)
    phase = rng.uniform(0, 2 * np.pi)
    blob_pos = rng.uniform([0, 0], [height, width])
    blob_vel = rng.uniform(-0.6, 0.6, size=2)
    blob_r = rng.uniform(3, 8)
    drift = rng.uniform(-0.002, 0.002)
    frames = np.empty((n_frames, height, width, 3), dtype=np.float32)
    for t in range(n_frames):
        tex = np.sin(freq[0] * (xx + vel[0] * t) + freq[1] * (yy + vel[1] * t) + phase)
        img = base + 0.15 * tex[..., None] * (accent - 0.5)
        by, bx = blob_pos + blob_vel * t
        by, bx = by % height, bx % width
        mask = np.exp(-((yy - by) ** 2 + (xx - bx) ** 2) / (2 * blob_r ** 2))
        img = img * (1 - 0.6 * mask[..., None]) + 0.6 * mask[..., None] * accent
        frames[t] = np.clip(img + drift * t, 0, 1)
    return frames
