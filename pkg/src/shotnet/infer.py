"""Sliding-window video prediction, scene extraction and visualisation."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import net
from .errors import InputError

BAR_HEIGHT = 24
GRID_COLUMNS = 25
SINGLE_COLOR = (0, 255, 0)
ALL_COLOR = (0, 0, 255)


@dataclass
class FramePredictions:
    single: np.ndarray
    all: np.ndarray

    def __len__(self):
        return len(self.single)


def window_plan(n_frames, window=net.WINDOW):
    """Windows covering a video of ``n_frames`` frames.

    Returns ``(pad_front, pad_back, [(win_start, keep_lo, keep_hi), ...])``
    in padded coordinates: each window ``[win_start, win_start + window)``
    contributes its positions ``keep_lo .. keep_hi - 1``, written to original
    frames ``win_start + keep_lo - pad_front ...``.

    Videos of at most ``window`` frames use one window, padded at the end by
    repeating the last frame, and keep every original position. Longer videos
    are padded by ``window // 4`` copies of the first frame in front and
    ``window // 4`` (plus up to ``stride - 1``) copies of the last frame at the
    back; windows advance by ``stride = window // 2`` and keep their middle
    ``stride`` positions.
    """
    if n_frames < 1:
        raise InputError("cannot predict an empty video")
    if n_frames <= window:
        return 0, window - n_frames, [(0, 0, n_frames)]
    stride = window // 2
    ctx = (window - stride) // 2
    rem = (-n_frames) % stride
    pad_front, pad_back = ctx, window - stride - ctx + rem
    total = pad_front + n_frames + pad_back
    plan = []
    for start in range(0, total - window + 1, stride):
        plan.append((start, ctx, ctx + stride))
    return pad_front, pad_back, plan


def predict_video(frames, params, cfg=None, window=net.WINDOW, batch_size=4):
    """Per-frame sigmoid confidences of both heads, inference mode.

    frames: (N, H, W, 3) in [0, 1].
    """
    frames = np.asarray(frames)
    if frames.ndim != 4 or len(frames) == 0:
        raise InputError(f"expected a non-empty (N, H, W, 3) video, got shape {frames.shape}")
    cfg = cfg or net.config_from_params(params)
    n = len(frames)
    pad_front, pad_back, plan = window_plan(n, window)
    dtype = next(iter(params.values())).data.dtype
    padded = np.concatenate([np.repeat(frames[:1], pad_front, axis=0), frames,
                             np.repeat(frames[-1:], pad_back, axis=0)]).astype(dtype)
    single = np.zeros(n, dtype=np.float64)
    all_ = np.zeros(n, dtype=np.float64)
    for i in range(0, len(plan), batch_size):
        chunk = plan[i:i + batch_size]
        batch = np.stack([padded[s:s + window] for s, _, _ in chunk])
        s_logits, a_logits = net.forward(batch, params, cfg, training=False)
        for (start, lo, hi), sl, al in zip(chunk, s_logits.data, a_logits.data):
            dst = start + lo - pad_front
            m = min(hi - lo, n - dst)
            single[dst:dst + m] = _sigmoid(sl[lo:lo + m])
            all_[dst:dst + m] = _sigmoid(al[lo:lo + m])
    return FramePredictions(single, all_)


def _sigmoid(z):
    z = np.asarray(z, dtype=np.float64)
    return 0.5 * (1 + np.tanh(0.5 * z))


def threshold_runs(p, threshold=0.5):
    """Maximal runs ``[s, e]`` of consecutive frames with ``p > threshold``."""
    b = np.asarray(p) > threshold
    if b.size == 0:
        return []
    edges = np.diff(np.concatenate([[0], b.astype(np.int8), [0]]))
    starts = np.flatnonzero(edges == 1)
    ends = np.flatnonzero(edges == -1) - 1
    return list(zip(starts.tolist(), ends.tolist()))


def predictions_to_scenes(p, threshold=0.5):
    """Scenes (inclusive ``(start, end)``) from per-frame confidences.

    Every transition run ``[s, e]`` ends the preceding scene at ``s`` and
    starts the next one at ``e + 1``; its interior frames ``s+1 .. e`` belong
    to no scene. The first scene starts at 0; a trailing scene is emitted
    only when the video ends on a non-transition frame.
    """
    if not 0 < threshold < 1:
        raise InputError(f"threshold must be in (0, 1), got {threshold}")
    n = len(p)
    scenes = []
    start = 0
    for s, e in threshold_runs(p, threshold):
        scenes.append((start, s))
        start = e + 1
    if n and start <= n - 1:
        scenes.append((start, n - 1))
    return np.array(scenes, dtype=np.int64).reshape(-1, 2)


def validate_scenes(scenes):
    prev_end = -1
    for s, e in scenes:
        if e < s or s <= prev_end:
            raise InputError(f"malformed scene list at ({s}, {e})")
        prev_end = e


def scenes_to_transitions(scenes, num_frames=None, ends_in_transition=None):
    """Transitions ``[end_i, start_{i+1} - 1]`` between consecutive scenes.

    With ``num_frames``, a video that does not end in a scene also yields a
    final transition ``[end_last, num_frames - 1]``. A scene list cannot
    distinguish "no transition" from "a transition on the last frame only"
    (both end a scene at ``num_frames - 1``); pass ``ends_in_transition`` to
    settle that case explicitly.
    """
    scenes = [(int(s), int(e)) for s, e in scenes]
    validate_scenes(scenes)
    out = [(e0, s1 - 1) for (_, e0), (s1, _) in zip(scenes, scenes[1:])]
    if scenes and num_frames is not None:
        last = scenes[-1][1]
        if ends_in_transition is None:
            ends_in_transition = last < num_frames - 1
        if ends_in_transition:
            out.append((last, num_frames - 1))
    return out


def visualization_size(n_frames, frame_h=27, frame_w=48):
    """Output image ``(height, width)`` for ``n_frames`` frames.

    height = ceil(n / 25) * (frame_h + 24), width = 25 * frame_w.
    """
    rows = max(1, -(-n_frames // GRID_COLUMNS))
    return rows * (frame_h + BAR_HEIGHT), GRID_COLUMNS * frame_w


def visualize_predictions(frames, p_single, p_all):
    """Frame grid (25 per row) with two confidence bars under each frame.

    The single-frame bar is green and sits left of centre, the all-frame bar
    is blue and sits right of centre; bar height is
    ``round(p * 24)`` pixels grown upward from the bottom of the strip.
    """
    frames = np.asarray(frames)
    n = len(frames)
    if not len(p_single) == len(p_all) == n:
        raise InputError(f"length mismatch: {n} frames, {len(p_single)} / {len(p_all)} confidences")
    fh, fw = frames.shape[1:3]
    height, width = visualization_size(n, fh, fw)
    img = np.zeros((height, width, 3), dtype=np.uint8)
    pix = frames if frames.dtype == np.uint8 else np.clip(np.rint(frames * 255), 0, 255).astype(np.uint8)
    cx = fw // 2
    for i in range(n):
        r, c = divmod(i, GRID_COLUMNS)
        y0, x0 = r * (fh + BAR_HEIGHT), c * fw
        img[y0:y0 + fh, x0:x0 + fw] = pix[i]
        bottom = y0 + fh + BAR_HEIGHT
        for p, color, (lo, hi) in ((p_single[i], SINGLE_COLOR, (cx - 5, cx - 1)),
                                   (p_all[i], ALL_COLOR, (cx + 1, cx + 5))):
            bar = int(round(float(np.clip(p, 0, 1)) * BAR_HEIGHT))
            if bar:
                img[bottom - bar:bottom, x0 + lo:x0 + hi] = color
    return img
