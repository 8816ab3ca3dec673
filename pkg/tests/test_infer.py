import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shotnet import infer, net
from shotnet.errors import InputError
from shotnet.tensor import Tensor

from oracles import reference_runs, reference_scenes

MICRO = net.ModelConfig(filters=(2, 2, 2), proj_dim=4, sim_dim=4, hidden=8)


# --------------------------------------------------------------------------
# windowing
# --------------------------------------------------------------------------

@pytest.mark.parametrize("n", [1, 37, 100, 101, 149, 150, 151, 200, 333])
def test_window_plan_covers_each_frame_once(n):
    pad_front, pad_back, plan = infer.window_plan(n)
    cover = np.zeros(n, int)
    for start, lo, hi in plan:
        assert start + 100 <= pad_front + n + pad_back
        for k in range(lo, hi):
            f = start + k - pad_front
            if 0 <= f < n:
                cover[f] += 1
    assert np.all(cover == 1)
    if n > 100:
        assert pad_front == 25 and all((lo, hi) == (25, 75) for _, lo, hi in plan)
        assert all(b - a == 50 for (a, _, _), (b, _, _) in zip(plan, plan[1:]))


def test_window_plan_rejects_empty():
    with pytest.raises(InputError):
        infer.window_plan(0)


class _IndexNet:
    """Stands in for the network: single logit encodes the frame value,
    all-frame logit the position inside the window (scaled to stay clear of
    sigmoid saturation)."""

    def __init__(self):
        self.calls = []

    def __call__(self, batch, params, cfg, training=False):
        value = batch.mean(axis=(2, 3, 4))
        pos = np.broadcast_to((np.arange(batch.shape[1], dtype=np.float64) - 50) / 10, value.shape)
        self.calls.append(batch.shape)
        return Tensor(value.astype(np.float64)), Tensor(pos.copy())


@pytest.mark.parametrize("n", [100, 150, 250, 277])
def test_stitching_coverage_audit(n, monkeypatch):
    stub = _IndexNet()
    monkeypatch.setattr(infer.net, "forward", stub)
    frames = np.broadcast_to((np.arange(n, dtype=np.float64) / (4 * n))[:, None, None, None], (n, 2, 2, 3))
    params = {"x": Tensor(np.zeros(1, np.float64))}
    pred = infer.predict_video(frames, params, MICRO)
    z_single = np.log(pred.single / (1 - pred.single))
    z_all = 50 + 10 * np.log(pred.all / (1 - pred.all))
    np.testing.assert_allclose(z_single, np.arange(n) / (4 * n), atol=1e-9)
    if n > 100:
        # every frame comes from the middle 50 positions of its window
        assert np.all((z_all > 24.5) & (z_all < 74.5))
        if n % 50 == 0:
            np.testing.assert_allclose(z_all, 25 + np.arange(n) % 50, atol=1e-6)


def test_short_video_single_window():
    params = net.init_params(MICRO, seed=0)
    frames = np.random.default_rng(0).random((100, 9, 16, 3)).astype(np.float32)
    pred = infer.predict_video(frames, params, MICRO)
    direct = net.forward(frames[None], params, MICRO)[0].data[0]
    np.testing.assert_allclose(pred.single, 1 / (1 + np.exp(-direct.astype(np.float64))), rtol=1e-6)
    assert len(pred) == 100 and np.all((pred.single >= 0) & (pred.single <= 1))


def test_constant_video_predictions_repeat_with_window_stride():
    # zero padding at window edges makes positions inside one window differ,
    # but identical windows give identical retained slices
    params = net.init_params(MICRO, seed=1)
    frames = np.full((250, 9, 16, 3), 0.4, np.float32)
    pred = infer.predict_video(frames, params, MICRO)
    np.testing.assert_array_equal(pred.single[:-50], pred.single[50:])
    np.testing.assert_array_equal(pred.all[:-50], pred.all[50:])


def test_predict_rejects_empty():
    with pytest.raises(InputError):
        infer.predict_video(np.zeros((0, 9, 16, 3)), net.init_params(MICRO), MICRO)


# --------------------------------------------------------------------------
# scenes
# --------------------------------------------------------------------------

def _scenes(p, th=0.5):
    return [tuple(s) for s in infer.predictions_to_scenes(np.asarray(p, float), th).tolist()]


def test_scenes_worked_example():
    assert _scenes([0, 0, 1, 0, 0, 1, 1, 0]) == [(0, 2), (3, 5), (7, 7)]


def test_scenes_no_transition():
    assert _scenes(np.full(9, 0.2)) == [(0, 8)]


def test_scenes_back_to_back_after_single_frame_transitions():
    # seven consecutive scenes from six single-frame transitions
    p = np.zeros(60)
    p[[6, 16, 25, 33, 41, 50]] = 0.9
    scenes = _scenes(p)
    assert len(scenes) == 7 and scenes[0] == (0, 6) and scenes[1] == (7, 16)
    assert all(b[0] == a[1] + 1 for a, b in zip(scenes, scenes[1:]))


def test_scenes_threshold_validation():
    with pytest.raises(InputError):
        infer.predictions_to_scenes([0.1], 1.0)


def test_leading_transition_gives_one_frame_scene():
    assert _scenes([0.9, 0.9, 0.1, 0.1]) == [(0, 0), (2, 3)]


def test_trailing_transition_drops_last_scene():
    assert _scenes([0.1, 0.1, 0.9, 0.9]) == [(0, 2)]


@settings(max_examples=300, deadline=None)
@given(st.lists(st.floats(0, 1), max_size=40), st.sampled_from([0.1, 0.3, 0.5, 0.7, 0.9]))
def test_scenes_match_reference_traversal(p, th):
    assert _scenes(p, th) == reference_scenes(p, th)


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), min_size=1, max_size=40), st.sampled_from([0.2, 0.5, 0.8]))
def test_scenes_plus_interiors_cover_video(p, th):
    covered = []
    for s, e in _scenes(p, th):
        covered += range(s, e + 1)
    for s, e in reference_runs(p, th):
        covered += range(s + 1, e + 1)
    assert sorted(covered) == list(range(len(p)))


@settings(max_examples=200, deadline=None)
@given(st.lists(st.floats(0, 1), max_size=40), st.floats(0.01, 0.98), st.floats(0.001, 0.5))
def test_raising_threshold_never_adds_transition_frames(p, lo, gap):
    hi = min(lo + gap, 0.99)
    count = lambda th: sum(e - s + 1 for s, e in reference_runs(p, th))
    assert sum(e - s + 1 for s, e in infer.threshold_runs(p, hi)) <= sum(
        e - s + 1 for s, e in infer.threshold_runs(p, lo))
    assert count(hi) <= count(lo)


def test_runs_match_reference():
    rng = np.random.default_rng(0)
    for _ in range(200):
        p = rng.random(int(rng.integers(0, 30)))
        assert infer.threshold_runs(p, 0.5) == reference_runs(p, 0.5)


# --------------------------------------------------------------------------
# transitions
# --------------------------------------------------------------------------

def test_transition_examples():
    assert infer.scenes_to_transitions([(0, 2), (3, 5)]) == [(2, 2)]
    assert infer.scenes_to_transitions([(0, 9)]) == []
    assert infer.scenes_to_transitions([(0, 3)], num_frames=8) == [(3, 7)]


def test_transition_last_frame_needs_explicit_flag():
    assert infer.scenes_to_transitions([(0, 7)], num_frames=8) == []
    assert infer.scenes_to_transitions([(0, 7)], num_frames=8, ends_in_transition=True) == [(7, 7)]


@pytest.mark.parametrize("bad", [[(3, 2)], [(0, 4), (4, 6)], [(5, 6), (0, 1)]])
def test_transition_rejects_malformed(bad):
    with pytest.raises(InputError):
        infer.scenes_to_transitions(bad)


def test_roundtrip_equals_direct_runs_1k():
    rng = np.random.default_rng(1)
    for _ in range(1000):
        p = rng.random(int(rng.integers(1, 40)))
        th = float(rng.choice([0.3, 0.5, 0.7]))
        scenes = infer.predictions_to_scenes(p, th)
        trans = infer.scenes_to_transitions(scenes, len(p), ends_in_transition=bool(p[-1] > th))
        assert trans == reference_runs(p, th)


# --------------------------------------------------------------------------
# visualisation
# --------------------------------------------------------------------------

def test_visualization_size_formula():
    assert infer.visualization_size(1) == (51, 1200)
    assert infer.visualization_size(25) == (51, 1200)
    assert infer.visualization_size(26) == (102, 1200)
    assert infer.visualization_size(60, 9, 16) == (99, 400)


def test_visualization_bars():
    frames = np.zeros((3, 27, 48, 3), np.float32)
    img = infer.visualize_predictions(frames, [0.0, 1.0, 0.5], [1.0, 0.0, 0.5])
    assert img.shape == (51, 1200, 3) and img.dtype == np.uint8
    strip = img[27:51]
    # frame 0: no green, full blue
    assert not np.any(strip[:, 0:48, 1])
    assert np.all(strip[:, 25:29] == infer.ALL_COLOR)
    # frame 1: full green
    assert np.all(strip[:, 48 + 19:48 + 23] == infer.SINGLE_COLOR)
    # frame 2: half-height bars
    assert np.sum(np.all(strip[:, 96 + 19] == infer.SINGLE_COLOR, axis=-1)) == 12


def test_visualization_is_deterministic_and_checks_lengths():
    rng = np.random.default_rng(0)
    frames = rng.random((30, 9, 16, 3)).astype(np.float32)
    p, q = rng.random(30), rng.random(30)
    assert np.array_equal(infer.visualize_predictions(frames, p, q), infer.visualize_predictions(frames, p, q))
    with pytest.raises(InputError):
        infer.visualize_predictions(frames, p[:5], q)
