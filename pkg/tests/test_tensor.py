import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from shotnet import tensor as T
from shotnet.errors import DimensionError, InputError, ParameterError, StateError
from shotnet.kernels import _numba, _numpy

from oracles import naive_conv1d, naive_conv2d, naive_matmul

BACKENDS = [pytest.param(_numpy, id="numpy"), pytest.param(_numba, id="numba")]


def t(a, grad=False):
    return T.Tensor(np.asarray(a, dtype=np.float32), requires_grad=grad)


# --------------------------------------------------------------------------
# conv2d_spatial
# --------------------------------------------------------------------------

def test_conv2d_ones_center_and_corner():
    out = T.conv2d_spatial(t(np.ones((1, 1, 3, 3, 1))), t(np.ones((3, 3, 1, 1))), t([0.0])).data
    assert out[0, 0, 1, 1, 0] == 9
    for y, x in [(0, 0), (0, 2), (2, 0), (2, 2)]:
        assert out[0, 0, y, x, 0] == 4
    assert out[0, 0, 0, 1, 0] == 6


def test_conv2d_identity_kernel():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((2, 3, 4, 5, 2)).astype(np.float32)
    w = np.zeros((3, 3, 2, 2), np.float32)
    w[1, 1] = np.eye(2)
    out = T.conv2d_spatial(t(x), t(w), t(np.zeros(2))).data
    np.testing.assert_array_equal(out, x)


@pytest.mark.parametrize("backend", BACKENDS)
def test_conv2d_matches_naive_loops(backend):
    rng = np.random.default_rng(1)
    x = rng.standard_normal((1, 2, 4, 4, 2)).astype(np.float32)
    w = rng.standard_normal((3, 3, 2, 3)).astype(np.float32)
    b = rng.standard_normal(3).astype(np.float32)
    out = backend.conv2d_forward(x.reshape(2, 4, 4, 2), w, b).reshape(1, 2, 4, 4, 3)
    np.testing.assert_allclose(out, naive_conv2d(x, w, b), rtol=1e-5, atol=1e-5)


def test_conv2d_shape_errors_name_axes():
    x = t(np.zeros((1, 1, 4, 4, 2)))
    with pytest.raises(DimensionError, match="axis 4"):
        T.conv2d_spatial(x, t(np.zeros((3, 3, 3, 1))), t([0.0]))
    with pytest.raises(DimensionError, match="odd"):
        T.conv2d_spatial(x, t(np.zeros((2, 2, 2, 1))), t([0.0]))


# --------------------------------------------------------------------------
# conv1d_temporal
# --------------------------------------------------------------------------

def _trace(values):
    return t(np.asarray(values, np.float32).reshape(1, -1, 1, 1, 1))


def test_conv1d_dilated_trace():
    w = t(np.array([1, 0, -1], np.float32).reshape(3, 1, 1))
    out = T.conv1d_temporal(_trace([1, 2, 3, 4, 5]), w, t([0.0]), dilation=2).data.ravel()
    np.testing.assert_array_equal(out, [-3, -4, -4, 2, 3])


def test_conv1d_center_only_is_identity():
    w = t(np.array([0, 1, 0], np.float32).reshape(3, 1, 1))
    x = _trace([3, -1, 2, 7])
    np.testing.assert_array_equal(T.conv1d_temporal(x, w, t([0.0]), 3).data, x.data)


def test_conv1d_hand_sum_with_zero_pad():
    w = t(np.ones((3, 1, 1)))
    out = T.conv1d_temporal(_trace([0, 1, 0]), w, t([0.0]), 1).data.ravel()
    np.testing.assert_array_equal(out, [1, 1, 1])
    out = T.conv1d_temporal(_trace([1, 1, 1]), w, t([0.0]), 1).data.ravel()
    np.testing.assert_array_equal(out, [2, 3, 2])


@pytest.mark.parametrize("d", [0, -1, 1.5])
def test_conv1d_bad_dilation(d):
    with pytest.raises(ParameterError):
        T.conv1d_temporal(_trace([1, 2]), t(np.ones((3, 1, 1))), t([0.0]), d)


@pytest.mark.parametrize("backend", BACKENDS)
@pytest.mark.parametrize("d", [1, 2, 4, 8])
def test_conv1d_matches_naive(backend, d):
    rng = np.random.default_rng(d)
    x = rng.standard_normal((2, 11, 2, 3, 3)).astype(np.float32)
    w = rng.standard_normal((3, 3, 2)).astype(np.float32)
    b = rng.standard_normal(2).astype(np.float32)
    out = backend.conv1d_forward(x.reshape(2, 11, 6, 3), w, b, d).reshape(2, 11, 2, 3, 2)
    np.testing.assert_allclose(out, naive_conv1d(x, w, b, d), rtol=1e-5, atol=1e-5)


@pytest.mark.parametrize("d", [1, 2, 4, 8])
def test_conv1d_locality(d):
    rng = np.random.default_rng(0)
    T_ = 25
    x = rng.standard_normal((1, T_, 1, 1, 2)).astype(np.float32)
    w = t(rng.standard_normal((3, 2, 2)))
    b = t(np.zeros(2))
    base = T.conv1d_temporal(t(x), w, b, d).data
    center = 12
    for s in range(T_):
        xp = x.copy()
        xp[0, s] += 1.0
        changed = not np.array_equal(T.conv1d_temporal(t(xp), w, b, d).data[0, center], base[0, center])
        assert changed == (s in (center - d, center, center + d)), s


# --------------------------------------------------------------------------
# dense, batchnorm, pooling
# --------------------------------------------------------------------------

def test_dense_identity_and_hand():
    x = np.arange(6, dtype=np.float32).reshape(2, 3)
    np.testing.assert_array_equal(T.dense(t(x), t(np.eye(3)), t(np.zeros(3))).data, x)
    out = T.dense(t([1.0, 2.0]), t([[1.0], [1.0]]), t([0.5])).data
    np.testing.assert_array_equal(out, [3.5])


def test_dense_matches_naive():
    rng = np.random.default_rng(3)
    x, w, b = rng.standard_normal((2, 3)), rng.standard_normal((3, 4)), rng.standard_normal(4)
    out = T.dense(t(x), t(w), t(b)).data
    np.testing.assert_allclose(out, naive_matmul(x.astype(np.float32), w.astype(np.float32),
                                                 b.astype(np.float32)), rtol=1e-5)


def test_dense_axis_mismatch():
    with pytest.raises(DimensionError):
        T.dense(t(np.zeros((2, 3))), t(np.zeros((4, 1))), t([0.0]))


def _bn_args(c):
    return t(np.ones(c)), t(np.zeros(c)), t(np.zeros(c)), t(np.ones(c))


def test_batchnorm_training_normalises():
    rng = np.random.default_rng(0)
    x = (rng.standard_normal((4, 6, 5, 3)) * 50 + 7).astype(np.float32)
    g, b, mm, mv = _bn_args(3)
    y = T.batchnorm(t(x), g, b, mm, mv, training=True).data.astype(np.float64)
    np.testing.assert_allclose(y.mean(axis=(0, 1, 2)), 0, atol=1e-4)
    np.testing.assert_allclose(y.var(axis=(0, 1, 2)), 1, atol=1e-4)
    # moving statistics moved toward batch statistics
    assert np.all(mm.data != 0) and np.all(mv.data != 1)


def test_batchnorm_inference_identity_up_to_eps():
    x = np.random.default_rng(1).standard_normal((3, 4, 2)).astype(np.float32)
    y = T.batchnorm(t(x), *_bn_args(2), training=False, eps=1e-3).data
    np.testing.assert_allclose(y, x / np.sqrt(1 + 1e-3), rtol=1e-6)


def test_batchnorm_constant_input_gives_beta():
    g, _, mm, mv = _bn_args(2)
    beta = t([0.25, -1.5])
    y = T.batchnorm(t(np.full((3, 5, 2), 4.0)), g, beta, mm, mv, training=True).data
    np.testing.assert_allclose(y, np.broadcast_to([0.25, -1.5], y.shape), atol=1e-6)


def test_batchnorm_inference_is_pure():
    x = t(np.random.default_rng(2).standard_normal((2, 3, 4)))
    args = (t([0.5, 1, 2, 3]), t([0, 1, 0, 1]), t([0.1, 0.2, 0.3, 0.4]), t([1, 2, 3, 4]))
    stats = [args[2].data.copy(), args[3].data.copy()]
    a = T.batchnorm(x, *args, training=False).data
    b = T.batchnorm(x, *args, training=False).data
    np.testing.assert_array_equal(a, b)
    np.testing.assert_array_equal(args[2].data, stats[0])
    np.testing.assert_array_equal(args[3].data, stats[1])


def test_avgpool_single_cell():
    x = t(np.array([[1, 2], [3, 4]], np.float32).reshape(1, 1, 2, 2, 1))
    assert T.avgpool_spatial(x).data.item() == 2.5


def test_avgpool_odd_requires_crop_policy():
    x = t(np.zeros((1, 1, 27, 48, 1)))
    with pytest.raises(DimensionError):
        T.avgpool_spatial(x)
    shapes = []
    for _ in range(3):
        x = T.avgpool_spatial(x, crop_odd=True)
        shapes.append(x.shape[2:4])
    assert shapes == [(13, 24), (6, 12), (3, 6)]


def test_spatial_mean_constant_and_concat_shape():
    assert np.all(T.spatial_mean(t(np.full((1, 2, 3, 4, 5), 2.5))).data == 2.5)
    out = T.concat_channels([t(np.zeros((1, 2, 3))), t(np.zeros((1, 2, 5)))])
    assert out.shape == (1, 2, 8)


# --------------------------------------------------------------------------
# loss
# --------------------------------------------------------------------------

def test_xent_analytic_values():
    assert math.isclose(float(T.sigmoid_xent_loss(t([[0.0]]), [[0]], 1.0).data), math.log(2), rel_tol=1e-6)
    assert math.isclose(float(T.sigmoid_xent_loss(t([[0.0]]), [[1]], 5.0).data), 5 * math.log(2), rel_tol=1e-6)


@pytest.mark.parametrize("z,y", [(40.0, 1), (-40.0, 0)])
def test_xent_stable_for_large_logits(z, y):
    v = float(T.sigmoid_xent_loss(t([[z]]), [[y]], 1.0).data)
    assert np.isfinite(v) and v < 1e-10


def test_xent_rejects_non_binary_targets():
    with pytest.raises(InputError):
        T.sigmoid_xent_loss(t([[0.0, 1.0]]), [[0, 0.5]], 1.0)


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(-30, 30, allow_nan=False), min_size=1, max_size=8), st.data())
def test_xent_symmetry(logits, data):
    y = data.draw(st.lists(st.integers(0, 1), min_size=len(logits), max_size=len(logits)))
    z = np.array([logits])
    tgt = np.array([y])
    a = float(T.sigmoid_xent_loss(t(z), tgt, 1.0).data)
    b = float(T.sigmoid_xent_loss(t(-z), 1 - tgt, 1.0).data)
    assert math.isclose(a, b, rel_tol=1e-5, abs_tol=1e-7)


# --------------------------------------------------------------------------
# tape
# --------------------------------------------------------------------------

def test_backward_sum_and_square():
    x = t([1.0, 2.0, -3.0], grad=True)
    with T.Tape() as tape:
        loss = T.sum_all(x)
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [1, 1, 1])

    x = t([1.0, 2.0], grad=True)
    with T.Tape() as tape:
        loss = T.sum_all(T.square(x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [2, 4])


def test_gradient_accumulates_over_uses():
    x = t([1.0, 2.0], grad=True)
    with T.Tape() as tape:
        loss = T.sum_all(T.add(T.square(x), x, x))
    tape.backward(loss)
    np.testing.assert_array_equal(x.grad, [4, 6])


def test_backward_without_forward_is_state_error():
    with pytest.raises(StateError):
        T.Tape().backward(t(1.0))
    loss = t(1.0)
    with T.Tape() as tape:
        T.sum_all(t([1.0], grad=True))
    with pytest.raises(StateError):
        tape.backward(loss)
    with pytest.raises(StateError):
        T.backward(loss)


def test_tape_replays_in_reverse_order():
    order = []
    x = t([1.0], grad=True)
    with T.Tape() as tape:
        a = T.square(x)
        b = T.square(a)
        loss = T.sum_all(b)
    wrapped = []
    for out, inputs, fn in tape.records:
        def spy(g, fn=fn, out=out):
            order.append(id(out))
            return fn(g)
        wrapped.append((out, inputs, spy))
    tape.records = wrapped
    tape.backward(loss)
    assert order == [id(loss), id(b), id(a)]


def test_no_recording_without_tape():
    x = t([1.0], grad=True)
    y = T.square(x)
    assert not y.requires_grad


# --------------------------------------------------------------------------
# optimiser
# --------------------------------------------------------------------------

def _sgd(p0, grads, lr, momentum, l2=0.0):
    params = {"w": t([p0])}
    state = {}
    trace = []
    for g in grads:
        T.sgd_momentum_step(params, {"w": np.array([g], np.float32)}, state, lr, momentum, l2)
        trace.append(float(params["w"].data[0]))
    return trace


def test_sgd_plain_step():
    assert math.isclose(_sgd(1.0, [1.0], 0.1, 0.0)[0], 0.9, rel_tol=1e-6)


def test_sgd_momentum_recurrence():
    assert _sgd(0.0, [1.0, 1.0], 1.0, 0.9) == pytest.approx([-1.0, -2.9], rel=1e-6)


def test_sgd_l2_decay():
    assert _sgd(1.0, [0.0], 0.01, 0.0, l2=1e-4)[0] == pytest.approx(0.999999, abs=1e-7)


def test_sgd_zero_lr_is_bit_identical():
    rng = np.random.default_rng(0)
    params = {"w": t(rng.standard_normal(5)), "b": t(rng.standard_normal(2))}
    before = {k: v.data.copy() for k, v in params.items()}
    T.sgd_momentum_step(params, {k: rng.standard_normal(v.shape).astype(np.float32) for k, v in params.items()},
                        {}, 0.0, 0.9, 1e-4)
    for k in params:
        np.testing.assert_array_equal(params[k].data, before[k])


def test_sgd_parameter_errors():
    with pytest.raises(ParameterError):
        T.sgd_momentum_step({}, {}, {}, -1.0, 0.9)
    with pytest.raises(ParameterError):
        T.sgd_momentum_step({}, {}, {}, 0.1, 1.0)


# --------------------------------------------------------------------------
# cosine band
# --------------------------------------------------------------------------

def test_cosine_band_identical_vectors():
    x = t(np.ones((1, 100, 4)))
    band = T.cosine_band(x, 50).data
    assert band.shape == (1, 100, 101)
    np.testing.assert_allclose(band[0, 0], [0] * 50 + [1] * 51, atol=1e-6)
    np.testing.assert_allclose(band[0, :, 50], 1, atol=1e-6)


def test_cosine_band_alternating_orthogonal():
    v = np.zeros((1, 10, 2), np.float32)
    v[0, ::2, 0] = 1
    v[0, 1::2, 1] = 1
    band = T.cosine_band(t(v), 3).data[0, 5]
    np.testing.assert_allclose(band, [0, 1, 0, 1, 0, 1, 0], atol=1e-6)


def test_cosine_band_zero_vector_is_zero():
    v = np.ones((1, 4, 3), np.float32)
    v[0, 2] = 0
    band = T.cosine_band(t(v), 2).data[0]
    assert np.all(band[2] == 0)
    assert band[1, 3] == 0
