import numpy as np
import pytest
from scipy.signal import correlate

from sepstereo import ops
from sepstereo.checks import OP_TOL, op_cases
from sepstereo.gradcheck import directional_gradcheck, gradcheck, relative_error
from sepstereo.tensor import Tensor, precision

OP_NAMES = sorted(op_cases(np.random.default_rng(0)))


@pytest.mark.parametrize("name", OP_NAMES)
def test_op_gradients_over_20_seeded_trials(name):
    worst = 0.0
    for trial in range(20):
        op, inputs = op_cases(np.random.default_rng(1000 + trial))[name]
        worst = max(worst, gradcheck(op, inputs, seed=trial).max_error)
    assert worst < OP_TOL


def _conv_oracle(x, k, stride, pad):
    # direct cross-correlation per (out, in) channel pair
    xp = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    full = np.stack([sum(correlate(xp[i], k[o, i], mode="valid") for i in range(x.shape[0])) for o in range(k.shape[0])])
    return full[:, ::stride, ::stride]


@pytest.mark.parametrize("stride,pad,ksize", [(1, 0, 3), (1, 1, 3), (2, 1, 4), (2, 0, 2)])
def test_conv2d_matches_scipy_correlate(stride, pad, ksize):
    rng = np.random.default_rng(stride * 10 + pad)
    x = rng.standard_normal((3, 9, 8))
    k = rng.standard_normal((2, 3, ksize, ksize))
    with precision(np.float64):
        out = ops.conv2d(Tensor(x), Tensor(k), stride=stride, pad=pad).data
    np.testing.assert_allclose(out, _conv_oracle(x, k, stride, pad), atol=1e-12)


@pytest.mark.parametrize("h,w", [(4, 4), (5, 3), (8, 16)])
def test_deconv_is_adjoint_of_conv(h, w):
    # <conv(x), y> == <x, deconv(y)> with the same kernel read as [C_in, C_out, k, k]
    rng = np.random.default_rng(h * w)
    k = rng.standard_normal((3, 2, 4, 4))  # conv: 2 -> 3 channels
    ho, wo = ops.conv_output_size(2 * h, 4, 2, 1), ops.conv_output_size(2 * w, 4, 2, 1)
    x = rng.standard_normal((2, 2 * h, 2 * w))
    y = rng.standard_normal((3, ho, wo))
    with precision(np.float64):
        cx = ops.conv2d(Tensor(x), Tensor(k), stride=2, pad=1).data
        dy = ops.deconv2d(Tensor(y), Tensor(k), stride=2, pad=1).data
    assert dy.shape == x.shape
    assert np.sum(cx * y) == pytest.approx(np.sum(x * dy), rel=1e-12)


def test_output_size_formulas():
    assert ops.conv_output_size(256, 4, 2, 1) == 128
    assert ops.deconv_output_size(128, 4, 2, 1) == 256
    assert ops.conv_output_size(7, 3, 1, 1) == 7


def test_conv1x1_dynamic_is_channel_contraction():
    rng = np.random.default_rng(0)
    x = rng.standard_normal((4, 3, 5))
    kern = rng.standard_normal((6, 4))
    with precision(np.float64):
        out = ops.conv1x1_dynamic(Tensor(x), Tensor(kern)).data
    np.testing.assert_allclose(out, np.einsum("nc,chw->nhw", kern, x))


def test_max_pool_ties_take_lowest_index():
    x = Tensor(np.ones((1, 2, 2), dtype=np.float32), requires_grad=True)
    ops.sum_all(ops.max_pool2d(x, 2, 2)).backward()
    np.testing.assert_array_equal(x.grad[0], [[1, 0], [0, 0]])
    y = Tensor(np.ones((2, 2, 3), dtype=np.float32), requires_grad=True)
    ops.sum_all(ops.max_pool_spatial_full(y)).backward()
    assert y.grad.reshape(2, -1)[:, 0].tolist() == [1, 1] and y.grad.sum() == 2


def test_max_pool2d_rejects_indivisible():
    with pytest.raises(ValueError):
        ops.max_pool2d(Tensor(np.zeros((1, 3, 4))), 2, 2)


def test_embed_cells_places_vectors_and_rejects_duplicates():
    a, b = Tensor([1.0, 2.0]), Tensor([3.0, 4.0])
    m = ops.embed_cells([a, b], [(1, 0), (1, 3)], 2, 4).data
    assert m.shape == (2, 2, 4)
    np.testing.assert_array_equal(m[:, 1, 0], [1, 2])
    np.testing.assert_array_equal(m[:, 1, 3], [3, 4])
    assert np.count_nonzero(m) == 4
    with pytest.raises(ValueError):
        ops.embed_cells([a, b], [(0, 0), (0, 0)], 2, 4)


def test_concat_validates_axis_and_shapes():
    with pytest.raises(ValueError):
        ops.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 3)))], axis=2)
    with pytest.raises(ValueError):
        ops.concat([Tensor(np.zeros((2, 3))), Tensor(np.zeros((2, 4)))], axis=0)


def test_mul_requires_same_shape():
    with pytest.raises(ValueError):
        ops.mul(Tensor(np.zeros(3)), Tensor(np.zeros(4)))


def test_complex_mul_matches_numpy_complex():
    rng = np.random.default_rng(3)
    a, b = rng.standard_normal((2, 2, 5)), rng.standard_normal((2, 2, 5))
    with precision(np.float64):
        out = ops.complex_mul(Tensor(a), Tensor(b)).data
    z = (a[0] + 1j * a[1]) * (b[0] + 1j * b[1])
    np.testing.assert_allclose(out[0] + 1j * out[1], z)


def test_relative_error_symmetric():
    a, b = np.array([1.0, 2.0]), np.array([1.0, 2.1])
    assert relative_error(a, b) == relative_error(b, a)
    assert relative_error(a, a) == 0.0


def test_gradcheck_catches_wrong_backward(monkeypatch):
    # a 1% error in the relu backward must be visible to both checkers
    real_relu = ops.relu

    def bad_relu(x):
        out = real_relu(x)
        inner = out._backward
        out._backward = lambda g: inner(g * 1.01)
        return out

    monkeypatch.setattr(ops, "relu", bad_relu)
    x = np.random.default_rng(0).standard_normal((4, 5)) + 3.0
    assert gradcheck(bad_relu, [x]).max_error > 1e-3

    def loss(p):
        return ops.sum_all(ops.mul(bad_relu(p["x"]), bad_relu(p["x"])))

    assert max(directional_gradcheck(loss, {"x": x}).values()) > 1e-3


def test_kink_tape_replays_decisions():
    tape = ops.KinkTape()
    x = Tensor([1.0, -1.0])
    with tape.recording():
        ops.relu(x)
    with tape.replaying():
        out = ops.relu(Tensor([-1.0, 1.0]))
    # mask frozen at (on, off): passes -1 through, blocks +1
    np.testing.assert_array_equal(out.data, [-1.0, 0.0])
    with pytest.raises(RuntimeError):
        with tape.replaying():
            ops.relu(x)
            ops.relu(x)
