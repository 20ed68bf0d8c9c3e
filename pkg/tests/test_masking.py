import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from sepstereo import ops
from sepstereo.dsp import Spectrogram
from sepstereo.masking import ComplexMask, apply_mask, difference_spectrum, reconstruct_lr
from sepstereo.tensor import Tensor, precision

finite = st.floats(-100, 100, allow_nan=False, width=64)
grids = arrays(np.float64, (3, 4), elements=finite)


def spec(re, im):
    return Spectrogram(Tensor(re), Tensor(im))


@settings(max_examples=50, deadline=None)
@given(re=grids, im=grids)
def test_identity_mask(re, im):
    with precision(np.float64):
        out = apply_mask(spec(re, im), ComplexMask.constant((3, 4), 1 + 0j))
    np.testing.assert_allclose(out.real.data, re, atol=1e-6)
    np.testing.assert_allclose(out.imag.data, im, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(re=grids, im=grids)
def test_quarter_turn_mask(re, im):
    # multiplying by j maps (a, b) -> (-b, a)
    with precision(np.float64):
        out = apply_mask(spec(re, im), ComplexMask.constant((3, 4), 1j))
    np.testing.assert_allclose(out.real.data, -im, atol=1e-6)
    np.testing.assert_allclose(out.imag.data, re, atol=1e-6)


@settings(max_examples=50, deadline=None)
@given(re=grids, im=grids, mr=grids, mi=grids)
def test_apply_mask_is_complex_product(re, im, mr, mi):
    with precision(np.float64):
        out = apply_mask(spec(re, im), ComplexMask(Tensor(mr), Tensor(mi)))
    np.testing.assert_allclose(out.to_complex(), (re + 1j * im) * (mr + 1j * mi), atol=1e-6, rtol=1e-12)


@settings(max_examples=50, deadline=None)
@given(lr=grids, li=grids, rr=grids, ri=grids)
def test_difference_round_trip(lr, li, rr, ri):
    with precision(np.float64):
        left, right = spec(lr, li), spec(rr, ri)
        mono = (left + right).scaled(0.5)
        l2, r2 = reconstruct_lr(mono, difference_spectrum(left, right))
    np.testing.assert_allclose(l2.to_complex(), left.to_complex(), atol=1e-6)
    np.testing.assert_allclose(r2.to_complex(), right.to_complex(), atol=1e-6)


def test_difference_sign_convention():
    with precision(np.float64):
        d = difference_spectrum(spec(np.ones((1, 1)), np.zeros((1, 1))), spec(np.zeros((1, 1)), np.zeros((1, 1))))
    assert d.real.data[0, 0] == 0.5


def test_mask_gradients_reach_both_factors():
    rng = np.random.default_rng(0)
    with precision(np.float64):
        s = Spectrogram(Tensor(rng.standard_normal((2, 3)), True), Tensor(rng.standard_normal((2, 3)), True))
        m = ComplexMask(Tensor(rng.standard_normal((2, 3)), True), Tensor(rng.standard_normal((2, 3)), True))
        out = apply_mask(s, m)
        ops.sum_all(ops.add(out.real, out.imag)).backward()
    # d(Re+Im)/dMr = s_r + s_i
    np.testing.assert_allclose(m.real.grad, s.real.data + s.imag.data)
    np.testing.assert_allclose(s.imag.grad, m.real.data - m.imag.data)


def test_shape_mismatch_rejected():
    with pytest.raises(ValueError):
        apply_mask(spec(np.zeros((2, 3)), np.zeros((2, 3))), ComplexMask.constant((3, 3), 1))
    with pytest.raises(ValueError):
        ComplexMask(Tensor(np.zeros((2, 2))), Tensor(np.zeros((2, 3))))
    with pytest.raises(ValueError):
        reconstruct_lr(spec(np.zeros((2, 3)), np.zeros((2, 3))), spec(np.zeros((2, 2)), np.zeros((2, 2))))
