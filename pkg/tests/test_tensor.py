import numpy as np
import pytest

from sepstereo import ops
from sepstereo.tensor import Tensor, default_dtype, precision, topological_order


def test_default_dtype_is_float32_and_precision_scopes():
    assert Tensor([1.0, 2.0]).dtype == np.float32
    with precision(np.float64):
        assert default_dtype() == np.float64
        assert Tensor([1.0]).dtype == np.float64
    assert default_dtype() == np.float32


def test_scalar_promoted_to_shape_one():
    assert Tensor(3.0).shape == (1,)


def test_gradient_accumulates_over_consumers():
    # y = x*x + x  => dy/dx = 2x + 1
    x = Tensor([1.5, -2.0], requires_grad=True)
    y = ops.sum_all(ops.add(ops.mul(x, x), x))
    y.backward()
    np.testing.assert_allclose(x.grad, 2 * x.data + 1)


def test_diamond_graph_visits_each_node_once():
    x = Tensor([2.0], requires_grad=True)
    a = ops.scale(x, 3.0)
    b = ops.add(a, a)
    c = ops.mul(b, a)  # 6x * 3x = 18 x^2
    c.backward()
    np.testing.assert_allclose(x.grad, [36 * 2.0])
    order = topological_order(c)
    assert len(order) == len({id(t) for t in order})
    assert order[-1] is c


def test_backward_twice_does_not_double_intermediates():
    x = Tensor([1.0, 2.0], requires_grad=True)
    y = ops.sum_all(ops.scale(x, 2.0))
    y.backward()
    y.backward()
    # leaves accumulate across calls, intermediates are reset
    np.testing.assert_allclose(x.grad, [4.0, 4.0])


def test_non_finite_forward_raises():
    x = Tensor([np.float32(3e38)])
    with np.errstate(over="ignore"), pytest.raises(FloatingPointError):
        ops.scale(x, 10.0)


def test_detach_cuts_graph():
    x = Tensor([1.0], requires_grad=True)
    y = ops.sum_all(ops.mul(x.detach(), x))
    y.backward()
    np.testing.assert_allclose(x.grad, [1.0])


def test_operator_sugar_matches_ops():
    a = Tensor([1.0, 2.0])
    b = Tensor([3.0, 5.0])
    np.testing.assert_array_equal((a + b).data, [4, 7])
    np.testing.assert_array_equal((b - a).data, [2, 3])
    np.testing.assert_array_equal((a * b).data, [3, 10])
    np.testing.assert_array_equal((a * 2.0).data, [2, 4])
    np.testing.assert_array_equal((-a).data, [-1, -2])
