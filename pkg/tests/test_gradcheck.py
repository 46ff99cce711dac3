import numpy as np
import pytest

from ppgpair import autodiff as ad
from ppgpair.autodiff import Tensor
from ppgpair.gradcheck import OP_CASES, TOLERANCE, check, check_op, numeric_grad, relative_error


def test_numeric_grad_of_quadratic():
    x = Tensor(np.array([1.0, -2.0, 0.5]), requires_grad=True)
    g = numeric_grad(lambda: ad.tsum(ad.mul(x, x)), x)
    np.testing.assert_allclose(g, 2 * x.data, rtol=1e-8)
    np.testing.assert_array_equal(x.data, [1.0, -2.0, 0.5])


def test_relative_error_handles_zero_gradients():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0, 0.0]), np.array([1.0, 1e-3])) == pytest.approx(1e-3)


def test_check_flags_a_wrong_gradient():
    x = Tensor(np.array([0.3, 0.7]), requires_grad=True)

    def wrong():
        # forward is x**2 summed but the recorded backward claims 3x
        return ad._node(np.asarray((x.data ** 2).sum()), (x,), lambda g: (3 * g * x.data,))

    assert check(wrong, [x]) > 0.1


@pytest.mark.parametrize("name", sorted(n for n in OP_CASES if n != "pair_loss_graph"))
def test_every_op_passes_on_a_few_cases(name):
    assert check_op(name, cases=5, seed=123).max_rel_error < TOLERANCE


def test_composed_graph_passes_on_a_few_cases():
    assert check_op("pair_loss_graph", cases=3, seed=5).max_rel_error < TOLERANCE
