import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from ppgpair import autodiff as ad
from ppgpair.autodiff import Tensor


def param(*shape, seed=0):
    return Tensor(np.random.default_rng(seed).normal(size=shape), requires_grad=True)


def naive_conv1d(x, w, stride, padding):
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    k = w.shape[2]
    out_len = (xp.shape[2] - k) // stride + 1
    out = np.zeros((x.shape[0], w.shape[0], out_len))
    for b in range(x.shape[0]):
        for o in range(w.shape[0]):
            for t in range(out_len):
                out[b, o, t] = np.sum(xp[b, :, t * stride: t * stride + k] * w[o])
    return out


@pytest.mark.parametrize("length, k, stride, padding", [(10, 3, 1, 0), (11, 3, 2, 1), (8, 7, 2, 3), (5, 5, 1, 0)])
def test_conv1d_matches_naive_loop(length, k, stride, padding):
    x, w = param(2, 3, length), param(4, 3, k, seed=1)
    out = ad.conv1d(x, w, stride=stride, padding=padding)
    assert out.shape[2] == (length + 2 * padding - k) // stride + 1
    np.testing.assert_allclose(out.data, naive_conv1d(x.data, w.data, stride, padding), atol=1e-12)


def test_conv1d_shape_errors():
    with pytest.raises(ValueError):
        ad.conv1d(param(1, 2, 8), param(3, 4, 3))
    with pytest.raises(ValueError):
        ad.conv1d(param(1, 2, 2), param(3, 2, 5))


def test_stop_gradient_blocks_the_edge():
    a = param(3)
    b = param(3, seed=1)
    loss = ad.tsum(ad.mul(ad.stop_gradient(a), b))
    ga, gb = ad.grad(loss, [a, b])
    assert np.all(ga == 0)
    np.testing.assert_array_equal(gb, a.data)
    np.testing.assert_array_equal(ad.stop_gradient(a).data, a.data)


def test_grad_requires_scalar():
    with pytest.raises(ValueError):
        ad.grad(param(3), [])


def test_grad_is_repeatable_and_backward_overwrites():
    x = param(4)
    loss = ad.tsum(ad.mul(x, x))
    g1, = ad.grad(loss, [x])
    g2, = ad.grad(loss, [x])
    np.testing.assert_array_equal(g1, g2)
    loss.backward()
    loss.backward()
    np.testing.assert_array_equal(x.grad, 2 * x.data)


def test_shared_subexpression_accumulates():
    x = param(3)
    y = ad.relu(x)
    loss = ad.tsum(ad.add(y, y))
    g, = ad.grad(loss, [x])
    np.testing.assert_array_equal(g, 2.0 * (x.data > 0))


def test_broadcast_gradient_is_reduced():
    x, b = param(4, 3), param(3, seed=2)
    g, = ad.grad(ad.tsum(ad.add(x, b)), [b])
    np.testing.assert_array_equal(g, np.full(3, 4.0))


def test_cosine_similarity_values():
    a = Tensor(np.array([1.0, 0.0]))
    assert ad.cosine_similarity(a, Tensor(np.array([2.0, 0.0]))).item() == pytest.approx(1.0)
    assert ad.cosine_similarity(a, Tensor(np.array([0.0, 3.0]))).item() == pytest.approx(0.0)
    assert ad.cosine_similarity(a, Tensor(np.array([-1.0, 0.0]))).item() == pytest.approx(-1.0)


def test_cosine_similarity_rejects_zero_vector():
    with pytest.raises(ValueError, match="degenerate vector"):
        ad.cosine_similarity(Tensor(np.zeros(3)), Tensor(np.ones(3)))


@settings(max_examples=100, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 6), st.floats(1e-6, 1e6))
def test_cosine_similarity_bounded(seed, d, scale):
    rng = np.random.default_rng(seed)
    a, b = rng.normal(size=(5, d)) * scale, rng.normal(size=(5, d))
    c = ad.cosine_similarity(Tensor(a), Tensor(b)).data
    assert np.all(np.abs(c) <= 1.0)


def test_channel_norm_is_per_example():
    x = param(3, 4, 10)
    g, b = Tensor(np.ones(4)), Tensor(np.zeros(4))
    full = ad.channel_norm(x, g, b).data
    single = ad.channel_norm(Tensor(x.data[1:2]), g, b).data
    np.testing.assert_allclose(full[1:2], single, atol=1e-12)
    np.testing.assert_allclose(full.reshape(3, -1).mean(axis=1), 0, atol=1e-12)


def test_batch_norm_statistics():
    out = ad.batch_norm(param(16, 5)).data
    np.testing.assert_allclose(out.mean(axis=0), 0, atol=1e-12)
    np.testing.assert_allclose(out.std(axis=0), 1, atol=1e-6)


def test_softmax_cross_entropy_value():
    logits = Tensor(np.array([[0.0, 0.0], [10.0, -10.0]]))
    loss = ad.softmax_cross_entropy(logits, np.array([0, 0])).item()
    assert loss == pytest.approx((np.log(2) + np.log1p(np.exp(-20))) / 2)


def test_softmax_cross_entropy_label_errors():
    with pytest.raises(ValueError):
        ad.softmax_cross_entropy(param(2, 2), np.array([0, 2]))
    with pytest.raises(ValueError):
        ad.softmax_cross_entropy(param(2, 2), np.array([0.0, 1.0]))


def test_mean_squared_error():
    assert ad.mean_squared_error(Tensor(np.array([1.0, 3.0])), [0.0, 0.0]).item() == 5.0
    with pytest.raises(ValueError):
        ad.mean_squared_error(Tensor(np.zeros(2)), np.zeros(3))


def test_global_avg_pool_and_linear():
    x = Tensor(np.arange(12.0).reshape(1, 2, 6))
    np.testing.assert_array_equal(ad.global_avg_pool(x).data, [[2.5, 8.5]])
    w, b = Tensor(np.eye(2) * 2), Tensor(np.array([1.0, -1.0]))
    np.testing.assert_array_equal(ad.linear(Tensor(np.array([[1.0, 2.0]])), w, b).data, [[3.0, 3.0]])


def test_float32_stays_float32():
    x = Tensor(np.ones((2, 1, 8), np.float32), requires_grad=True)
    w = Tensor(np.ones((2, 1, 3), np.float32), requires_grad=True)
    out = ad.channel_norm(ad.conv1d(x, w, padding=1), Tensor(np.ones(2, np.float32)), Tensor(np.zeros(2, np.float32)))
    assert out.dtype == np.float32
    assert all(g.dtype == np.float32 for g in ad.grad(ad.tsum(out), [x, w]))
