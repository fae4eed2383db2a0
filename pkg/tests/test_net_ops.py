import numpy as np
import pytest

from evpipe.errors import DataError
from evpipe.net.ops import (
    batch_norm_backward,
    batch_norm_forward,
    conv2d,
    conv2d_backward,
    conv_out_size,
    conv_transpose2d,
    conv_transpose2d_backward,
    relu,
    sigmoid,
)


def fd_grad(f, x, eps=1e-5):
    """Central-difference gradient of scalar f with respect to array x."""
    g = np.zeros_like(x)
    flat = x.ravel()
    gf = g.ravel()
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + eps
        hi = f()
        flat[i] = orig - eps
        lo = f()
        flat[i] = orig
        gf[i] = (hi - lo) / (2 * eps)
    return g


def conv2d_ref(x, kernel, bias, stride, pad):
    n, c, h, w = x.shape
    co, ci, kh, kw = kernel.shape
    xp = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    oh = (h + 2 * pad - kh) // stride + 1
    ow = (w + 2 * pad - kw) // stride + 1
    y = np.zeros((n, co, oh, ow))
    for ni in range(n):
        for o in range(co):
            for u in range(oh):
                for v in range(ow):
                    win = xp[ni, :, u * stride : u * stride + kh, v * stride : v * stride + kw]
                    y[ni, o, u, v] = np.sum(win * kernel[o]) + (0.0 if bias is None else bias[o])
    return y


def conv_transpose2d_ref(x, kernel, bias, stride, pad, opad):
    n, ci, h, w = x.shape
    _, co, kh, kw = kernel.shape
    oh = (h - 1) * stride - 2 * pad + kh + opad
    ow = (w - 1) * stride - 2 * pad + kw + opad
    y = np.zeros((n, co, oh, ow))
    for u in range(h):
        for v in range(w):
            for i in range(kh):
                for j in range(kw):
                    r, s = u * stride + i - pad, v * stride + j - pad
                    if 0 <= r < oh and 0 <= s < ow:
                        y[:, :, r, s] += x[:, :, u, v] @ kernel[:, :, i, j]
    if bias is not None:
        y += bias.reshape(1, -1, 1, 1)
    return y


def test_conv_out_size():
    assert conv_out_size(7, 3, 1, 0) == 5
    assert conv_out_size(7, 3, 2, 1) == 4
    assert conv_out_size(8, 5, 2, 2) == 4


def test_conv2d_hand_case():
    x = np.arange(9, dtype=np.float64).reshape(1, 1, 3, 3)
    k = np.array([[[[1.0, 0.0], [0.0, -1.0]]]])
    y = conv2d(x, k)
    # each output is top-left minus bottom-right of its 2x2 window: always -4
    np.testing.assert_array_equal(y, np.full((1, 1, 2, 2), -4.0))


@pytest.mark.parametrize("stride,pad", [(1, 0), (1, 1), (2, 1), (2, 2), (3, 0)])
def test_conv2d_matches_direct_loop(rng, stride, pad):
    x = rng.standard_normal((2, 3, 6, 5))
    k = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    got = conv2d(x, k, b, stride, pad)
    np.testing.assert_allclose(got, conv2d_ref(x, k, b, stride, pad), atol=1e-12)


def test_conv2d_validation(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    with pytest.raises(DataError):
        conv2d(x, rng.standard_normal((3, 5, 3, 3)))
    with pytest.raises(DataError):
        conv2d(x, rng.standard_normal((3, 2, 5, 5)))  # empty output


def test_conv2d_backward_fd(rng):
    x = rng.standard_normal((2, 2, 5, 4))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(3)
    r = rng.standard_normal(conv2d(x, k, b, 2, 1).shape)

    def loss():
        return float(np.sum(conv2d(x, k, b, 2, 1) * r))

    dx, dk, db = conv2d_backward(r, x, k, 2, 1)
    np.testing.assert_allclose(dx, fd_grad(loss, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dk, fd_grad(loss, k), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(db, fd_grad(loss, b), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize("stride,pad,opad", [(1, 0, 0), (2, 1, 0), (2, 1, 1), (2, 2, 1), (3, 1, 2)])
def test_conv_transpose2d_matches_direct_loop(rng, stride, pad, opad):
    x = rng.standard_normal((2, 3, 4, 5))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(2)
    got = conv_transpose2d(x, k, b, stride, pad, opad)
    np.testing.assert_allclose(
        got, conv_transpose2d_ref(x, k, b, stride, pad, opad), atol=1e-12
    )


def test_conv_transpose2d_validation(rng):
    x = rng.standard_normal((1, 3, 4, 4))
    k = rng.standard_normal((3, 2, 3, 3))
    with pytest.raises(DataError):
        conv_transpose2d(x, k, None, 2, 0, 2)  # output_padding >= stride
    with pytest.raises(DataError):
        conv_transpose2d(x, rng.standard_normal((4, 2, 3, 3)))


def test_conv_transpose2d_backward_fd(rng):
    x = rng.standard_normal((2, 3, 4, 3))
    k = rng.standard_normal((3, 2, 3, 3))
    b = rng.standard_normal(2)
    r = rng.standard_normal(conv_transpose2d(x, k, b, 2, 1, 1).shape)

    def loss():
        return float(np.sum(conv_transpose2d(x, k, b, 2, 1, 1) * r))

    dx, dk, db = conv_transpose2d_backward(r, x, k, 2, 1, 1)
    np.testing.assert_allclose(dx, fd_grad(loss, x), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dk, fd_grad(loss, k), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(db, fd_grad(loss, b), rtol=1e-6, atol=1e-8)


@pytest.mark.parametrize(
    "h,w,stride,pad,k",
    # both axes must leave the same stride remainder, as in the network
    # itself, where inputs are pre-padded to a multiple of 2^depth
    [(7, 5, 2, 2, 5), (6, 8, 2, 2, 5), (5, 7, 1, 1, 3), (9, 6, 3, 1, 3)],
)
def test_transpose_is_adjoint_of_conv(rng, h, w, stride, pad, k):
    """<y, conv(x)> == <conv_T(y), x> with the same kernel array."""
    kernel = rng.standard_normal((4, 3, k, k))  # (co, ci, kh, kw)
    x = rng.standard_normal((2, 3, h, w))
    y_shape = conv2d(x, kernel, None, stride, pad).shape
    y = rng.standard_normal(y_shape)
    opad = (h + 2 * pad - k) % stride
    assert opad == (w + 2 * pad - k) % stride
    lhs = np.sum(y * conv2d(x, kernel, None, stride, pad))
    # transposed layout reads (ci_t, co_t) = (co, ci): same array, no copy
    back = conv_transpose2d(y, kernel, None, stride, pad, opad)
    assert back.shape == x.shape
    rhs = np.sum(back * x)
    assert abs(lhs - rhs) <= 1e-9 * max(1.0, abs(lhs))


def test_relu_and_sigmoid():
    x = np.array([-2.0, -0.0, 0.0, 3.5])
    np.testing.assert_array_equal(relu(x), [0.0, 0.0, 0.0, 3.5])
    s = sigmoid(np.array([0.0]))
    assert s[0] == 0.5
    big = sigmoid(np.array([-800.0, 800.0]))
    assert big[0] == 0.0 and big[1] == 1.0  # saturates without overflow
    xs = np.linspace(-6, 6, 25)
    np.testing.assert_allclose(sigmoid(-xs), 1.0 - sigmoid(xs), atol=1e-15)


def test_batch_norm_train_normalizes(rng):
    x = rng.standard_normal((3, 2, 4, 5)) * 3.0 + 1.5
    gamma = np.ones(2)
    beta = np.zeros(2)
    y, cache = batch_norm_forward(x, gamma, beta, np.zeros(2), np.ones(2), "train")
    np.testing.assert_allclose(y.mean(axis=(0, 2, 3)), 0.0, atol=1e-12)
    np.testing.assert_allclose(y.var(axis=(0, 2, 3)), 1.0, atol=1e-4)  # eps shrinks it
    assert cache["mode"] == "train"


def test_batch_norm_eval_uses_running_stats(rng):
    x = rng.standard_normal((2, 3, 3, 3))
    rm = np.array([0.5, -1.0, 2.0])
    rv = np.array([4.0, 1.0, 0.25])
    gamma = np.array([1.0, 2.0, 0.5])
    beta = np.array([0.0, 1.0, -1.0])
    y, _ = batch_norm_forward(x, gamma, beta, rm, rv, "eval")
    expect = gamma.reshape(1, -1, 1, 1) * (x - rm.reshape(1, -1, 1, 1)) / np.sqrt(
        rv.reshape(1, -1, 1, 1) + 1e-5
    ) + beta.reshape(1, -1, 1, 1)
    np.testing.assert_allclose(y, expect, atol=1e-12)


def test_batch_norm_updates_running_stats(rng):
    x = rng.standard_normal((3, 2, 4, 5))
    rm, rv = np.zeros(2), np.ones(2)
    batch_norm_forward(x, np.ones(2), np.zeros(2), rm, rv, "train", update_stats=True)
    m = 3 * 4 * 5
    np.testing.assert_allclose(rm, 0.1 * x.mean(axis=(0, 2, 3)), atol=1e-12)
    np.testing.assert_allclose(
        rv, 0.9 + 0.1 * x.var(axis=(0, 2, 3)) * m / (m - 1), atol=1e-12
    )


def test_batch_norm_backward_fd(rng):
    x = rng.standard_normal((2, 2, 3, 4))
    gamma = rng.uniform(0.5, 1.5, 2)
    beta = rng.standard_normal(2)
    r = rng.standard_normal(x.shape)

    def loss():
        y, _ = batch_norm_forward(x, gamma, beta, np.zeros(2), np.ones(2), "train")
        return float(np.sum(y * r))

    _, cache = batch_norm_forward(x, gamma, beta, np.zeros(2), np.ones(2), "train")
    dx, dgamma, dbeta = batch_norm_backward(r, cache)
    np.testing.assert_allclose(dx, fd_grad(loss, x), rtol=1e-5, atol=1e-7)
    np.testing.assert_allclose(dgamma, fd_grad(loss, gamma), rtol=1e-6, atol=1e-8)
    np.testing.assert_allclose(dbeta, fd_grad(loss, beta), rtol=1e-6, atol=1e-8)


def test_batch_norm_mode_validation(rng):
    x = rng.standard_normal((1, 1, 2, 2))
    with pytest.raises(DataError):
        batch_norm_forward(x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), "test")
    _, eval_cache = batch_norm_forward(x, np.ones(1), np.zeros(1), np.zeros(1), np.ones(1), "eval")
    with pytest.raises(DataError):
        batch_norm_backward(x, eval_cache)
