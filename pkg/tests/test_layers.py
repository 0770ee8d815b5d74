import numpy as np
import pytest

from xaugseg.errors import OddSpatialDims, ShapeMismatch
from xaugseg.model import layers as L

from gradcheck import numeric_grad, rel_error, sample_coords


def naive_conv3x3(x, w, b):
    n, c, h, wd = x.shape
    xp = np.pad(x, ((0, 0), (0, 0), (1, 1), (1, 1)))
    out = np.zeros((n, w.shape[0], h, wd))
    for o in range(w.shape[0]):
        for i in range(h):
            for j in range(wd):
                out[:, o, i, j] = np.sum(xp[:, :, i : i + 3, j : j + 3] * w[o], axis=(1, 2, 3)) + b[o]
    return out


def test_conv3x3_matches_naive_loop(rng):
    x = rng.standard_normal((2, 3, 5, 7))
    w = rng.standard_normal((4, 3, 3, 3))
    b = rng.standard_normal(4)
    out, _ = L.conv3x3_forward(x, w, b)
    np.testing.assert_allclose(out, naive_conv3x3(x, w, b), atol=1e-12)


def test_identity_kernel_passes_through(rng):
    x = rng.standard_normal((2, 1, 6, 6))
    w = np.zeros((1, 1, 3, 3))
    w[0, 0, 1, 1] = 1.0
    out, _ = L.conv3x3_forward(x, w, np.zeros(1))
    np.testing.assert_array_equal(out, x)


def test_all_ones_kernel_counts_neighbourhood():
    out, _ = L.conv3x3_forward(np.ones((1, 1, 5, 5)), np.ones((1, 1, 3, 3)), np.zeros(1))
    assert out[0, 0, 2, 2] == 9.0
    assert out[0, 0, 0, 0] == 4.0  # zero padding at the corner
    assert out[0, 0, 0, 2] == 6.0


def test_bias_only():
    out, _ = L.conv3x3_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 2, 3, 3)), np.array([1.0, -2.0, 0.5]))
    assert out.shape == (1, 3, 4, 4)
    np.testing.assert_array_equal(out[0, :, 0, 0], [1.0, -2.0, 0.5])
    assert np.all(out[0, 1] == -2.0)


def test_conv_shape_errors():
    with pytest.raises(ShapeMismatch):
        L.conv3x3_forward(np.zeros((1, 2, 4, 4)), np.zeros((3, 1, 3, 3)), np.zeros(3))
    with pytest.raises(ShapeMismatch):
        L.conv3x3_forward(np.zeros((1, 1, 4, 4)), np.zeros((3, 1, 3, 3)), np.zeros(2))


@pytest.mark.parametrize("shape", [(2, 3, 4, 5), (1, 1, 1, 1), (3, 2, 8, 8)])
def test_conv3x3_gradients(shape, rng):
    x = rng.standard_normal(shape)
    w = rng.standard_normal((4, shape[1], 3, 3))
    b = rng.standard_normal(4)
    out, cache = L.conv3x3_forward(x, w, b)
    r = rng.standard_normal(out.shape)
    dx, dw, db = L.conv3x3_backward(r, cache)
    f = lambda: float(np.sum(L.conv3x3_forward(x, w, b)[0] * r))  # noqa: E731
    for arr, grad in ((x, dx), (w, dw), (b, db)):
        idx = sample_coords(arr.size, 20, rng)
        assert rel_error(grad.reshape(-1)[idx], numeric_grad(f, arr, idx)) < 1e-7
    # bias gradient is the spatial sum of the upstream gradient
    np.testing.assert_allclose(db, r.sum(axis=(0, 2, 3)), rtol=1e-12)


def test_conv1x1_gradients(rng):
    x = rng.standard_normal((2, 3, 4, 4))
    w = rng.standard_normal((5, 3, 1, 1))
    b = rng.standard_normal(5)
    out, cache = L.conv1x1_forward(x, w, b)
    np.testing.assert_allclose(out, np.einsum("oc,nchw->nohw", w[:, :, 0, 0], x) + b[None, :, None, None])
    r = rng.standard_normal(out.shape)
    dx, dw, db = L.conv1x1_backward(r, cache)
    f = lambda: float(np.sum(L.conv1x1_forward(x, w, b)[0] * r))  # noqa: E731
    for arr, grad in ((x, dx), (w, dw), (b, db)):
        idx = sample_coords(arr.size, 20, rng)
        assert rel_error(grad.reshape(-1)[idx], numeric_grad(f, arr, idx)) < 1e-7


def test_relu_and_sigmoid(rng):
    x = rng.standard_normal((3, 1, 4, 4))
    y, cache = L.relu_forward(x)
    np.testing.assert_array_equal(y, np.maximum(x, 0))
    np.testing.assert_array_equal(L.relu_backward(np.ones_like(x), cache), (x > 0).astype(float))
    s, out = L.sigmoid_forward(x)
    np.testing.assert_allclose(s, 1 / (1 + np.exp(-x)), rtol=1e-14)
    r = rng.standard_normal(x.shape)
    f = lambda: float(np.sum(L.sigmoid_forward(x)[0] * r))  # noqa: E731
    idx = sample_coords(x.size, 20, rng)
    assert rel_error(L.sigmoid_backward(r, out).reshape(-1)[idx], numeric_grad(f, x, idx)) < 1e-8


def test_sigmoid_is_stable_at_extremes():
    for dtype in (np.float32, np.float64):
        s, _ = L.sigmoid_forward(np.array([-1000.0, -50.0, 0.0, 50.0, 1000.0], dtype=dtype))
        assert np.all(np.isfinite(s))
        assert np.all((s > 0) & (s < 1))
        assert s[2] == 0.5


def test_maxpool_forward_backward(rng):
    # a permutation guarantees no ties, so the max is differentiable everywhere
    x = rng.permutation(2 * 2 * 6 * 4).astype(np.float64).reshape(2, 2, 6, 4) / 10
    y, cache = L.maxpool2x2_forward(x)
    np.testing.assert_array_equal(y, x.reshape(2, 2, 3, 2, 2, 2).max(axis=(3, 5)))
    r = rng.standard_normal(y.shape)
    dx = L.maxpool2x2_backward(r, cache)
    f = lambda: float(np.sum(L.maxpool2x2_forward(x)[0] * r))  # noqa: E731
    idx = np.arange(x.size)
    assert rel_error(dx.ravel(), numeric_grad(f, x, idx, rel_step=1e-6)) < 1e-7
    # exactly one routed element per window
    assert np.count_nonzero(dx) == y.size


def test_maxpool_rejects_odd_dims():
    with pytest.raises(OddSpatialDims):
        L.maxpool2x2_forward(np.zeros((1, 1, 5, 4)))


def test_pool_of_upsample_is_identity(rng):
    x = rng.standard_normal((2, 3, 4, 5))
    up, shape = L.upsample2x_forward(x)
    assert up.shape == (2, 3, 8, 10)
    np.testing.assert_array_equal(L.maxpool2x2_forward(up)[0], x)
    r = rng.standard_normal(up.shape)
    dx = L.upsample2x_backward(r, shape)
    f = lambda: float(np.sum(L.upsample2x_forward(x)[0] * r))  # noqa: E731
    idx = sample_coords(x.size, 20, rng)
    assert rel_error(dx.reshape(-1)[idx], numeric_grad(f, x, idx)) < 1e-8


def test_zero_cotangent_gives_zero_gradients(rng):
    x = rng.standard_normal((1, 2, 4, 4))
    out, cache = L.conv3x3_forward(x, rng.standard_normal((3, 2, 3, 3)), rng.standard_normal(3))
    for g in L.conv3x3_backward(np.zeros_like(out), cache):
        assert not np.any(g)


def test_constant_pool_routes_to_first_window_element():
    y, cache = L.maxpool2x2_forward(np.full((1, 1, 4, 4), 3.0))
    assert np.all(y == 3.0)
    dx = L.maxpool2x2_backward(np.ones((1, 1, 2, 2)), cache)[0, 0]
    expected = np.zeros((4, 4))
    expected[::2, ::2] = 1.0
    np.testing.assert_array_equal(dx, expected)
