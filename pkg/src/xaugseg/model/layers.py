"""Forward and backward passes for the layers of the residual U-Net.

Tensors are numpy arrays in (N, C, H, W) layout. Each ``*_forward`` returns
its output together with whatever the matching ``*_backward`` needs, in the
style of::

    out, cache = conv3x3_forward(x, w, b)
    dx, dw, db = conv3x3_backward(dout, cache)
"""
from __future__ import annotations

import numpy as np

from ..errors import OddSpatialDims, ShapeMismatch


def _check_conv(x, w, b, k):
    if x.ndim != 4:
        raise ShapeMismatch(f"expected (N, C, H, W) input, got shape {x.shape}")
    if w.ndim != 4 or w.shape[2:] != (k, k):
        raise ShapeMismatch(f"expected (O, C, {k}, {k}) weights, got {w.shape}")
    if w.shape[1] != x.shape[1]:
        raise ShapeMismatch(f"weights expect {w.shape[1]} input channels, input has {x.shape[1]}")
    if b is not None and b.shape != (w.shape[0],):
        raise ShapeMismatch(f"bias shape {b.shape} does not match {w.shape[0]} output channels")


def _im2col3x3(x):
    """Patch matrix for a 3x3, pad-1 convolution.

    The zero-padded input is laid out channel-major as (C, N*Hp*Wp). Tap
    (u, v) of output position r then sits at flat column r + u*Wp + v, so
    each tap is one contiguous slice. Output positions are enumerated on the
    padded grid; the last two rows/columns of each image are junk and get
    dropped afterwards. Returns (9*C, L) with rows ordered (u, v, c).
    """
    n, c, h, w = x.shape
    hp, wp = h + 2, w + 2
    xp = np.zeros((c, n, hp, wp), dtype=x.dtype)
    xp[:, :, 1:-1, 1:-1] = x.transpose(1, 0, 2, 3)
    flat = xp.reshape(c, -1)
    length = (n - 1) * hp * wp + (h - 1) * wp + w
    cols = np.empty((9, c, length), dtype=x.dtype)
    for u in range(3):
        for v in range(3):
            off = u * wp + v
            cols[3 * u + v] = flat[:, off : off + length]
    return cols.reshape(9 * c, length)


def _from_grid(grid, n, h, w):
    """(O, L) padded-grid values -> (N, O, H, W)."""
    o, length = grid.shape
    hp, wp = h + 2, w + 2
    full = np.zeros((o, n * hp * wp), dtype=grid.dtype)
    full[:, :length] = grid
    return np.ascontiguousarray(full.reshape(o, n, hp, wp)[:, :, :h, :w].transpose(1, 0, 2, 3))


def _to_grid(t, length):
    """(N, O, H, W) -> (O, L) padded-grid layout with zeros at junk positions."""
    n, o, h, w = t.shape
    full = np.zeros((o, n, h + 2, w + 2), dtype=t.dtype)
    full[:, :, :h, :w] = t.transpose(1, 0, 2, 3)
    return full.reshape(o, -1)[:, :length]


def conv3x3_forward(x, w, b):
    """3x3 convolution, stride 1, zero padding 1 (cross-correlation form).

    ``out[n, o, i, j] = b[o] + sum_{c,u,v} w[o, c, u, v] * xpad[n, c, i+u, j+v]``
    """
    _check_conv(x, w, b, 3)
    n, _, h, wd = x.shape
    cols = _im2col3x3(x)
    wmat = w.transpose(0, 2, 3, 1).reshape(w.shape[0], -1)
    grid = wmat @ cols
    if b is not None:
        grid += b[:, None]
    return _from_grid(grid, n, h, wd), (x.shape, cols, w)


def conv3x3_backward(dout, cache):
    x_shape, cols, w = cache
    n, c, h, wd = x_shape
    o = w.shape[0]
    if dout.shape != (n, o, h, wd):
        raise ShapeMismatch(f"gradient shape {dout.shape} does not match conv output")
    length = cols.shape[1]
    dgrid = _to_grid(dout, length)
    dw = (dgrid @ cols.T).reshape(o, 3, 3, c).transpose(0, 3, 1, 2)
    db = dout.sum(axis=(0, 2, 3))
    wmat = w.transpose(0, 2, 3, 1).reshape(o, -1)
    dcols = (wmat.T @ dgrid).reshape(9, c, length)
    hp, wp = h + 2, wd + 2
    dflat = np.zeros((c, n * hp * wp), dtype=dcols.dtype)
    for u in range(3):
        for v in range(3):
            off = u * wp + v
            dflat[:, off : off + length] += dcols[3 * u + v]
    dx = dflat.reshape(c, n, hp, wp)[:, :, 1:-1, 1:-1].transpose(1, 0, 2, 3)
    return np.ascontiguousarray(dx), np.ascontiguousarray(dw), db


def conv1x1_forward(x, w, b):
    _check_conv(x, w, b, 1)
    n, c, h, wd = x.shape
    out = (w[:, :, 0, 0] @ x.reshape(n, c, h * wd)).reshape(n, -1, h, wd)
    if b is not None:
        out += b[None, :, None, None]
    return out, (x, w)


def conv1x1_backward(dout, cache):
    x, w = cache
    n, c, h, wd = x.shape
    o = w.shape[0]
    d3 = dout.reshape(n, o, h * wd)
    x3 = x.reshape(n, c, h * wd)
    dw = (d3 @ x3.transpose(0, 2, 1)).sum(axis=0)[:, :, None, None]
    db = d3.sum(axis=(0, 2))
    dx = (w[:, :, 0, 0].T @ d3).reshape(x.shape)
    return dx, dw, db


def relu_forward(x):
    return np.maximum(x, 0), x


def relu_backward(dout, x):
    return dout * (x > 0)


def sigmoid_forward(x):
    # split by sign so exp never overflows
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep the output strictly inside (0, 1) even where it rounds to an endpoint
    one = np.ones((), dtype=out.dtype)
    np.clip(out, np.finfo(out.dtype).tiny, np.nextafter(one, 0 * one), out=out)
    return out, out


def sigmoid_backward(dout, out):
    return dout * out * (1.0 - out)


def maxpool2x2_forward(x):
    """2x2 max pool, stride 2. Ties route to the first window element in row-major order."""
    n, c, h, w = x.shape
    if h % 2 or w % 2:
        raise OddSpatialDims(f"cannot pool spatial dims {h}x{w}")
    win = x.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h // 2, w // 2, 4)
    arg = win.argmax(axis=-1)  # argmax returns the first maximum
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, (x.shape, arg)


def maxpool2x2_backward(dout, cache):
    shape, arg = cache
    n, c, h, w = shape
    dwin = np.zeros((n, c, h // 2, w // 2, 4), dtype=dout.dtype)
    np.put_along_axis(dwin, arg[..., None], dout[..., None], axis=-1)
    return dwin.reshape(n, c, h // 2, w // 2, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(shape)


def upsample2x_forward(x):
    return x.repeat(2, axis=2).repeat(2, axis=3), x.shape


def upsample2x_backward(dout, shape):
    n, c, h, w = shape
    return dout.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5))
