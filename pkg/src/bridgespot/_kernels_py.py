"""Pure numpy versions of the hot kernels.

These are the reference implementations; the compiled module ``_kernels``
must agree with them to floating point round-off.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def im2col(x, kh, kw, stride, padding):
    """Unfold ``x`` of shape (N, C, H, W) into (N, C*kh*kw, OH*OW)."""
    n, c, h, w = x.shape
    if padding:
        x = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    oh, ow = win.shape[2], win.shape[3]
    # (N, C, OH, OW, kh, kw) -> (N, C, kh, kw, OH, OW)
    cols = win.transpose(0, 1, 4, 5, 2, 3).reshape(n, c * kh * kw, oh * ow)
    return np.ascontiguousarray(cols)


def col2im(cols, shape, kh, kw, stride, padding):
    """Adjoint of :func:`im2col`: scatter-add columns back into an image."""
    n, c, h, w = shape
    hp, wp = h + 2 * padding, w + 2 * padding
    oh = (hp - kh) // stride + 1
    ow = (wp - kw) // stride + 1
    cols = cols.reshape(n, c, kh, kw, oh, ow)
    out = np.zeros((n, c, hp, wp), dtype=cols.dtype)
    for i in range(kh):
        for j in range(kw):
            out[:, :, i:i + stride * oh:stride, j:j + stride * ow:stride] += cols[:, :, i, j]
    if padding:
        out = out[:, :, padding:padding + h, padding:padding + w]
    return np.ascontiguousarray(out)


def bilinear_gather(img, ys, xs):
    """Sample ``img`` (C, H, W) on the separable grid ``ys`` x ``xs``.

    Coordinates are in index space and clamped to the valid range.
    """
    c, h, w = img.shape
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = (ys - y0)[:, None]
    wx = (xs - x0)[None, :]
    a = img[:, y0[:, None], x0[None, :]]
    b = img[:, y0[:, None], x1[None, :]]
    cc = img[:, y1[:, None], x0[None, :]]
    d = img[:, y1[:, None], x1[None, :]]
    return (a * (1 - wy) * (1 - wx) + b * (1 - wy) * wx
            + cc * wy * (1 - wx) + d * wy * wx)


def bilinear_scatter(grad, shape, ys, xs):
    """Adjoint of :func:`bilinear_gather` with respect to the image."""
    c, h, w = shape
    ys = np.clip(ys, 0.0, h - 1)
    xs = np.clip(xs, 0.0, w - 1)
    y0 = np.floor(ys).astype(np.intp)
    x0 = np.floor(xs).astype(np.intp)
    y1 = np.minimum(y0 + 1, h - 1)
    x1 = np.minimum(x0 + 1, w - 1)
    wy = ys - y0
    wx = xs - x0
    # separable: out = Ry @ img @ Rx^T, so grad_img = Ry^T @ grad @ Rx
    ry = np.zeros((len(ys), h))
    rows = np.arange(len(ys))
    np.add.at(ry, (rows, y0), 1 - wy)
    np.add.at(ry, (rows, y1), wy)
    rx = np.zeros((len(xs), w))
    cols = np.arange(len(xs))
    np.add.at(rx, (cols, x0), 1 - wx)
    np.add.at(rx, (cols, x1), wx)
    return np.einsum("ih,cij,jw->chw", ry, grad, rx, optimize=True)
