"""Pure numpy implementations of the hot kernels.

Used when the compiled ``_ckernels`` extension is unavailable, and as the
second backend in the benchmark. Every function has the same signature and
output contract as its compiled twin.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _windows(x, k, stride, pad):
    if pad:
        x = np.pad(x, ((0, 0), (0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (k, k), axis=(2, 3))
    return win[:, :, ::stride, ::stride]


def conv2d_forward(x, w, stride, pad):
    k = w.shape[2]
    win = _windows(x, k, stride, pad)  # N, C, Ho, Wo, k, k
    out = np.tensordot(win, w, axes=([1, 4, 5], [1, 2, 3]))  # N, Ho, Wo, F
    return np.ascontiguousarray(out.transpose(0, 3, 1, 2))


def conv2d_backward(x, w, gout, stride, pad):
    n, c, h, wd = x.shape
    k = w.shape[2]
    ho, wo = gout.shape[2], gout.shape[3]
    win = _windows(x, k, stride, pad)
    gw = np.tensordot(gout, win, axes=([0, 2, 3], [0, 2, 3]))  # F, C, k, k

    gxp = np.zeros((n, c, h + 2 * pad, wd + 2 * pad))
    for i in range(k):
        for j in range(k):
            contrib = np.tensordot(gout, w[:, :, i, j], axes=([1], [0]))  # N, Ho, Wo, C
            gxp[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += contrib.transpose(0, 3, 1, 2)
    gx = gxp[:, :, pad:pad + h, pad:pad + wd]
    return np.ascontiguousarray(gx), np.ascontiguousarray(gw)


def _corners(shape, coords):
    n, c, h, w = shape
    x = coords[:, 0]
    y = coords[:, 1]
    valid = (x >= 0) & (x <= w - 1) & (y >= 0) & (y <= h - 1)
    xs = np.where(valid, x, 0.0)
    ys = np.where(valid, y, 0.0)
    x0 = np.floor(xs).astype(np.intp)
    y0 = np.floor(ys).astype(np.intp)
    fx = xs - x0
    fy = ys - y0
    x1 = np.minimum(x0 + 1, w - 1)
    y1 = np.minimum(y0 + 1, h - 1)
    # the far neighbour only exists when its weight can be nonzero
    ex = (x0 + 1 <= w - 1).astype(float)
    ey = (y0 + 1 <= h - 1).astype(float)
    return valid, x0, y0, x1, y1, fx * ex, fy * ey, ex, ey


def bilinear_forward(img, coords):
    n, c, h, w = img.shape
    valid, x0, y0, x1, y1, fx, fy, _, _ = _corners(img.shape, coords)
    bidx = np.arange(n)[:, None, None]
    out = np.empty((n, c) + coords.shape[2:])
    vf = valid.astype(float)
    w00 = (1 - fx) * (1 - fy) * vf
    w01 = fx * (1 - fy) * vf
    w10 = (1 - fx) * fy * vf
    w11 = fx * fy * vf
    for ch in range(c):
        plane = img[:, ch]
        out[:, ch] = (w00 * plane[bidx, y0, x0] + w01 * plane[bidx, y0, x1]
                      + w10 * plane[bidx, y1, x0] + w11 * plane[bidx, y1, x1])
    return out, valid


def bilinear_backward(img, coords, gout):
    n, c, h, w = img.shape
    valid, x0, y0, x1, y1, fx, fy, ex, ey = _corners(img.shape, coords)
    vf = valid.astype(float)
    bidx = np.arange(n)[:, None, None]
    gimg = np.zeros(n * c * h * w)
    gcoords = np.zeros(coords.shape)
    w00 = (1 - fx) * (1 - fy) * vf
    w01 = fx * (1 - fy) * vf
    w10 = (1 - fx) * fy * vf
    w11 = fx * fy * vf
    for ch in range(c):
        g = gout[:, ch]
        base = (bidx * c + ch) * h
        for wgt, yi, xi in ((w00, y0, x0), (w01, y0, x1), (w10, y1, x0), (w11, y1, x1)):
            idx = ((base + yi) * w + xi).ravel()
            gimg += np.bincount(idx, weights=(wgt * g).ravel(), minlength=gimg.size)
        plane = img[:, ch]
        v00 = plane[bidx, y0, x0]
        v01 = plane[bidx, y0, x1] * ex
        v10 = plane[bidx, y1, x0] * ey
        v11 = plane[bidx, y1, x1] * ex * ey
        gcoords[:, 0] += g * vf * ((1 - fy) * (v01 - v00) + fy * (v11 - v10))
        gcoords[:, 1] += g * vf * ((1 - fx) * (v10 - v00) + fx * (v11 - v01))
    return gimg.reshape(img.shape), gcoords
