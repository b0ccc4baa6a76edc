"""Layer-level differentiable ops: convolution, sampling, resampling, pooling."""
import numpy as np

from ..errors import ShapeError
from . import kernels
from .core import _result, as_tensor


def conv2d(x, kernel, bias=None, stride=1, pad=0):
    """2-D cross-correlation of ``x[N,C,H,W]`` with ``kernel[F,C,k,k]``."""
    x, kernel = as_tensor(x), as_tensor(kernel)
    if x.ndim != 4 or kernel.ndim != 4:
        raise ShapeError(f"conv2d expects 4-d input and kernel, got {x.shape} and {kernel.shape}")
    if x.shape[1] != kernel.shape[1]:
        raise ShapeError(f"input has {x.shape[1]} channels, kernel expects {kernel.shape[1]}")
    k = kernel.shape[2]
    if kernel.shape[3] != k or k % 2 == 0:
        raise ShapeError(f"kernel must be square with odd size, got {kernel.shape[2:]}")
    if pad < 0 or stride < 1:
        raise ShapeError("pad must be >= 0 and stride >= 1")
    if x.shape[2] + 2 * pad < k or x.shape[3] + 2 * pad < k:
        raise ShapeError("kernel larger than padded input")

    xd = np.ascontiguousarray(x.data)
    wd = np.ascontiguousarray(kernel.data)
    out = kernels.conv2d_forward(xd, wd, stride, pad)
    parents = (x, kernel)
    if bias is not None:
        bias = as_tensor(bias)
        out += bias.data.reshape(1, -1, 1, 1)
        parents = (x, kernel, bias)

    def bw(g):
        g = np.ascontiguousarray(g)
        gx, gw = kernels.conv2d_backward(xd, wd, g, stride, pad)
        if bias is None:
            return gx, gw
        return gx, gw, g.sum(axis=(0, 2, 3))
    return _result(out, parents, bw)


def bilinear_sample(img, coords):
    """Sample ``img`` at continuous pixel coordinates.

    ``img`` is ``[C,H,W]`` (or batched ``[N,C,H,W]``); ``coords`` is
    ``[2,H',W']`` (or ``[N,2,H',W']``) holding (u, v) = (column, row) with
    integers at pixel centres. A coordinate is in view when it lies in
    ``[0, W-1] x [0, H-1]``; out-of-view samples are 0.

    Returns ``(values, in_view)`` where ``in_view`` is a boolean array of
    shape ``[H',W']`` (or ``[N,H',W']``).
    """
    img, coords = as_tensor(img), as_tensor(coords)
    batched = img.ndim == 4
    if not batched:
        if img.ndim != 3 or coords.ndim != 3:
            raise ShapeError(f"expected [C,H,W] image and [2,H,W] coords, got {img.shape}, {coords.shape}")
        idata = img.data[None]
        cdata = coords.data[None]
    else:
        idata, cdata = img.data, coords.data
    if cdata.shape[1] != 2 or cdata.shape[0] != idata.shape[0]:
        raise ShapeError(f"coords shape {coords.shape} does not match image {img.shape}")
    idata = np.ascontiguousarray(idata)
    cdata = np.ascontiguousarray(cdata)
    out, valid = kernels.bilinear_forward(idata, cdata)
    valid = valid.astype(bool)

    def bw(g):
        g = np.ascontiguousarray(g if batched else g[None])
        gi, gc = kernels.bilinear_backward(idata, cdata, g)
        if not batched:
            gi, gc = gi[0], gc[0]
        return gi, gc
    res = _result(out if batched else out[0], (img, coords), bw)
    return res, (valid if batched else valid[0])


def upsample2x(x):
    """Nearest-neighbour 2x upsampling of ``[N,C,H,W]``."""
    x = as_tensor(x)
    n, c, h, w = x.shape
    out = np.repeat(np.repeat(x.data, 2, axis=2), 2, axis=3)
    return _result(out, (x,), lambda g: (g.reshape(n, c, h, 2, w, 2).sum(axis=(3, 5)),))


def pad_reflect(x, p=1):
    """Reflection padding of the two spatial axes (edge pixel not repeated)."""
    x = as_tensor(x)
    h, w = x.shape[-2:]
    rows = np.r_[p:0:-1, 0:h, h - 2:h - 2 - p:-1]
    cols = np.r_[p:0:-1, 0:w, w - 2:w - 2 - p:-1]
    out = x.data[..., rows[:, None], cols[None, :]]

    def bw(g):
        gr = g[..., p:p + h, :].copy()
        for k in range(1, p + 1):
            gr[..., k, :] += g[..., p - k, :]
            gr[..., h - 1 - k, :] += g[..., p + h - 1 + k, :]
        gx = gr[..., p:p + w].copy()
        for k in range(1, p + 1):
            gx[..., k] += gr[..., p - k]
            gx[..., w - 1 - k] += gr[..., p + w - 1 + k]
        return (gx,)
    return _result(out, (x,), bw)


def avg_pool3(x):
    """3x3 mean filter, stride 1, no padding, over the last two axes."""
    x = as_tensor(x)
    d = x.data
    h, w = d.shape[-2:]
    ho, wo = h - 2, w - 2
    out = np.zeros(d.shape[:-2] + (ho, wo))
    for i in range(3):
        for j in range(3):
            out += d[..., i:i + ho, j:j + wo]
    out /= 9.0

    def bw(g):
        gx = np.zeros(d.shape)
        g9 = g / 9.0
        for i in range(3):
            for j in range(3):
                gx[..., i:i + ho, j:j + wo] += g9
        return (gx,)
    return _result(out, (x,), bw)
