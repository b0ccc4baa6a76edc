# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled hot kernels: im2col convolution and bilinear sampling.

Same contracts as ``_pykernels``. Loops run without the GIL so independent
evaluation threads can overlap.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


cdef void _im2col(double[:, :, ::1] x, double[:, ::1] cols, Py_ssize_t k,
                  Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t c = x.shape[0], h = x.shape[1], wd = x.shape[2]
    cdef Py_ssize_t ci, i, j, oy, ox, iy, ix, row
    for ci in range(c):
        for i in range(k):
            for j in range(k):
                row = (ci * k + i) * k + j
                for oy in range(ho):
                    iy = oy * stride + i - pad
                    if iy < 0 or iy >= h:
                        for ox in range(wo):
                            cols[row, oy * wo + ox] = 0.0
                        continue
                    for ox in range(wo):
                        ix = ox * stride + j - pad
                        if ix < 0 or ix >= wd:
                            cols[row, oy * wo + ox] = 0.0
                        else:
                            cols[row, oy * wo + ox] = x[ci, iy, ix]


cdef void _col2im(double[:, ::1] cols, double[:, :, ::1] gx, Py_ssize_t k,
                  Py_ssize_t stride, Py_ssize_t pad, Py_ssize_t ho, Py_ssize_t wo) noexcept nogil:
    cdef Py_ssize_t c = gx.shape[0], h = gx.shape[1], wd = gx.shape[2]
    cdef Py_ssize_t ci, i, j, oy, ox, iy, ix, row
    for ci in range(c):
        for i in range(k):
            for j in range(k):
                row = (ci * k + i) * k + j
                for oy in range(ho):
                    iy = oy * stride + i - pad
                    if iy < 0 or iy >= h:
                        continue
                    for ox in range(wo):
                        ix = ox * stride + j - pad
                        if ix >= 0 and ix < wd:
                            gx[ci, iy, ix] += cols[row, oy * wo + ox]


def conv2d_forward(double[:, :, :, ::1] x, double[:, :, :, ::1] w, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = (h + 2 * pad - k) // stride + 1
    cdef Py_ssize_t wo = (wd + 2 * pad - k) // stride + 1
    cdef Py_ssize_t b
    wmat = np.asarray(w).reshape(f, c * k * k)
    cols_arr = np.empty((c * k * k, ho * wo))
    cdef double[:, ::1] cols = cols_arr
    out = np.empty((n, f, ho, wo))
    for b in range(n):
        with nogil:
            _im2col(x[b], cols, k, stride, pad, ho, wo)
        np.dot(wmat, cols_arr, out=out[b].reshape(f, ho * wo))
    return out


def conv2d_backward(double[:, :, :, ::1] x, double[:, :, :, ::1] w,
                    double[:, :, :, ::1] gout, int stride, int pad):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], k = w.shape[2]
    cdef Py_ssize_t ho = gout.shape[2], wo = gout.shape[3]
    cdef Py_ssize_t b
    wmat = np.asarray(w).reshape(f, c * k * k)
    garr = np.asarray(gout)
    cols_arr = np.empty((c * k * k, ho * wo))
    cdef double[:, ::1] cols = cols_arr
    cdef double[:, ::1] gcols
    gx_arr = np.zeros((n, c, h, wd))
    cdef double[:, :, :, ::1] gx = gx_arr
    gw = np.zeros((f, c * k * k))
    for b in range(n):
        gb = garr[b].reshape(f, ho * wo)
        with nogil:
            _im2col(x[b], cols, k, stride, pad, ho, wo)
        gw += gb @ cols_arr.T
        gcols = wmat.T @ gb
        with nogil:
            _col2im(gcols, gx[b], k, stride, pad, ho, wo)
    return gx_arr, gw.reshape(f, c, k, k)


def bilinear_forward(double[:, :, :, ::1] img, double[:, :, :, ::1] coords):
    cdef Py_ssize_t n = img.shape[0], c = img.shape[1], h = img.shape[2], w = img.shape[3]
    cdef Py_ssize_t ho = coords.shape[2], wo = coords.shape[3]
    out_arr = np.zeros((n, c, ho, wo))
    valid_arr = np.zeros((n, ho, wo), dtype=np.bool_)
    cdef double[:, :, :, ::1] out = out_arr
    cdef cnp.npy_bool[:, :, ::1] valid = valid_arr
    cdef Py_ssize_t b, ch, oy, ox, x0, y0, x1, y1
    cdef double x, y, fx, fy, w00, w01, w10, w11
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    x = coords[b, 0, oy, ox]
                    y = coords[b, 1, oy, ox]
                    if not (x >= 0 and x <= w - 1 and y >= 0 and y <= h - 1):
                        continue
                    valid[b, oy, ox] = 1
                    x0 = <Py_ssize_t>floor(x)
                    y0 = <Py_ssize_t>floor(y)
                    fx = x - x0
                    fy = y - y0
                    x1 = x0 + 1
                    y1 = y0 + 1
                    if x1 > w - 1:
                        x1 = w - 1
                        fx = 0.0
                    if y1 > h - 1:
                        y1 = h - 1
                        fy = 0.0
                    w00 = (1 - fx) * (1 - fy)
                    w01 = fx * (1 - fy)
                    w10 = (1 - fx) * fy
                    w11 = fx * fy
                    for ch in range(c):
                        out[b, ch, oy, ox] = (w00 * img[b, ch, y0, x0] + w01 * img[b, ch, y0, x1]
                                              + w10 * img[b, ch, y1, x0] + w11 * img[b, ch, y1, x1])
    return out_arr, valid_arr


def bilinear_backward(double[:, :, :, ::1] img, double[:, :, :, ::1] coords,
                      double[:, :, :, ::1] gout):
    cdef Py_ssize_t n = img.shape[0], c = img.shape[1], h = img.shape[2], w = img.shape[3]
    cdef Py_ssize_t ho = coords.shape[2], wo = coords.shape[3]
    gimg_arr = np.zeros((n, c, h, w))
    gcoords_arr = np.zeros((n, 2, ho, wo))
    cdef double[:, :, :, ::1] gimg = gimg_arr
    cdef double[:, :, :, ::1] gc = gcoords_arr
    cdef Py_ssize_t b, ch, oy, ox, x0, y0, x1, y1
    cdef double x, y, fx, fy, g, v00, v01, v10, v11, ex, ey
    with nogil:
        for b in range(n):
            for oy in range(ho):
                for ox in range(wo):
                    x = coords[b, 0, oy, ox]
                    y = coords[b, 1, oy, ox]
                    if not (x >= 0 and x <= w - 1 and y >= 0 and y <= h - 1):
                        continue
                    x0 = <Py_ssize_t>floor(x)
                    y0 = <Py_ssize_t>floor(y)
                    fx = x - x0
                    fy = y - y0
                    x1 = x0 + 1
                    y1 = y0 + 1
                    ex = 1.0
                    ey = 1.0
                    if x1 > w - 1:
                        x1 = w - 1
                        fx = 0.0
                        ex = 0.0
                    if y1 > h - 1:
                        y1 = h - 1
                        fy = 0.0
                        ey = 0.0
                    for ch in range(c):
                        g = gout[b, ch, oy, ox]
                        gimg[b, ch, y0, x0] += (1 - fx) * (1 - fy) * g
                        gimg[b, ch, y0, x1] += fx * (1 - fy) * g
                        gimg[b, ch, y1, x0] += (1 - fx) * fy * g
                        gimg[b, ch, y1, x1] += fx * fy * g
                        v00 = img[b, ch, y0, x0]
                        v01 = img[b, ch, y0, x1] * ex
                        v10 = img[b, ch, y1, x0] * ey
                        v11 = img[b, ch, y1, x1] * ex * ey
                        gc[b, 0, oy, ox] += g * ((1 - fy) * (v01 - v00) + fy * (v11 - v10))
                        gc[b, 1, oy, ox] += g * ((1 - fx) * (v10 - v00) + fx * (v11 - v01))
    return gimg_arr, gcoords_arr
