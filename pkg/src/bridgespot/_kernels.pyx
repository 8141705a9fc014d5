# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled loops for im2col/col2im and separable bilinear sampling."""

import numpy as np
cimport numpy as cnp
from libc.math cimport floor

cnp.import_array()


def im2col(double[:, :, :, ::1] x, int kh, int kw, int stride, int padding):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t oh = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * padding - kw) // stride + 1
    out_arr = np.zeros((n, c * kh * kw, oh * ow), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, oy, ox, row, iy, ix
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oy in range(oh):
                            iy = oy * stride + i - padding
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ow):
                                ix = ox * stride + j - padding
                                if ix < 0 or ix >= w:
                                    continue
                                out[b, row, oy * ow + ox] = x[b, ch, iy, ix]
    return out_arr


def col2im(cols_in, shape, int kh, int kw, int stride, int padding):
    cdef Py_ssize_t n = shape[0], c = shape[1], h = shape[2], w = shape[3]
    cdef Py_ssize_t oh = (h + 2 * padding - kh) // stride + 1
    cdef Py_ssize_t ow = (w + 2 * padding - kw) // stride + 1
    cdef double[:, :, ::1] cols = np.ascontiguousarray(
        cols_in, dtype=np.float64).reshape(n, c * kh * kw, oh * ow)
    out_arr = np.zeros((n, c, h, w), dtype=np.float64)
    cdef double[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t b, ch, i, j, oy, ox, row, iy, ix
    with nogil:
        for b in range(n):
            for ch in range(c):
                for i in range(kh):
                    for j in range(kw):
                        row = (ch * kh + i) * kw + j
                        for oy in range(oh):
                            iy = oy * stride + i - padding
                            if iy < 0 or iy >= h:
                                continue
                            for ox in range(ow):
                                ix = ox * stride + j - padding
                                if ix < 0 or ix >= w:
                                    continue
                                out[b, ch, iy, ix] += cols[b, row, oy * ow + ox]
    return out_arr


cdef inline void _split(double v, Py_ssize_t size, Py_ssize_t* lo,
                        Py_ssize_t* hi, double* frac) noexcept nogil:
    if v < 0.0:
        v = 0.0
    if v > size - 1:
        v = size - 1
    lo[0] = <Py_ssize_t>floor(v)
    hi[0] = lo[0] + 1 if lo[0] + 1 < size else size - 1
    frac[0] = v - lo[0]


def bilinear_gather(img_in, ys_in, xs_in):
    cdef double[:, :, ::1] img = np.ascontiguousarray(img_in, dtype=np.float64)
    cdef double[::1] ys = np.ascontiguousarray(ys_in, dtype=np.float64)
    cdef double[::1] xs = np.ascontiguousarray(xs_in, dtype=np.float64)
    cdef Py_ssize_t c = img.shape[0], h = img.shape[1], w = img.shape[2]
    cdef Py_ssize_t oh = ys.shape[0], ow = xs.shape[0]
    out_arr = np.empty((c, oh, ow), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ch, i, j, y0, y1, x0, x1
    cdef double fy, fx
    with nogil:
        for i in range(oh):
            _split(ys[i], h, &y0, &y1, &fy)
            for j in range(ow):
                _split(xs[j], w, &x0, &x1, &fx)
                for ch in range(c):
                    out[ch, i, j] = (img[ch, y0, x0] * (1 - fy) * (1 - fx)
                                     + img[ch, y0, x1] * (1 - fy) * fx
                                     + img[ch, y1, x0] * fy * (1 - fx)
                                     + img[ch, y1, x1] * fy * fx)
    return out_arr


def bilinear_scatter(grad_in, shape, ys_in, xs_in):
    cdef double[:, :, ::1] grad = np.ascontiguousarray(grad_in, dtype=np.float64)
    cdef double[::1] ys = np.ascontiguousarray(ys_in, dtype=np.float64)
    cdef double[::1] xs = np.ascontiguousarray(xs_in, dtype=np.float64)
    cdef Py_ssize_t c = shape[0], h = shape[1], w = shape[2]
    cdef Py_ssize_t oh = ys.shape[0], ow = xs.shape[0]
    out_arr = np.zeros((c, h, w), dtype=np.float64)
    cdef double[:, :, ::1] out = out_arr
    cdef Py_ssize_t ch, i, j, y0, y1, x0, x1
    cdef double fy, fx, g
    with nogil:
        for i in range(oh):
            _split(ys[i], h, &y0, &y1, &fy)
            for j in range(ow):
                _split(xs[j], w, &x0, &x1, &fx)
                for ch in range(c):
                    g = grad[ch, i, j]
                    out[ch, y0, x0] += g * (1 - fy) * (1 - fx)
                    out[ch, y0, x1] += g * (1 - fy) * fx
                    out[ch, y1, x0] += g * fy * (1 - fx)
                    out[ch, y1, x1] += g * fy * fx
    return out_arr
