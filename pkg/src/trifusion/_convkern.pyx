# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled convolution kernels (direct loops, f64 accumulators).

Same contracts as _convref.py; selected by trifusion.kernels at import.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()


def conv2d_forward(const float[:, :, ::1] x, const float[:, :, :, ::1] w, int stride, int pad):
    cdef int ci = x.shape[0], h = x.shape[1], win = x.shape[2]
    cdef int co = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef int ho = (h + 2 * pad - kh) // stride + 1
    cdef int wo = (win + 2 * pad - kw) // stride + 1
    out = np.empty((co, ho, wo), dtype=np.float32)
    cdef float[:, :, ::1] y = out
    cdef int o, c, i, j, u, v, ii, jj
    cdef double acc
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                acc = 0.0
                for c in range(ci):
                    for u in range(kh):
                        ii = i * stride - pad + u
                        if ii < 0 or ii >= h:
                            continue
                        for v in range(kw):
                            jj = j * stride - pad + v
                            if jj < 0 or jj >= win:
                                continue
                            acc += x[c, ii, jj] * w[o, c, u, v]
                y[o, i, j] = <float>acc
    return out


def conv2d_dx(const float[:, :, ::1] dy, const float[:, :, :, ::1] w, int stride, int pad, int h, int w_in):
    cdef int co = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2]
    cdef int ci = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    out = np.zeros((ci, h, w_in), dtype=np.float32)
    cdef float[:, :, ::1] dx = out
    cdef int o, c, i, j, u, v, ii, jj
    cdef float g
    for o in range(co):
        for i in range(ho):
            for j in range(wo):
                g = dy[o, i, j]
                if g == 0.0:
                    continue
                for c in range(ci):
                    for u in range(kh):
                        ii = i * stride - pad + u
                        if ii < 0 or ii >= h:
                            continue
                        for v in range(kw):
                            jj = j * stride - pad + v
                            if jj < 0 or jj >= w_in:
                                continue
                            dx[c, ii, jj] += g * w[o, c, u, v]
    return out


def conv2d_dw(const float[:, :, ::1] dy, const float[:, :, ::1] x, int stride, int pad, int kh, int kw):
    cdef int co = dy.shape[0], ho = dy.shape[1], wo = dy.shape[2]
    cdef int ci = x.shape[0], h = x.shape[1], w_in = x.shape[2]
    out = np.empty((co, ci, kh, kw), dtype=np.float32)
    cdef float[:, :, :, ::1] dw = out
    cdef int o, c, i, j, u, v, ii, jj
    cdef double acc
    for o in range(co):
        for c in range(ci):
            for u in range(kh):
                for v in range(kw):
                    acc = 0.0
                    for i in range(ho):
                        ii = i * stride - pad + u
                        if ii < 0 or ii >= h:
                            continue
                        for j in range(wo):
                            jj = j * stride - pad + v
                            if jj < 0 or jj >= w_in:
                                continue
                            acc += dy[o, i, j] * x[c, ii, jj]
                    dw[o, c, u, v] = <float>acc
    return out
