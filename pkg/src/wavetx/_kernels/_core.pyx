# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled kernels mirroring numpy_backend.

Loop nests keep the innermost index on the output column so the C compiler
can vectorise the accumulation. Tie-breaking and truncation semantics must
match the NumPy backend exactly; only summation order may differ.
"""

import numpy as np

cimport cython
cimport numpy as cnp

cnp.import_array()

ctypedef fused real:
    float
    double


def conv2d_forward(real[:, :, :, ::1] x, real[:, :, :, ::1] w, real[::1] b, int stride):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], ww = x.shape[3]
    cdef Py_ssize_t f = w.shape[0], kh = w.shape[2], kw = w.shape[3]
    cdef Py_ssize_t ho = (h - kh) // stride + 1
    cdef Py_ssize_t wo = (ww - kw) // stride + 1
    if real is float:
        out_arr = np.empty((n, f, ho, wo), dtype=np.float32)
    else:
        out_arr = np.empty((n, f, ho, wo), dtype=np.float64)
    cdef real[:, :, :, ::1] out = out_arr
    cdef Py_ssize_t ni, fi, ci, u, v, i, j
    cdef real wv
    with nogil:
        for ni in range(n):
            for fi in range(f):
                for i in range(ho):
                    for j in range(wo):
                        out[ni, fi, i, j] = b[fi]
                for ci in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            wv = w[fi, ci, u, v]
                            for i in range(ho):
                                for j in range(wo):
                                    out[ni, fi, i, j] = out[ni, fi, i, j] + wv * x[ni, ci, i * stride + u, j * stride + v]
    return out_arr


def conv2d_backward_input(real[:, :, :, ::1] gy, real[:, :, :, ::1] w, int stride,
                          Py_ssize_t height, Py_ssize_t width):
    cdef Py_ssize_t n = gy.shape[0], f = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t c = w.shape[1], kh = w.shape[2], kw = w.shape[3]
    if real is float:
        gx_arr = np.zeros((n, c, height, width), dtype=np.float32)
    else:
        gx_arr = np.zeros((n, c, height, width), dtype=np.float64)
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t ni, fi, ci, u, v, i, j
    cdef real wv
    with nogil:
        for ni in range(n):
            for fi in range(f):
                for ci in range(c):
                    for u in range(kh):
                        for v in range(kw):
                            wv = w[fi, ci, u, v]
                            for i in range(ho):
                                for j in range(wo):
                                    gx[ni, ci, i * stride + u, j * stride + v] = gx[ni, ci, i * stride + u, j * stride + v] + wv * gy[ni, fi, i, j]
    return gx_arr


def conv2d_backward_params(real[:, :, :, ::1] gy, real[:, :, :, ::1] x,
                           Py_ssize_t kh, Py_ssize_t kw, int stride):
    cdef Py_ssize_t n = gy.shape[0], f = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    cdef Py_ssize_t c = x.shape[1]
    if real is float:
        gw_arr = np.zeros((f, c, kh, kw), dtype=np.float32)
        gb_arr = np.zeros(f, dtype=np.float32)
    else:
        gw_arr = np.zeros((f, c, kh, kw), dtype=np.float64)
        gb_arr = np.zeros(f, dtype=np.float64)
    cdef real[:, :, :, ::1] gw = gw_arr
    cdef real[::1] gb = gb_arr
    cdef Py_ssize_t ni, fi, ci, u, v, i, j
    cdef real acc
    with nogil:
        for fi in range(f):
            acc = 0
            for ni in range(n):
                for i in range(ho):
                    for j in range(wo):
                        acc = acc + gy[ni, fi, i, j]
            gb[fi] = acc
            for ci in range(c):
                for u in range(kh):
                    for v in range(kw):
                        acc = 0
                        for ni in range(n):
                            for i in range(ho):
                                for j in range(wo):
                                    acc = acc + x[ni, ci, i * stride + u, j * stride + v] * gy[ni, fi, i, j]
                        gw[fi, ci, u, v] = acc
    return gw_arr, gb_arr


def maxpool2d_forward(real[:, :, :, ::1] x, int k):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], w = x.shape[3]
    cdef Py_ssize_t ho = h // k, wo = w // k
    if real is float:
        y_arr = np.empty((n, c, ho, wo), dtype=np.float32)
    else:
        y_arr = np.empty((n, c, ho, wo), dtype=np.float64)
    idx_arr = np.empty((n, c, ho, wo), dtype=np.int32)
    cdef real[:, :, :, ::1] y = y_arr
    cdef cnp.int32_t[:, :, :, ::1] idx = idx_arr
    cdef Py_ssize_t ni, ci, i, j, u, v
    cdef real best, val
    cdef cnp.int32_t best_p
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        best = x[ni, ci, i * k, j * k]
                        best_p = 0
                        for u in range(k):
                            for v in range(k):
                                val = x[ni, ci, i * k + u, j * k + v]
                                if val > best:
                                    best = val
                                    best_p = <cnp.int32_t> (u * k + v)
                        y[ni, ci, i, j] = best
                        idx[ni, ci, i, j] = best_p
    return y_arr, idx_arr


def maxpool2d_backward(real[:, :, :, ::1] gy, cnp.int32_t[:, :, :, ::1] idx, int k,
                       Py_ssize_t height, Py_ssize_t width):
    cdef Py_ssize_t n = gy.shape[0], c = gy.shape[1], ho = gy.shape[2], wo = gy.shape[3]
    if real is float:
        gx_arr = np.zeros((n, c, height, width), dtype=np.float32)
    else:
        gx_arr = np.zeros((n, c, height, width), dtype=np.float64)
    cdef real[:, :, :, ::1] gx = gx_arr
    cdef Py_ssize_t ni, ci, i, j
    cdef cnp.int32_t p
    with nogil:
        for ni in range(n):
            for ci in range(c):
                for i in range(ho):
                    for j in range(wo):
                        p = idx[ni, ci, i, j]
                        gx[ni, ci, i * k + p // k, j * k + p % k] = gx[ni, ci, i * k + p // k, j * k + p % k] + gy[ni, ci, i, j]
    return gx_arr
