# cython: boundscheck=False, wraparound=False, cdivision=True, language_level=3
"""Compiled depthwise 3x3 convolution kernels (stride 1, pad 1).

Same contracts as _kernels_np; selected at import time by kernels.py.
Inputs must be C-contiguous and share one float dtype.
"""

import numpy as np

cimport numpy as cnp

cnp.import_array()

ctypedef fused floating:
    float
    double

BACKEND = "cython"


def depthwise3x3_forward(floating[:, :, :, ::1] x, floating[:, :, ::1] w):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t b, ch, i, j, ki, kj, ii, jj
    if floating is double:
        out_arr = np.zeros((n, c, h, wd), dtype=np.float64)
    else:
        out_arr = np.zeros((n, c, h, wd), dtype=np.float32)
    cdef floating[:, :, :, ::1] out = out_arr
    cdef floating acc
    for b in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(wd):
                    acc = 0
                    for ki in range(3):
                        ii = i + ki - 1
                        if ii < 0 or ii >= h:
                            continue
                        for kj in range(3):
                            jj = j + kj - 1
                            if jj < 0 or jj >= wd:
                                continue
                            acc = acc + w[ch, ki, kj] * x[b, ch, ii, jj]
                    out[b, ch, i, j] = acc
    return out_arr


def depthwise3x3_backward_input(floating[:, :, :, ::1] gy, floating[:, :, ::1] w):
    cdef Py_ssize_t n = gy.shape[0], c = gy.shape[1], h = gy.shape[2], wd = gy.shape[3]
    cdef Py_ssize_t b, ch, i, j, ki, kj, ii, jj
    if floating is double:
        gx_arr = np.zeros((n, c, h, wd), dtype=np.float64)
    else:
        gx_arr = np.zeros((n, c, h, wd), dtype=np.float32)
    cdef floating[:, :, :, ::1] gx = gx_arr
    cdef floating acc
    for b in range(n):
        for ch in range(c):
            for i in range(h):
                for j in range(wd):
                    acc = 0
                    for ki in range(3):
                        ii = i + ki - 1
                        if ii < 0 or ii >= h:
                            continue
                        for kj in range(3):
                            jj = j + kj - 1
                            if jj < 0 or jj >= wd:
                                continue
                            acc = acc + w[ch, 2 - ki, 2 - kj] * gy[b, ch, ii, jj]
                    gx[b, ch, i, j] = acc
    return gx_arr


def depthwise3x3_backward_weight(floating[:, :, :, ::1] x, floating[:, :, :, ::1] gy):
    cdef Py_ssize_t n = x.shape[0], c = x.shape[1], h = x.shape[2], wd = x.shape[3]
    cdef Py_ssize_t b, ch, i, j, ki, kj, ii, jj
    if floating is double:
        gw_arr = np.zeros((c, 3, 3), dtype=np.float64)
    else:
        gw_arr = np.zeros((c, 3, 3), dtype=np.float32)
    cdef floating[:, :, ::1] gw = gw_arr
    cdef floating acc
    for ch in range(c):
        for ki in range(3):
            for kj in range(3):
                acc = 0
                for b in range(n):
                    for i in range(h):
                        ii = i + ki - 1
                        if ii < 0 or ii >= h:
                            continue
                        for j in range(wd):
                            jj = j + kj - 1
                            if jj < 0 or jj >= wd:
                                continue
                            acc = acc + x[b, ch, ii, jj] * gy[b, ch, i, j]
                gw[ch, ki, kj] = acc
    return gw_arr
