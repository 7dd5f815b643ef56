# cython: boundscheck=False, wraparound=False, cdivision=True
# cython: language_level=3
"""Compiled 3x3 convolution kernels (channels-last, same padding).

The forward kernel keeps one output row in a thread-local buffer so the
innermost loop is a contiguous fused multiply-add over output channels.
Weight gradients accumulate in float64 per kernel tap; each of the nine
taps is owned by one thread, so results do not depend on thread count.
Fused-typed: float32 for production passes, float64 for gradient checks.
"""

import numpy as np

cimport cython
cimport numpy as cnp
from cython.parallel cimport prange
from libc.stdlib cimport free, malloc
from libc.string cimport memset

ctypedef fused real_t:
    cnp.float32_t
    cnp.float64_t


def conv2d_same(real_t[:, :, :, ::1] x, real_t[:, :, :, ::1] w,
                real_t[::1] b, int num_threads=1):
    """x: [N,H,W,Ci], w: [3,3,Ci,Co], b: [Co] -> y [N,H,W,Co]."""
    cdef Py_ssize_t N = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t Ci = x.shape[3], Co = w.shape[3]
    if real_t is cnp.float32_t:
        y_np = np.empty((N, H, W, Co), dtype=np.float32)
    else:
        y_np = np.empty((N, H, W, Co), dtype=np.float64)
    cdef real_t[:, :, :, ::1] y = y_np
    cdef Py_ssize_t n, i, j, ky, kx, ci, co, ii, j0, j1
    cdef real_t v
    cdef real_t *row
    cdef int nt = num_threads if num_threads > 0 else 1
    with nogil:
        for n in prange(N, num_threads=nt, schedule='static'):
            row = <real_t *> malloc(W * Co * sizeof(real_t))
            if row == NULL:
                with gil:
                    raise MemoryError("conv2d_same row buffer")
            for i in range(H):
                for j in range(W):
                    for co in range(Co):
                        row[j * Co + co] = b[co]
                for ky in range(3):
                    ii = i + ky - 1
                    if ii < 0 or ii >= H:
                        continue
                    for kx in range(3):
                        j0 = 0 if kx >= 1 else 1
                        j1 = W if kx <= 1 else W - 1
                        for ci in range(Ci):
                            for j in range(j0, j1):
                                v = x[n, ii, j + kx - 1, ci]
                                for co in range(Co):
                                    row[j * Co + co] = row[j * Co + co] + \
                                        v * w[ky, kx, ci, co]
                for j in range(W):
                    for co in range(Co):
                        y[n, i, j, co] = row[j * Co + co]
            free(row)
    return y_np


def conv2d_param_grad(real_t[:, :, :, ::1] x, real_t[:, :, :, ::1] gy,
                      int num_threads=1):
    """Weight gradient of conv2d_same. Returns gw [3,3,Ci,Co].

    The bias gradient is a plain sum over gy and is left to the caller.
    """
    cdef Py_ssize_t N = x.shape[0], H = x.shape[1], W = x.shape[2]
    cdef Py_ssize_t Ci = x.shape[3], Co = gy.shape[3]
    if real_t is cnp.float32_t:
        gw_np = np.empty((3, 3, Ci, Co), dtype=np.float32)
    else:
        gw_np = np.empty((3, 3, Ci, Co), dtype=np.float64)
    cdef real_t[:, :, :, ::1] gw = gw_np
    cdef Py_ssize_t tap, ky, kx, n, i, j, ci, co, ii, i0, i1, j0, j1
    cdef double v
    cdef double *acc
    cdef int nt = num_threads if num_threads > 0 else 1
    with nogil:
        for tap in prange(9, num_threads=nt, schedule='static'):
            ky = tap // 3
            kx = tap % 3
            acc = <double *> malloc(Ci * Co * sizeof(double))
            if acc == NULL:
                with gil:
                    raise MemoryError("conv2d_param_grad accumulator")
            memset(acc, 0, Ci * Co * sizeof(double))
            i0 = 0 if ky >= 1 else 1
            i1 = H if ky <= 1 else H - 1
            j0 = 0 if kx >= 1 else 1
            j1 = W if kx <= 1 else W - 1
            for n in range(N):
                for i in range(i0, i1):
                    ii = i + ky - 1
                    for j in range(j0, j1):
                        for ci in range(Ci):
                            v = <double> x[n, ii, j + kx - 1, ci]
                            for co in range(Co):
                                acc[ci * Co + co] += v * <double> gy[n, i, j, co]
            for ci in range(Ci):
                for co in range(Co):
                    gw[ky, kx, ci, co] = <real_t> acc[ci * Co + co]
            free(acc)
    return gw_np
