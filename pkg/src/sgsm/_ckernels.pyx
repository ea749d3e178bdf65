# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled hot loops: strided 1-D convolution, Haar lifting, extrema scan.

Convolution gathers strided patches (and scatters their gradients back) in
C loops and leaves the dense contraction to BLAS.

Every routine mirrors a function in ``_pykernels`` with the same signature.
Convolution sums are accumulated in double precision and rounded to float32
once per output element.
"""
import numpy as np
cimport numpy as cnp
from libc.math cimport sqrt

cnp.import_array()


cdef _im2col(const float[:, :, ::1] xv, Py_ssize_t K, Py_ssize_t stride, Py_ssize_t L_out):
    # cols[n * L_out + t, c * K + k] = x[n, c, t * stride + k]
    cdef Py_ssize_t B = xv.shape[0], C_in = xv.shape[1]
    cols = np.empty((B * L_out, C_in * K), dtype=np.float64)
    cdef double[:, ::1] cv = cols
    cdef Py_ssize_t n, c, k, t, row
    with nogil:
        for n in range(B):
            for t in range(L_out):
                row = n * L_out + t
                for c in range(C_in):
                    for k in range(K):
                        cv[row, c * K + k] = xv[n, c, t * stride + k]
    return cols


def conv1d_forward(x, w, b, Py_ssize_t stride):
    cdef const float[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    cdef Py_ssize_t B = xv.shape[0], L = xv.shape[2]
    cdef Py_ssize_t C_out = w.shape[0], K = w.shape[2]
    cdef Py_ssize_t L_out = (L - K) // stride + 1
    cols = _im2col(xv, K, stride, L_out)
    out = cols @ w.reshape(C_out, -1).T.astype(np.float64)
    out += np.asarray(b, dtype=np.float64)
    return out.reshape(B, L_out, C_out).transpose(0, 2, 1).astype(np.float32)


def conv1d_backward(x, w, grad_out, Py_ssize_t stride):
    cdef const float[:, :, ::1] xv = np.ascontiguousarray(x, dtype=np.float32)
    w = np.asarray(w, dtype=np.float32)
    cdef Py_ssize_t B = xv.shape[0], C_in = xv.shape[1], L = xv.shape[2]
    cdef Py_ssize_t C_out = w.shape[0], K = w.shape[2]
    g = np.asarray(grad_out, dtype=np.float64)
    cdef Py_ssize_t L_out = g.shape[2]
    g2 = np.ascontiguousarray(g.transpose(0, 2, 1)).reshape(B * L_out, C_out)
    cols = _im2col(xv, K, stride, L_out)
    dw = (g2.T @ cols).reshape(C_out, C_in, K)
    db = g.sum(axis=(0, 2))
    dcols = g2 @ w.reshape(C_out, -1).astype(np.float64)
    # col2im: scatter-add each patch back onto the input positions it read
    dx64 = np.zeros((B, C_in, L), dtype=np.float64)
    cdef double[:, :, ::1] dxv = dx64
    cdef const double[:, ::1] dcv = dcols
    cdef Py_ssize_t n, c, k, t, row
    with nogil:
        for n in range(B):
            for t in range(L_out):
                row = n * L_out + t
                for c in range(C_in):
                    for k in range(K):
                        dxv[n, c, t * stride + k] += dcv[row, c * K + k]
    return dx64.astype(np.float32), dw.astype(np.float32), db.astype(np.float32)


def haar_forward(x):
    cdef cnp.ndarray[double, ndim=1] buf = np.array(x, dtype=np.float64)
    cdef Py_ssize_t n = buf.shape[0]
    cdef cnp.ndarray[double, ndim=1] tmp = np.empty(n, dtype=np.float64)
    cdef double[::1] bv = buf
    cdef double[::1] tv = tmp
    cdef double s = 1.0 / sqrt(2.0)
    cdef Py_ssize_t half, i
    with nogil:
        while n > 1:
            half = n // 2
            for i in range(half):
                tv[i] = (bv[2 * i] + bv[2 * i + 1]) * s
                tv[half + i] = (bv[2 * i] - bv[2 * i + 1]) * s
            for i in range(n):
                bv[i] = tv[i]
            n = half
    return buf


def haar_inverse(c):
    cdef cnp.ndarray[double, ndim=1] buf = np.array(c, dtype=np.float64)
    cdef Py_ssize_t total = buf.shape[0]
    cdef cnp.ndarray[double, ndim=1] tmp = np.empty(total, dtype=np.float64)
    cdef double[::1] bv = buf
    cdef double[::1] tv = tmp
    cdef double s = 1.0 / sqrt(2.0)
    cdef Py_ssize_t half = 1, i
    with nogil:
        while half < total:
            for i in range(half):
                tv[2 * i] = (bv[i] + bv[half + i]) * s
                tv[2 * i + 1] = (bv[i] - bv[half + i]) * s
            for i in range(2 * half):
                bv[i] = tv[i]
            half = half * 2
    return buf


def local_extrema(h):
    cdef const double[::1] hv = np.ascontiguousarray(h, dtype=np.float64)
    cdef Py_ssize_t n = hv.shape[0], i
    maxima = np.empty(n, dtype=np.intp)
    minima = np.empty(n, dtype=np.intp)
    cdef Py_ssize_t[::1] mxv = maxima
    cdef Py_ssize_t[::1] mnv = minima
    cdef Py_ssize_t nmax = 0, nmin = 0
    cdef double left, right
    with nogil:
        for i in range(1, n - 1):
            left = hv[i] - hv[i - 1]
            right = hv[i + 1] - hv[i]
            if left > 0 and right <= 0:
                mxv[nmax] = i
                nmax += 1
            elif left < 0 and right >= 0:
                mnv[nmin] = i
                nmin += 1
    return maxima[:nmax].copy(), minima[:nmin].copy()
