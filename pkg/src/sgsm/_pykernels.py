"""Pure numpy implementations of the hot kernels.

Used when the compiled extension is unavailable or ``SGSM_PURE_PYTHON`` is
set. Signatures and numerics match ``_ckernels``: convolution sums are
accumulated in float64 and rounded to float32 at the end.
"""
import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _patches(x, kernel, stride):
    # (B, C_in, L) -> (B, L_out, C_in, K) view
    win = sliding_window_view(x, kernel, axis=2)[:, :, ::stride, :]
    return win.transpose(0, 2, 1, 3)


def conv1d_forward(x, w, b, stride):
    x64 = np.asarray(x, dtype=np.float64)
    w64 = np.asarray(w, dtype=np.float64)
    cols = _patches(x64, w64.shape[2], stride)
    out = np.einsum("nlck,ock->nol", cols, w64, optimize=True)
    out += np.asarray(b, dtype=np.float64)[None, :, None]
    return out.astype(np.float32)


def conv1d_backward(x, w, grad_out, stride):
    x64 = np.asarray(x, dtype=np.float64)
    w64 = np.asarray(w, dtype=np.float64)
    g64 = np.asarray(grad_out, dtype=np.float64)
    kernel = w64.shape[2]
    l_out = g64.shape[2]
    cols = _patches(x64, kernel, stride)
    dw = np.einsum("nol,nlck->ock", g64, cols, optimize=True)
    db = g64.sum(axis=(0, 2))
    dx = np.zeros_like(x64)
    # scatter one kernel tap at a time
    span = stride * (l_out - 1) + 1
    for k in range(kernel):
        dx[:, :, k:k + span:stride] += np.einsum("nol,oc->ncl", g64, w64[:, :, k])
    return dx.astype(np.float32), dw.astype(np.float32), db.astype(np.float32)


def haar_forward(x):
    buf = np.array(x, dtype=np.float64)
    s = 1.0 / np.sqrt(2.0)
    n = buf.shape[0]
    while n > 1:
        even, odd = buf[0:n:2].copy(), buf[1:n:2].copy()
        half = n // 2
        buf[:half] = (even + odd) * s
        buf[half:n] = (even - odd) * s
        n = half
    return buf


def haar_inverse(c):
    buf = np.array(c, dtype=np.float64)
    s = 1.0 / np.sqrt(2.0)
    half = 1
    while half < buf.shape[0]:
        approx, detail = buf[:half].copy(), buf[half:2 * half].copy()
        buf[0:2 * half:2] = (approx + detail) * s
        buf[1:2 * half:2] = (approx - detail) * s
        half *= 2
    return buf


def local_extrema(h):
    h = np.asarray(h, dtype=np.float64)
    left = h[1:-1] - h[:-2]
    right = h[2:] - h[1:-1]
    maxima = np.flatnonzero((left > 0) & (right <= 0)) + 1
    minima = np.flatnonzero((left < 0) & (right >= 0)) + 1
    return maxima.astype(np.intp), minima.astype(np.intp)
