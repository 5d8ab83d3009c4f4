"""Hot numeric kernels.

Every kernel exists as ``<name>_jit`` (explicit loops, numba-compiled when
available) and ``<name>_numpy`` (vectorised numpy). The public ``<name>``
is bound to one of the two at import time, see :mod:`ascbench._accel`.
Both variants compute the same arithmetic in the same order where that is
cheap to arrange, so they normally agree to the last bit; the tests only
rely on agreement to 1e-12.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from ._accel import USE_NUMBA, njit


def is_power_of_two(n):
    return n >= 1 and (n & (n - 1)) == 0


def bit_reverse_indices(n):
    bits = n.bit_length() - 1
    idx = np.arange(n)
    rev = np.zeros(n, dtype=np.int64)
    for b in range(bits):
        rev |= ((idx >> b) & 1) << (bits - 1 - b)
    return rev


def twiddles(n):
    """exp(-2πik/n) for k < n/2."""
    k = np.arange(n // 2)
    return np.cos(2.0 * np.pi * k / n) - 1j * np.sin(2.0 * np.pi * k / n)


# --------------------------------------------------------------------------
# radix-2 FFT over rows


@njit
def _fft_rows_loops(x, rev, tw):
    m, n = x.shape
    out = np.empty((m, n), dtype=np.complex128)
    for row in range(m):
        for i in range(n):
            out[row, rev[i]] = x[row, i]
        size = 2
        while size <= n:
            half = size // 2
            step = n // size
            for start in range(0, n, size):
                for k in range(half):
                    w = tw[k * step]
                    a = out[row, start + k]
                    b = out[row, start + k + half] * w
                    out[row, start + k] = a + b
                    out[row, start + k + half] = a - b
            size *= 2
    return out


def fft_rows_jit(x):
    x = np.ascontiguousarray(x, dtype=np.complex128)
    n = x.shape[1]
    return _fft_rows_loops(x, bit_reverse_indices(n), twiddles(n))


def fft_rows_numpy(x):
    x = np.asarray(x, dtype=np.complex128)
    m, n = x.shape
    tw = twiddles(n)
    y = x[:, bit_reverse_indices(n)]
    size = 2
    while size <= n:
        half = size // 2
        y = y.reshape(m, n // size, size)
        w = tw[:: n // size][:half]
        a = y[:, :, :half]
        b = y[:, :, half:] * w
        y = np.concatenate([a + b, a - b], axis=2)
        size *= 2
    return y.reshape(m, n)


# --------------------------------------------------------------------------
# im2col / col2im for conv2d; inputs are already zero-padded


@njit
def _im2col_loops(x, kh, kw, stride, ho, wo):
    n, c, _, _ = x.shape
    cols = np.empty((n, ho * wo, c * kh * kw), dtype=np.float64)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                r = oy * wo + ox
                q = 0
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            cols[b, r, q] = x[b, ch, oy * stride + i, ox * stride + j]
                            q += 1
    return cols


@njit
def _col2im_loops(dcols, n, c, h, w, kh, kw, stride, ho, wo):
    dx = np.zeros((n, c, h, w), dtype=np.float64)
    for b in range(n):
        for oy in range(ho):
            for ox in range(wo):
                r = oy * wo + ox
                q = 0
                for ch in range(c):
                    for i in range(kh):
                        for j in range(kw):
                            dx[b, ch, oy * stride + i, ox * stride + j] += dcols[b, r, q]
                            q += 1
    return dx


def _out_size(size, k, stride):
    return (size - k) // stride + 1


def im2col_jit(x, kh, kw, stride):
    x = np.ascontiguousarray(x, dtype=np.float64)
    ho = _out_size(x.shape[2], kh, stride)
    wo = _out_size(x.shape[3], kw, stride)
    return _im2col_loops(x, kh, kw, stride, ho, wo)


def im2col_numpy(x, kh, kw, stride):
    x = np.asarray(x, dtype=np.float64)
    n, c = x.shape[:2]
    win = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    ho, wo = win.shape[2], win.shape[3]
    return np.ascontiguousarray(win.transpose(0, 2, 3, 1, 4, 5)).reshape(n, ho * wo, c * kh * kw)


def col2im_jit(dcols, x_shape, kh, kw, stride):
    n, c, h, w = x_shape
    ho = _out_size(h, kh, stride)
    wo = _out_size(w, kw, stride)
    return _col2im_loops(np.ascontiguousarray(dcols, dtype=np.float64), n, c, h, w, kh, kw, stride, ho, wo)


def col2im_numpy(dcols, x_shape, kh, kw, stride):
    n, c, h, w = x_shape
    ho = _out_size(h, kh, stride)
    wo = _out_size(w, kw, stride)
    d = dcols.reshape(n, ho, wo, c, kh, kw)
    dx = np.zeros(x_shape, dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            dx[:, :, i:i + stride * ho:stride, j:j + stride * wo:stride] += d[:, :, :, :, i, j].transpose(0, 3, 1, 2)
    return dx


# --------------------------------------------------------------------------
# non-overlapping max pooling; ties resolve to the first element in
# row-major window order, matching np.argmax


@njit
def _maxpool_loops(x, p):
    n, c, h, w = x.shape
    ho = h // p
    wo = w // p
    out = np.empty((n, c, ho, wo), dtype=np.float64)
    arg = np.empty((n, c, ho, wo), dtype=np.int64)
    for b in range(n):
        for ch in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    best = x[b, ch, oy * p, ox * p]
                    bi = 0
                    for i in range(p):
                        for j in range(p):
                            v = x[b, ch, oy * p + i, ox * p + j]
                            if v > best:
                                best = v
                                bi = i * p + j
                    out[b, ch, oy, ox] = best
                    arg[b, ch, oy, ox] = bi
    return out, arg


@njit
def _maxpool_back_loops(dout, arg, p, h, w):
    n, c, ho, wo = dout.shape
    dx = np.zeros((n, c, h, w), dtype=np.float64)
    for b in range(n):
        for ch in range(c):
            for oy in range(ho):
                for ox in range(wo):
                    bi = arg[b, ch, oy, ox]
                    dx[b, ch, oy * p + bi // p, ox * p + bi % p] = dout[b, ch, oy, ox]
    return dx


def maxpool_jit(x, p):
    return _maxpool_loops(np.ascontiguousarray(x, dtype=np.float64), p)


def maxpool_numpy(x, p):
    n, c, h, w = x.shape
    ho, wo = h // p, w // p
    win = x[:, :, :ho * p, :wo * p].reshape(n, c, ho, p, wo, p).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho, wo, p * p)
    arg = np.argmax(win, axis=-1)
    out = np.take_along_axis(win, arg[..., None], axis=-1)[..., 0]
    return out, arg


def maxpool_back_jit(dout, arg, p, h, w):
    return _maxpool_back_loops(np.ascontiguousarray(dout, dtype=np.float64), np.ascontiguousarray(arg), p, h, w)


def maxpool_back_numpy(dout, arg, p, h, w):
    n, c, ho, wo = dout.shape
    win = np.zeros((n, c, ho, wo, p * p), dtype=np.float64)
    np.put_along_axis(win, arg[..., None], dout[..., None], axis=-1)
    dx = np.zeros((n, c, h, w), dtype=np.float64)
    dx[:, :, :ho * p, :wo * p] = win.reshape(n, c, ho, wo, p, p).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, ho * p, wo * p)
    return dx


if USE_NUMBA:
    fft_rows = fft_rows_jit
    im2col = im2col_jit
    col2im = col2im_jit
    maxpool = maxpool_jit
    maxpool_back = maxpool_back_jit
else:
    fft_rows = fft_rows_numpy
    im2col = im2col_numpy
    col2im = col2im_numpy
    maxpool = maxpool_numpy
    maxpool_back = maxpool_back_numpy
