"""Vectorised NumPy implementations of the hot kernels.

Shapes follow the NCHW convention throughout. Callers validate arguments;
these functions assume contiguous inputs of a common float dtype. The
compiled backend in _core.pyx implements the same contracts; both must
stay interchangeable to within floating-point summation order.
"""

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def conv2d_forward(x, w, b, stride):
    # windows: (N, C, Ho, Wo, kh, kw)
    windows = sliding_window_view(x, (w.shape[2], w.shape[3]), axis=(2, 3))
    windows = windows[:, :, ::stride, ::stride]
    y = np.einsum("ncijuv,fcuv->nfij", windows, w, optimize=True)
    y += b[None, :, None, None]
    return np.ascontiguousarray(y)


def conv2d_backward_input(gy, w, stride, height, width):
    n, _, ho, wo = gy.shape
    _, c, kh, kw = w.shape
    gx = np.zeros((n, c, height, width), dtype=gy.dtype)
    for u in range(kh):
        for v in range(kw):
            patch = np.einsum("nfij,fc->ncij", gy, w[:, :, u, v], optimize=True)
            gx[:, :, u : u + stride * ho : stride, v : v + stride * wo : stride] += patch
    return gx


def conv2d_backward_params(gy, x, kh, kw, stride):
    windows = sliding_window_view(x, (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
    gw = np.einsum("nfij,ncijuv->fcuv", gy, windows, optimize=True)
    gb = gy.sum(axis=(0, 2, 3))
    return np.ascontiguousarray(gw), gb


def maxpool2d_forward(x, k):
    n, c, h, w = x.shape
    ho, wo = h // k, w // k
    trimmed = x[:, :, : ho * k, : wo * k]
    blocks = trimmed.reshape(n, c, ho, k, wo, k).transpose(0, 1, 2, 4, 3, 5)
    flat = blocks.reshape(n, c, ho, wo, k * k)
    # First occurrence wins on ties, matching a row-major scan of the window.
    idx = flat.argmax(axis=-1).astype(np.int32)
    y = np.take_along_axis(flat, idx[..., None].astype(np.int64), axis=-1)[..., 0]
    return np.ascontiguousarray(y), idx


def maxpool2d_backward(gy, idx, k, height, width):
    n, c, ho, wo = gy.shape
    scattered = np.zeros((n, c, ho, wo, k * k), dtype=gy.dtype)
    np.put_along_axis(scattered, idx[..., None].astype(np.int64), gy[..., None], axis=-1)
    blocks = scattered.reshape(n, c, ho, wo, k, k).transpose(0, 1, 2, 4, 3, 5)
    gx = np.zeros((n, c, height, width), dtype=gy.dtype)
    gx[:, :, : ho * k, : wo * k] = blocks.reshape(n, c, ho * k, wo * k)
    return gx
