"""Numpy reference implementation of the convolution kernels.

Used as the import-time fallback when the compiled extension is absent.
Convolutions are lowered to matrix products over an im2col buffer, so the
heavy lifting still lands in BLAS.

Layouts (all row-major f32):
    x   (C_in, H, W)
    w   (C_out, C_in, kh, kw)     cross-correlation weights
    y   (C_out, H', W')           H' = (H + 2p - kh) // s + 1

The three kernels cover the whole convolution family: a transposed
convolution forward pass is conv2d_dx with the activation in the role of
the upstream gradient, and its gradients reduce to conv2d_forward /
conv2d_dw with the arguments swapped (see tensor.py).
"""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col(x: np.ndarray, kh: int, kw: int, stride: int, pad: int):
    """Column buffer of shape (H'*W', C_in*kh*kw), plus the output dims."""
    if pad > 0:
        x = np.pad(x, ((0, 0), (pad, pad), (pad, pad)))
    win = sliding_window_view(x, (kh, kw), axis=(1, 2))[:, ::stride, ::stride]
    c, ho, wo = win.shape[:3]
    col = np.ascontiguousarray(win.transpose(1, 2, 0, 3, 4)).reshape(ho * wo, c * kh * kw)
    return col, ho, wo


def conv2d_forward(x: np.ndarray, w: np.ndarray, stride: int, pad: int) -> np.ndarray:
    co, ci, kh, kw = w.shape
    col, ho, wo = _im2col(x, kh, kw, stride, pad)
    y = col @ w.reshape(co, ci * kh * kw).T
    return np.ascontiguousarray(y.T.reshape(co, ho, wo))


def conv2d_dx(dy: np.ndarray, w: np.ndarray, stride: int, pad: int, h: int, w_in: int) -> np.ndarray:
    """Gradient w.r.t. the input: col2im scatter of dy @ w."""
    co, ci, kh, kw = w.shape
    ho, wo = dy.shape[1], dy.shape[2]
    dcol = dy.reshape(co, ho * wo).T @ w.reshape(co, ci * kh * kw)
    dcol = dcol.reshape(ho, wo, ci, kh, kw)
    dxp = np.zeros((ci, h + 2 * pad, w_in + 2 * pad), dtype=np.float32)
    for u in range(kh):
        for v in range(kw):
            dxp[:, u : u + stride * ho : stride, v : v + stride * wo : stride] += (
                dcol[:, :, :, u, v].transpose(2, 0, 1)
            )
    if pad > 0:
        dxp = dxp[:, pad : pad + h, pad : pad + w_in]
    return np.ascontiguousarray(dxp)


def conv2d_dw(dy: np.ndarray, x: np.ndarray, stride: int, pad: int, kh: int, kw: int) -> np.ndarray:
    """Gradient w.r.t. the weights."""
    co = dy.shape[0]
    ci = x.shape[0]
    col, ho, wo = _im2col(x, kh, kw, stride, pad)
    dw = dy.reshape(co, ho * wo) @ col
    return np.ascontiguousarray(dw.reshape(co, ci, kh, kw))
