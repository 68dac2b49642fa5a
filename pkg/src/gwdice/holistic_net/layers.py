"""Forward/backward primitives on channel-last float64 arrays ``(N, H, W, C)``."""

from __future__ import annotations

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view


def _im2col3(x):
    n, h, w, c = x.shape
    xp = np.pad(x, ((0, 0), (1, 1), (1, 1), (0, 0)))
    win = sliding_window_view(xp, (3, 3), axis=(1, 2))  # (N, H, W, C, 3, 3)
    return win.reshape(n * h * w, c * 9)


def conv3x3_forward(x, w, b):
    """'Same' 3x3 convolution; ``w`` has shape (C_out, C_in, 3, 3)."""
    n, h, wd, _ = x.shape
    cols = _im2col3(x)
    wm = w.reshape(w.shape[0], -1)
    out = cols @ wm.T + b
    return out.reshape(n, h, wd, w.shape[0]), (cols, x.shape)


def conv3x3_backward(dout, w, cache):
    cols, xshape = cache
    n, h, wd, c = xshape
    d2 = dout.reshape(-1, w.shape[0])
    wm = w.reshape(w.shape[0], -1)
    dw = (d2.T @ cols).reshape(w.shape)
    db = d2.sum(axis=0)
    dcols = (d2 @ wm).reshape(n, h, wd, c, 3, 3)
    dxp = np.zeros((n, h + 2, wd + 2, c))
    for i in range(3):
        for j in range(3):
            dxp[:, i : i + h, j : j + wd, :] += dcols[..., i, j]
    return dxp[:, 1:-1, 1:-1, :], dw, db


def conv1x1_forward(x, w, b):
    """Pointwise convolution; ``w`` has shape (C_out, C_in)."""
    return x @ w.T + b, x


def conv1x1_backward(dout, w, x):
    c_out = w.shape[0]
    d2 = dout.reshape(-1, c_out)
    dw = d2.T @ x.reshape(-1, w.shape[1])
    return dout @ w, dw, d2.sum(axis=0)


def elu_forward(x):
    y = np.where(x > 0, x, np.expm1(np.minimum(x, 0)))
    return y, y


def elu_backward(dout, y):
    return dout * np.where(y > 0, 1.0, y + 1.0)


def maxpool2_forward(x):
    n, h, w, c = x.shape
    r = x.reshape(n, h // 2, 2, w // 2, 2, c).transpose(0, 1, 3, 5, 2, 4).reshape(n, h // 2, w // 2, c, 4)
    idx = np.argmax(r, axis=-1)[..., None]
    out = np.take_along_axis(r, idx, axis=-1)[..., 0]
    return out, (idx, x.shape)


def maxpool2_backward(dout, cache):
    idx, (n, h, w, c) = cache
    dr = np.zeros(dout.shape + (4,))
    np.put_along_axis(dr, idx, dout[..., None], axis=-1)
    return dr.reshape(n, h // 2, w // 2, c, 2, 2).transpose(0, 1, 4, 2, 5, 3).reshape(n, h, w, c)


def upsample_forward(x, factor: int):
    if factor == 1:
        return x
    return np.repeat(np.repeat(x, factor, axis=1), factor, axis=2)


def upsample_backward(dout, factor: int):
    if factor == 1:
        return dout
    n, h, w, c = dout.shape
    return dout.reshape(n, h // factor, factor, w // factor, factor, c).sum(axis=(2, 4))


def softmax(z):
    e = np.exp(z - z.max(axis=-1, keepdims=True))
    return e / e.sum(axis=-1, keepdims=True)


def softmax_backward(dp, p):
    return p * (dp - np.sum(dp * p, axis=-1, keepdims=True))
