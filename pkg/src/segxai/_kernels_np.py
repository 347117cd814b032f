"""Pure-numpy reference kernels for the tiny CNN.

Same contracts as the numba kernels in ``_kernels_nb``; selected when
numba is unavailable or ``SEGXAI_NO_NUMBA=1`` is set.  Layout is NCHW
per image (no batch axis), convolutions are 3x3 with zero padding 1.
"""

from __future__ import annotations

import numpy as np


def _pad1(x: np.ndarray) -> np.ndarray:
    return np.pad(x, ((0, 0), (1, 1), (1, 1)))


def _windows(xp: np.ndarray, h: int, w: int) -> np.ndarray:
    # (C, H, W, 3, 3) sliding views over the padded input.
    s = xp.strides
    return np.lib.stride_tricks.as_strided(
        xp, shape=(xp.shape[0], h, w, 3, 3), strides=(s[0], s[1], s[2], s[1], s[2])
    )


def conv3x3(x: np.ndarray, w: np.ndarray, b: np.ndarray) -> np.ndarray:
    """3x3 same-convolution: (Cin,H,W) x (Cout,Cin,3,3) -> (Cout,H,W)."""
    _, h, wd = x.shape
    win = _windows(_pad1(x), h, wd)
    out = np.einsum("chwij,ocij->ohw", win, w, optimize=True)
    return out + b[:, None, None]


def conv3x3_backward(x: np.ndarray, w: np.ndarray, gout: np.ndarray):
    """Gradients of a 3x3 same-convolution.

    Returns (gx, gw, gb) for upstream gradient gout of shape (Cout,H,W).
    """
    _, h, wd = x.shape
    win = _windows(_pad1(x), h, wd)
    gw = np.einsum("chwij,ohw->ocij", win, gout, optimize=True)
    gb = gout.sum(axis=(1, 2))
    # Input gradient: full correlation of gout with flipped kernels.
    gpad = _pad1(gout)
    gwin = _windows(gpad, h, wd)
    wflip = w[:, :, ::-1, ::-1]
    gx = np.einsum("ohwij,ocij->chw", gwin, wflip, optimize=True)
    return gx, gw, gb


def maxpool2(x: np.ndarray):
    """2x2 max pooling with stride 2; odd trailing rows/cols are dropped.

    Returns (pooled, argmax) where argmax holds flat (h,w) indices into x
    per output cell, with ties resolved to the smallest index.
    """
    c, h, w = x.shape
    ho, wo = h // 2, w // 2
    xt = x[:, : ho * 2, : wo * 2].reshape(c, ho, 2, wo, 2).transpose(0, 1, 3, 2, 4)
    blocks = xt.reshape(c, ho, wo, 4)
    local = blocks.argmax(axis=3)
    pooled = np.take_along_axis(blocks, local[..., None], axis=3)[..., 0]
    oy, ox = np.meshgrid(np.arange(ho), np.arange(wo), indexing="ij")
    rows = oy[None] * 2 + local // 2
    cols = ox[None] * 2 + local % 2
    argmax = rows * w + cols
    return pooled, argmax


def maxpool2_backward(gout: np.ndarray, argmax: np.ndarray, h: int, w: int) -> np.ndarray:
    c = gout.shape[0]
    gx = np.zeros((c, h * w))
    for ch in range(c):
        np.add.at(gx[ch], argmax[ch].ravel(), gout[ch].ravel())
    return gx.reshape(c, h, w)
