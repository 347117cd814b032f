"""Numba-compiled kernels for the tiny CNN hot loops.

Contracts match ``_kernels_np`` exactly (including the pooling tie rule:
first maximum in row-major block order wins).
"""

from __future__ import annotations

import numpy as np
from numba import njit


@njit(cache=True)
def conv3x3(x, w, b):
    cin, h, wd = x.shape
    cout = w.shape[0]
    out = np.empty((cout, h, wd))
    for o in range(cout):
        for y in range(h):
            for xx in range(wd):
                acc = b[o]
                for c in range(cin):
                    for ky in range(3):
                        sy = y + ky - 1
                        if sy < 0 or sy >= h:
                            continue
                        for kx in range(3):
                            sx = xx + kx - 1
                            if sx < 0 or sx >= wd:
                                continue
                            acc += x[c, sy, sx] * w[o, c, ky, kx]
                out[o, y, xx] = acc
    return out


@njit(cache=True)
def conv3x3_backward(x, w, gout):
    cin, h, wd = x.shape
    cout = w.shape[0]
    gx = np.zeros((cin, h, wd))
    gw = np.zeros((cout, cin, 3, 3))
    gb = np.zeros(cout)
    for o in range(cout):
        for y in range(h):
            for xx in range(wd):
                g = gout[o, y, xx]
                gb[o] += g
                for c in range(cin):
                    for ky in range(3):
                        sy = y + ky - 1
                        if sy < 0 or sy >= h:
                            continue
                        for kx in range(3):
                            sx = xx + kx - 1
                            if sx < 0 or sx >= wd:
                                continue
                            gw[o, c, ky, kx] += x[c, sy, sx] * g
                            gx[c, sy, sx] += w[o, c, ky, kx] * g
    return gx, gw, gb


@njit(cache=True)
def maxpool2(x):
    c, h, w = x.shape
    ho, wo = h // 2, w // 2
    pooled = np.empty((c, ho, wo))
    argmax = np.empty((c, ho, wo), dtype=np.int64)
    for ch in range(c):
        for oy in range(ho):
            for ox in range(wo):
                best = -np.inf
                bidx = 0
                for dy in range(2):
                    for dx in range(2):
                        y = oy * 2 + dy
                        xx = ox * 2 + dx
                        v = x[ch, y, xx]
                        if v > best:
                            best = v
                            bidx = y * w + xx
                pooled[ch, oy, ox] = best
                argmax[ch, oy, ox] = bidx
    return pooled, argmax


@njit(cache=True)
def maxpool2_backward(gout, argmax, h, w):
    c, ho, wo = gout.shape
    gx = np.zeros((c, h * w))
    for ch in range(c):
        for oy in range(ho):
            for ox in range(wo):
                gx[ch, argmax[ch, oy, ox]] += gout[ch, oy, ox]
    return gx.reshape(c, h, w)
