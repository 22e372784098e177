"""Numba-jitted forward kernels (the default hot path).

Forward convolutions accumulate straight into the output element so
float32 stays float32 tap by tap; together with the fixed (channel, tap)
accumulation order this keeps results bit-identical to the numpy fallback.
No fastmath, no parallel: reassociation would break that contract. A
stride-1 specialization spells the unit stride out so LLVM vectorizes the
contiguous time sweeps.

Backward convolutions are not jitted at all: they are plain GEMMs, and the
BLAS formulations in `_kernels_numpy` beat scalar jitted loops by 6-10x
(see benchmarks/bench_kernels.py), so both backends share them.
"""

from __future__ import annotations

import numpy as np
from numba import njit

from ._kernels_numpy import (  # noqa: F401  (shared BLAS backward path)
    conv1d_backward_input,
    conv1d_backward_weight,
    conv2d_backward_input,
    conv2d_backward_weight,
)


@njit(cache=True)
def conv1d_forward(xp, w, stride, dilation):
    B, C, Lp = xp.shape
    O, _, K = w.shape
    lout = (Lp - dilation * (K - 1) - 1) // stride + 1
    out = np.zeros((B, O, lout), dtype=xp.dtype)
    for b in range(B):
        for o in range(O):
            for c in range(C):
                for j in range(K):
                    wv = w[o, c, j]
                    base = j * dilation
                    if stride == 1:
                        for t in range(lout):
                            out[b, o, t] += wv * xp[b, c, base + t]
                    else:
                        for t in range(lout):
                            out[b, o, t] += wv * xp[b, c, base + t * stride]
    return out


@njit(cache=True)
def conv2d_forward(xp, w, sh, sw):
    B, C, Hp, Wp = xp.shape
    O, _, kh, kw = w.shape
    ho = (Hp - kh) // sh + 1
    wo = (Wp - kw) // sw + 1
    out = np.zeros((B, O, ho, wo), dtype=xp.dtype)
    for b in range(B):
        for o in range(O):
            for c in range(C):
                for i in range(kh):
                    for j in range(kw):
                        wv = w[o, c, i, j]
                        for r in range(ho):
                            xr = r * sh + i
                            if sw == 1:
                                for q in range(wo):
                                    out[b, o, r, q] += wv * xp[b, c, xr, j + q]
                            else:
                                for q in range(wo):
                                    out[b, o, r, q] += wv * xp[b, c, xr, j + q * sw]
    return out


@njit(cache=True)
def maxpool2d_forward(x, kh, kw, sh, sw):
    B, C, H, W = x.shape
    ho = (H - kh) // sh + 1
    wo = (W - kw) // sw + 1
    out = np.empty((B, C, ho, wo), dtype=x.dtype)
    idx = np.empty((B, C, ho, wo), dtype=np.int64)
    for b in range(B):
        for c in range(C):
            for r in range(ho):
                for q in range(wo):
                    best = x[b, c, r * sh, q * sw]
                    besti = r * sh * W + q * sw
                    for i in range(kh):
                        for j in range(kw):
                            v = x[b, c, r * sh + i, q * sw + j]
                            if v > best:
                                best = v
                                besti = (r * sh + i) * W + (q * sw + j)
                    out[b, c, r, q] = best
                    idx[b, c, r, q] = besti
    return out, idx


@njit(cache=True)
def maxpool2d_backward(gout, idx, h, w):
    B, C, ho, wo = gout.shape
    gx = np.zeros((B, C, h, w), dtype=gout.dtype)
    for b in range(B):
        for c in range(C):
            for r in range(ho):
                for q in range(wo):
                    flat = idx[b, c, r, q]
                    gx[b, c, flat // w, flat % w] += gout[b, c, r, q]
    return gx
