"""Pure-numpy kernels: the fallback path when numba is unavailable or
FSKWS_BACKEND=numpy.

Convolution forward passes accumulate one tap at a time in (channel, tap)
order so every output element sees the exact same sequence of rounded
multiply-adds as the jitted loops; the two backends agree bit for bit.
Inputs arrive pre-padded; padding lives in `tensor`.
"""

from __future__ import annotations

import numpy as np


def conv1d_forward(xp: np.ndarray, w: np.ndarray, stride: int, dilation: int) -> np.ndarray:
    B, C, Lp = xp.shape
    O, _, K = w.shape
    lout = (Lp - dilation * (K - 1) - 1) // stride + 1
    out = np.zeros((B, O, lout), dtype=xp.dtype)
    span = (lout - 1) * stride + 1
    for c in range(C):
        for j in range(K):
            xs = xp[:, c, j * dilation : j * dilation + span : stride]
            out += w[None, :, c, j, None] * xs[:, None, :]
    return out


def conv1d_backward_input(
    gout: np.ndarray, w: np.ndarray, stride: int, dilation: int, lp: int
) -> np.ndarray:
    B, O, lout = gout.shape
    _, C, K = w.shape
    gxp = np.zeros((B, C, lp), dtype=gout.dtype)
    span = (lout - 1) * stride + 1
    for j in range(K):
        contrib = np.tensordot(gout, w[:, :, j], axes=([1], [0]))  # (B, lout, C)
        gxp[:, :, j * dilation : j * dilation + span : stride] += contrib.transpose(0, 2, 1)
    return gxp


def conv1d_backward_weight(
    gout: np.ndarray, xp: np.ndarray, stride: int, dilation: int, k: int
) -> np.ndarray:
    B, O, lout = gout.shape
    _, C, _ = xp.shape
    gw = np.empty((O, C, k), dtype=gout.dtype)
    span = (lout - 1) * stride + 1
    for j in range(k):
        xs = xp[:, :, j * dilation : j * dilation + span : stride]  # (B, C, lout)
        gw[:, :, j] = np.tensordot(gout, xs, axes=([0, 2], [0, 2]))
    return gw


def conv2d_forward(xp: np.ndarray, w: np.ndarray, sh: int, sw: int) -> np.ndarray:
    B, C, Hp, Wp = xp.shape
    O, _, kh, kw = w.shape
    ho = (Hp - kh) // sh + 1
    wo = (Wp - kw) // sw + 1
    out = np.zeros((B, O, ho, wo), dtype=xp.dtype)
    hspan = (ho - 1) * sh + 1
    wspan = (wo - 1) * sw + 1
    for c in range(C):
        for i in range(kh):
            for j in range(kw):
                xs = xp[:, c, i : i + hspan : sh, j : j + wspan : sw]
                out += w[None, :, c, i, j, None, None] * xs[:, None, :, :]
    return out


def conv2d_backward_input(
    gout: np.ndarray, w: np.ndarray, sh: int, sw: int, hp: int, wp: int
) -> np.ndarray:
    B, O, ho, wo = gout.shape
    _, C, kh, kw = w.shape
    gxp = np.zeros((B, C, hp, wp), dtype=gout.dtype)
    hspan = (ho - 1) * sh + 1
    wspan = (wo - 1) * sw + 1
    for i in range(kh):
        for j in range(kw):
            contrib = np.tensordot(gout, w[:, :, i, j], axes=([1], [0]))  # (B, ho, wo, C)
            gxp[:, :, i : i + hspan : sh, j : j + wspan : sw] += contrib.transpose(0, 3, 1, 2)
    return gxp


def conv2d_backward_weight(
    gout: np.ndarray, xp: np.ndarray, sh: int, sw: int, kh: int, kw: int
) -> np.ndarray:
    B, O, ho, wo = gout.shape
    _, C, Hp, Wp = xp.shape
    gw = np.empty((O, C, kh, kw), dtype=gout.dtype)
    hspan = (ho - 1) * sh + 1
    wspan = (wo - 1) * sw + 1
    for i in range(kh):
        for j in range(kw):
            xs = xp[:, :, i : i + hspan : sh, j : j + wspan : sw]  # (B, C, ho, wo)
            gw[:, :, i, j] = np.tensordot(gout, xs, axes=([0, 2, 3], [0, 2, 3]))
    return gw


def maxpool2d_forward(x: np.ndarray, kh: int, kw: int, sh: int, sw: int):
    B, C, H, W = x.shape
    ho = (H - kh) // sh + 1
    wo = (W - kw) // sw + 1
    hspan = (ho - 1) * sh + 1
    wspan = (wo - 1) * sw + 1
    out = x[:, :, 0:hspan:sh, 0:wspan:sw].copy()
    rows = sh * np.arange(ho)
    cols = sw * np.arange(wo)
    idx = np.broadcast_to((rows[:, None] * W + cols[None, :]), (B, C, ho, wo)).copy()
    for i in range(kh):
        for j in range(kw):
            if i == 0 and j == 0:
                continue
            cand = x[:, :, i : i + hspan : sh, j : j + wspan : sw]
            flat = (rows[:, None] + i) * W + (cols[None, :] + j)
            better = cand > out
            out = np.where(better, cand, out)
            idx = np.where(better, flat, idx)
    return out, idx.astype(np.int64)


def maxpool2d_backward(gout: np.ndarray, idx: np.ndarray, h: int, w: int) -> np.ndarray:
    B, C, ho, wo = gout.shape
    gx = np.zeros((B, C, h * w), dtype=gout.dtype)
    flat_idx = idx.reshape(B, C, ho * wo)
    np.add.at(
        gx,
        (np.arange(B)[:, None, None], np.arange(C)[None, :, None], flat_idx),
        gout.reshape(B, C, ho * wo),
    )
    return gx.reshape(B, C, h, w)
