"""Independent reference implementations used as test oracles.

Everything here is written straight from the defining formulas (direct
DFT/DCT sums, explicit triangle filters, sliding-window convolutions,
double-loop distances) and never calls into the package's compute paths,
so agreement is evidence rather than tautology.
"""

from __future__ import annotations

import numpy as np

SAMPLE_RATE = 16000


def naive_dft_power(frames: np.ndarray, fft_size: int) -> np.ndarray:
    """|X_k|^2 for k=0..fft_size/2 via the direct DFT definition."""
    squeeze = np.asarray(frames).ndim == 1
    frames = np.atleast_2d(np.asarray(frames, dtype=np.float64))
    n_bins = fft_size // 2 + 1
    n = np.arange(fft_size)
    k = np.arange(n_bins)[:, None]
    angles = -2.0 * np.pi * k * n / fft_size
    cos_m, sin_m = np.cos(angles), np.sin(angles)
    padded = np.zeros((frames.shape[0], fft_size))
    padded[:, : frames.shape[1]] = frames
    re = padded @ cos_m.T
    im = padded @ sin_m.T
    out = re**2 + im**2
    return out[0] if squeeze else out


def naive_dft_power_scalar(frame: np.ndarray, fft_size: int) -> np.ndarray:
    """Pure double-loop DFT power; cross-validates the matrix oracle."""
    frame = np.asarray(frame, dtype=np.float64)
    padded = np.zeros(fft_size)
    padded[: frame.shape[0]] = frame
    out = np.zeros(fft_size // 2 + 1)
    for k in range(fft_size // 2 + 1):
        re = im = 0.0
        for n in range(fft_size):
            angle = -2.0 * np.pi * k * n / fft_size
            re += padded[n] * np.cos(angle)
            im += padded[n] * np.sin(angle)
        out[k] = re * re + im * im
    return out


def mel(f_hz):
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_inv(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def naive_mel_log(
    spectrum: np.ndarray,
    n_filters: int = 40,
    fft_size: int = 1024,
    low_hz: float = 20.0,
    high_hz: float = 8000.0,
    floor: float = 1e-10,
) -> np.ndarray:
    """Log triangular filter energies built edge by edge from the mel scale."""
    edges = mel_inv(np.linspace(mel(low_hz), mel(high_hz), n_filters + 2))
    bins = np.arange(fft_size // 2 + 1) * SAMPLE_RATE / fft_size
    out = np.zeros(n_filters)
    for m in range(n_filters):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        acc = 0.0
        for k, f in enumerate(bins):
            if left < f < center:
                weight = (f - left) / (center - left)
            elif center <= f < right:
                weight = (right - f) / (right - center)
            else:
                weight = 0.0
            if f == center:
                weight = 1.0
            acc += weight * spectrum[k]
        out[m] = np.log(max(acc, floor))
    return out


def naive_dct2(x: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II by double loop."""
    x = np.asarray(x, dtype=np.float64)
    n = x.shape[-1]
    out = np.zeros_like(x)
    flat = np.atleast_2d(x)
    res = np.zeros_like(flat)
    for r in range(flat.shape[0]):
        for k in range(n):
            s = np.sqrt(1.0 / n) if k == 0 else np.sqrt(2.0 / n)
            acc = 0.0
            for i in range(n):
                acc += flat[r, i] * np.cos(np.pi * k * (2 * i + 1) / (2 * n))
            res[r, k] = s * acc
    out[...] = res.reshape(x.shape)
    return out


def naive_mfcc(samples: np.ndarray, n_mfcc: int = 40) -> np.ndarray:
    """Whole pipeline from the definitions: 40 ms / 20 ms Hamming frames on
    the pre-emphasized signal, direct DFT power, mel triangles, DCT-II."""
    x = np.asarray(samples, dtype=np.float64)
    y = np.concatenate(([x[0]], x[1:] - 0.97 * x[:-1]))
    frame_len, stride, fft_size = 640, 320, 1024
    n_frames = (len(x) - frame_len) // stride + 1
    window = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(frame_len) / (frame_len - 1))
    out = np.zeros((n_frames, n_mfcc))
    for t in range(n_frames):
        frame = y[t * stride : t * stride + frame_len] * window
        spec = naive_dft_power(frame, fft_size)
        logmel = naive_mel_log(spec)
        out[t] = naive_dct2(logmel)[:n_mfcc]
    return out


_BULK_CACHE: dict = {}


def naive_mfcc_bulk(samples: np.ndarray, n_mfcc: int = 40) -> np.ndarray:
    """Same pipeline as naive_mfcc with the per-bin/per-coefficient loops
    hoisted into precomputed matrices, for oracle checks over many clips.

    The matrices are assembled by the same explicit loops the scalar oracle
    uses (direct DFT sums, triangle filters, DCT-II cosines); only the
    application is vectorized.
    """
    frame_len, stride, fft_size, n_filters = 640, 320, 1024, 40
    if "mats" not in _BULK_CACHE:
        n_bins = fft_size // 2 + 1
        k = np.arange(n_bins)[:, None]
        n = np.arange(fft_size)[None, :]
        angles = -2.0 * np.pi * k * n / fft_size
        dft_cos, dft_sin = np.cos(angles), np.sin(angles)

        edges = mel_inv(np.linspace(mel(20.0), mel(8000.0), n_filters + 2))
        bins = np.arange(n_bins) * SAMPLE_RATE / fft_size
        tri = np.zeros((n_filters, n_bins))
        for m in range(n_filters):
            left, center, right = edges[m], edges[m + 1], edges[m + 2]
            for b, f in enumerate(bins):
                if left < f < center:
                    tri[m, b] = (f - left) / (center - left)
                elif center <= f < right:
                    tri[m, b] = (right - f) / (right - center)

        dct = np.zeros((n_filters, n_filters))
        for kk in range(n_filters):
            s = np.sqrt(1.0 / n_filters) if kk == 0 else np.sqrt(2.0 / n_filters)
            for i in range(n_filters):
                dct[kk, i] = s * np.cos(np.pi * kk * (2 * i + 1) / (2 * n_filters))
        _BULK_CACHE["mats"] = (dft_cos, dft_sin, tri, dct)
    dft_cos, dft_sin, tri, dct = _BULK_CACHE["mats"]

    x = np.asarray(samples, dtype=np.float64)
    y = np.concatenate(([x[0]], x[1:] - 0.97 * x[:-1]))
    n_frames = (len(x) - frame_len) // stride + 1
    window = 0.54 - 0.46 * np.cos(2 * np.pi * np.arange(frame_len) / (frame_len - 1))
    frames = np.zeros((n_frames, 1024))
    for t in range(n_frames):
        frames[t, :frame_len] = y[t * stride : t * stride + frame_len] * window
    power = (frames @ dft_cos.T) ** 2 + (frames @ dft_sin.T) ** 2
    logmel = np.log(np.maximum(power @ tri.T, 1e-10))
    return (logmel @ dct.T)[:, :n_mfcc]


def naive_conv1d(x, w, stride=1, dilation=1, padding=0):
    """Sliding-window cross-correlation straight from the formula."""
    x = np.asarray(x)
    w = np.asarray(w)
    B, C, L = x.shape
    O, _, K = w.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    lout = (L + 2 * padding - dilation * (K - 1) - 1) // stride + 1
    out = np.zeros((B, O, lout), dtype=x.dtype)
    for b in range(B):
        for o in range(O):
            for t in range(lout):
                acc = x.dtype.type(0)
                for c in range(C):
                    for j in range(K):
                        acc += w[o, c, j] * xp[b, c, t * stride + j * dilation]
                out[b, o, t] = acc
    return out


def naive_conv2d(x, w, stride=(1, 1), padding=(0, 0)):
    x = np.asarray(x)
    w = np.asarray(w)
    B, C, H, W = x.shape
    O, _, kh, kw = w.shape
    sh, sw = stride
    ph, pw = padding
    xp = np.pad(x, ((0, 0), (0, 0), (ph, ph), (pw, pw)))
    ho = (H + 2 * ph - kh) // sh + 1
    wo = (W + 2 * pw - kw) // sw + 1
    out = np.zeros((B, O, ho, wo), dtype=x.dtype)
    for b in range(B):
        for o in range(O):
            for r in range(ho):
                for q in range(wo):
                    acc = x.dtype.type(0)
                    for c in range(C):
                        for i in range(kh):
                            for j in range(kw):
                                acc += w[o, c, i, j] * xp[b, c, r * sh + i, q * sw + j]
                    out[b, o, r, q] = acc
    return out


def naive_sqdist(q, p):
    q, p = np.asarray(q), np.asarray(p)
    out = np.zeros((q.shape[0], p.shape[0]))
    for m in range(q.shape[0]):
        for c in range(p.shape[0]):
            acc = 0.0
            for d in range(q.shape[1]):
                diff = float(q[m, d]) - float(p[c, d])
                acc += diff * diff
            out[m, c] = acc
    return out


def naive_prototypes(embeddings, labels, n_classes):
    embeddings = np.asarray(embeddings, dtype=np.float64)
    labels = np.asarray(labels)
    out = np.zeros((n_classes, embeddings.shape[1]))
    for c in range(n_classes):
        rows = embeddings[labels == c]
        out[c] = rows.mean(axis=0)
    return out


def naive_softmax_neg(distances):
    """Row-wise softmax of negative distances without the package's code."""
    d = np.asarray(distances, dtype=np.float64)
    e = np.exp(-(d - d.min(axis=1, keepdims=True)))
    return e / e.sum(axis=1, keepdims=True)


def fd_gradient(fn, arr, h=1e-4):
    """Elementwise central differences of a scalar function of one array."""
    arr = np.asarray(arr, dtype=np.float64)
    grad = np.zeros_like(arr)
    flat = arr.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        fp = fn(arr)
        flat[i] = orig - h
        fm = fn(arr)
        flat[i] = orig
        gflat[i] = (fp - fm) / (2 * h)
    return grad
