"""MFCC front end: one-second clip -> 49x40 coefficient matrix.

The stages are the classic chain: pre-emphasis, 40 ms Hamming-windowed
frames every 20 ms, 1024-point real FFT power spectrum, 40 triangular mel
filters between 20 Hz and 8 kHz, log with a floor, orthonormal DCT-II.
All arithmetic is float64; quantization to float32 happens only where the
matrices enter a network batch.

A matrix can be carried in two layouts: ``frame-major`` (49 frames x 40
coefficients, what the 2-D baseline nets consume as an image) and
``temporal-conv`` (40 coefficient channels over a 49-step time axis, what
the 1-D residual nets consume).
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import lru_cache

import numpy as np

from .audio import CLIP_SAMPLES, SAMPLE_RATE, AudioClip

LAYOUT_FRAMES = "frame-major"
LAYOUT_TEMPORAL = "temporal-conv"


class WrongClipLength(ValueError):
    """Clip entering the feature pipeline is not exactly one second."""


class AlreadyReshaped(ValueError):
    """reshape_for_temporal_conv applied to a temporal-conv matrix."""


@dataclass(frozen=True)
class FeatureConfig:
    frame_len_ms: int = 40
    stride_ms: int = 20
    n_mfcc: int = 40
    n_mel_filters: int = 40
    fft_size: int = 1024
    preemphasis: float = 0.97
    window: str = "hamming"
    mel_low_hz: float = 20.0
    mel_high_hz: float = 8000.0
    log_floor: float = 1e-10

    @property
    def frame_len(self) -> int:
        return self.frame_len_ms * SAMPLE_RATE // 1000  # 640

    @property
    def stride(self) -> int:
        return self.stride_ms * SAMPLE_RATE // 1000  # 320

    @property
    def n_frames(self) -> int:
        return (CLIP_SAMPLES - self.frame_len) // self.stride + 1  # 49

    def __post_init__(self):
        if self.frame_len > self.fft_size:
            raise ValueError("frame longer than FFT size")
        if self.n_mfcc > self.n_mel_filters:
            raise ValueError("more cepstral coefficients than mel filters")
        if self.window != "hamming":
            raise ValueError(f"unsupported window {self.window!r}")


@dataclass(frozen=True)
class FeatureMatrix:
    """MFCC values plus their layout flag.

    frame-major: values[t, f] = coefficient f of frame t, shape (49, 40).
    temporal-conv: values[f, t], shape (40, 49) - coefficients as channels.
    """

    values: np.ndarray
    layout: str = LAYOUT_FRAMES

    def __post_init__(self):
        v = np.ascontiguousarray(self.values, dtype=np.float64)
        v.flags.writeable = False
        object.__setattr__(self, "values", v)
        if not np.all(np.isfinite(v)):
            raise ValueError("non-finite feature values")
        if self.layout not in (LAYOUT_FRAMES, LAYOUT_TEMPORAL):
            raise ValueError(f"unknown layout {self.layout!r}")


def hamming_window(n: int) -> np.ndarray:
    """Symmetric Hamming window 0.54 - 0.46 cos(2 pi k / (n-1))."""
    k = np.arange(n, dtype=np.float64)
    return 0.54 - 0.46 * np.cos(2.0 * np.pi * k / (n - 1))


def frame_signal(clip: AudioClip, cfg: FeatureConfig) -> np.ndarray:
    """Cut a one-second clip into windowed frames, shape (49, 640).

    Pre-emphasis y[n] = x[n] - preemphasis * x[n-1] is applied to the whole
    clip first (y[0] = x[0]); each frame then gets the Hamming window.
    """
    if len(clip) != CLIP_SAMPLES:
        raise WrongClipLength(f"need {CLIP_SAMPLES} samples, got {len(clip)}")
    x = clip.samples
    y = np.empty_like(x)
    y[0] = x[0]
    y[1:] = x[1:] - cfg.preemphasis * x[:-1]

    frames = np.empty((cfg.n_frames, cfg.frame_len), dtype=np.float64)
    for t in range(cfg.n_frames):
        start = t * cfg.stride
        frames[t] = y[start : start + cfg.frame_len]
    return frames * hamming_window(cfg.frame_len)


def power_spectrum(frame: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """|FFT|^2 of a zero-padded frame, bins 0..fft_size/2 inclusive."""
    frame = np.asarray(frame, dtype=np.float64)
    if frame.shape[-1] > cfg.fft_size:
        raise ValueError("frame longer than FFT size")
    spec = np.fft.rfft(frame, n=cfg.fft_size, axis=-1)
    return (spec.real**2 + spec.imag**2)


@lru_cache(maxsize=8)
def _mel_matrix_cached(cfg: FeatureConfig) -> np.ndarray:
    return _build_mel_matrix(cfg)


def mel_scale(f_hz):
    """mel(f) = 2595 log10(1 + f/700)."""
    return 2595.0 * np.log10(1.0 + np.asarray(f_hz, dtype=np.float64) / 700.0)


def mel_to_hz(m):
    return 700.0 * (10.0 ** (np.asarray(m, dtype=np.float64) / 2595.0) - 1.0)


def mel_filter_centers(cfg: FeatureConfig) -> np.ndarray:
    """Edge frequencies of the triangular filters: n_mel_filters + 2 points
    uniformly spaced on the mel scale between mel_low_hz and mel_high_hz.

    Filter m spans (edges[m], edges[m+2]) with its apex at edges[m+1], so
    adjacent filters overlap by half their base.
    """
    lo, hi = mel_scale(cfg.mel_low_hz), mel_scale(cfg.mel_high_hz)
    return mel_to_hz(np.linspace(lo, hi, cfg.n_mel_filters + 2))


def _build_mel_matrix(cfg: FeatureConfig) -> np.ndarray:
    n_bins = cfg.fft_size // 2 + 1
    bin_hz = np.arange(n_bins, dtype=np.float64) * SAMPLE_RATE / cfg.fft_size
    edges = mel_filter_centers(cfg)
    weights = np.zeros((cfg.n_mel_filters, n_bins), dtype=np.float64)
    for m in range(cfg.n_mel_filters):
        left, center, right = edges[m], edges[m + 1], edges[m + 2]
        rising = (bin_hz - left) / (center - left)
        falling = (right - bin_hz) / (right - center)
        weights[m] = np.maximum(0.0, np.minimum(rising, falling))
    return weights


def mel_filterbank(spectrum: np.ndarray, cfg: FeatureConfig) -> np.ndarray:
    """Floor-protected log of the triangular filter energies."""
    energies = np.asarray(spectrum, dtype=np.float64) @ _mel_matrix_cached(cfg).T
    return np.log(np.maximum(energies, cfg.log_floor))


@lru_cache(maxsize=8)
def _dct_matrix(n: int) -> np.ndarray:
    # Orthonormal DCT-II: c[k] = s(k) sum_n x[n] cos(pi k (2n+1) / (2N))
    k = np.arange(n, dtype=np.float64)[:, None]
    m = np.arange(n, dtype=np.float64)[None, :]
    mat = np.cos(np.pi * k * (2.0 * m + 1.0) / (2.0 * n))
    mat[0] *= np.sqrt(1.0 / n)
    mat[1:] *= np.sqrt(2.0 / n)
    return mat


def dct2(log_mels: np.ndarray) -> np.ndarray:
    """Orthonormal DCT-II along the last axis."""
    x = np.asarray(log_mels, dtype=np.float64)
    return x @ _dct_matrix(x.shape[-1]).T


def mfcc(clip: AudioClip, cfg: FeatureConfig = FeatureConfig()) -> FeatureMatrix:
    """Full front end: frames -> power spectrum -> log mels -> DCT-II."""
    frames = frame_signal(clip, cfg)
    spec = power_spectrum(frames, cfg)
    logmels = mel_filterbank(spec, cfg)
    coeffs = dct2(logmels)[:, : cfg.n_mfcc]
    return FeatureMatrix(values=coeffs, layout=LAYOUT_FRAMES)


def reshape_for_temporal_conv(m: FeatureMatrix) -> FeatureMatrix:
    """Turn the coefficient axis into channels over the frame-time axis."""
    if m.layout == LAYOUT_TEMPORAL:
        raise AlreadyReshaped("matrix is already in temporal-conv layout")
    return FeatureMatrix(values=m.values.T, layout=LAYOUT_TEMPORAL)


def reshape_to_frame_major(m: FeatureMatrix) -> FeatureMatrix:
    """Inverse of reshape_for_temporal_conv."""
    if m.layout == LAYOUT_FRAMES:
        raise AlreadyReshaped("matrix is already in frame-major layout")
    return FeatureMatrix(values=m.values.T, layout=LAYOUT_FRAMES)
