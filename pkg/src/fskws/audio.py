"""16 kHz mono PCM audio: WAV I/O, tone synthesis, snippets and noise mixing.

Only the narrow format the pipeline consumes is supported on purpose:
RIFF/WAVE containers holding 16-bit little-endian signed PCM, one channel,
16000 Hz. Sample values are mapped to floats by dividing by 32768 so that
-32768 lands exactly on -1.0.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

SAMPLE_RATE = 16000
CLIP_SAMPLES = 16000  # exactly one second
PCM_SCALE = 32768.0


class MalformedWav(ValueError):
    """File is not a well-formed RIFF/WAVE container."""


class UnsupportedFormat(ValueError):
    """WAV is valid but not 16-bit mono 16 kHz PCM."""


class FrequencyAboveNyquist(ValueError):
    """Requested tone frequency is not representable at 16 kHz."""


class TrackTooShort(ValueError):
    """Background track is shorter than one second."""


class LengthMismatch(ValueError):
    """Clips being mixed do not have the same length."""


def _readonly(a: np.ndarray) -> np.ndarray:
    a = np.ascontiguousarray(a, dtype=np.float64)
    a.flags.writeable = False
    return a


@dataclass(frozen=True)
class AudioClip:
    """A mono waveform at 16 kHz with samples in [-1, 1].

    Clips entering the feature pipeline must be exactly one second long
    (16000 samples); loading does not enforce that so short source files
    can be inspected and filtered upstream.
    """

    samples: np.ndarray
    sample_rate_hz: int = SAMPLE_RATE
    source_path: str | None = None

    def __post_init__(self):
        object.__setattr__(self, "samples", _readonly(self.samples))
        peak = float(np.max(np.abs(self.samples))) if self.samples.size else 0.0
        if peak > 1.0:
            raise ValueError(f"sample amplitude {peak} outside [-1, 1]")

    def __len__(self) -> int:
        return int(self.samples.shape[0])

    @property
    def is_one_second(self) -> bool:
        return len(self) == CLIP_SAMPLES


@dataclass(frozen=True)
class BackgroundTrack:
    """A noise recording of at least one second, used to cut snippets from."""

    samples: np.ndarray
    source_path: str

    def __post_init__(self):
        object.__setattr__(self, "samples", _readonly(self.samples))
        if len(self.samples) < CLIP_SAMPLES:
            raise TrackTooShort(
                f"{self.source_path}: {len(self.samples)} samples < {CLIP_SAMPLES}"
            )

    def __len__(self) -> int:
        return int(self.samples.shape[0])


@dataclass(frozen=True)
class WavInfo:
    """Header-only probe of a WAV file (no sample data decoded)."""

    n_samples: int
    sample_rate_hz: int
    channels: int
    bits_per_sample: int


def _parse_wav(raw: bytes, path: str, want_data: bool):
    if len(raw) < 12:
        raise MalformedWav(f"{path}: too short for a RIFF header")
    if raw[0:4] != b"RIFF" or raw[8:12] != b"WAVE":
        raise MalformedWav(f"{path}: missing RIFF/WAVE magic")

    fmt = None
    data = None
    pos = 12
    while pos + 8 <= len(raw):
        cid = raw[pos : pos + 4]
        (size,) = struct.unpack_from("<I", raw, pos + 4)
        body = pos + 8
        if body + size > len(raw):
            raise MalformedWav(f"{path}: chunk {cid!r} overruns file")
        if cid == b"fmt ":
            if size < 16:
                raise MalformedWav(f"{path}: fmt chunk truncated")
            fmt = struct.unpack_from("<HHIIHH", raw, body)
        elif cid == b"data" and data is None:
            data = (body, size)
        # any other chunk (LIST, fact, ...) is skipped
        pos = body + size + (size & 1)

    if fmt is None or data is None:
        raise MalformedWav(f"{path}: missing fmt or data chunk")

    audio_format, channels, rate, _byte_rate, _block_align, bits = fmt
    if audio_format != 1 or bits != 16 or channels != 1 or rate != SAMPLE_RATE:
        raise UnsupportedFormat(
            f"{path}: need 16-bit mono {SAMPLE_RATE} Hz PCM, got format={audio_format} "
            f"channels={channels} rate={rate} bits={bits}"
        )

    start, size = data
    n = size // 2
    if not want_data:
        return WavInfo(n, rate, channels, bits)
    pcm = np.frombuffer(raw, dtype="<i2", count=n, offset=start)
    return pcm.astype(np.float64) / PCM_SCALE


def load_wav(path) -> AudioClip:
    """Load a 16-bit mono 16 kHz PCM WAV file as an AudioClip."""
    p = Path(path)
    samples = _parse_wav(p.read_bytes(), str(p), want_data=True)
    return AudioClip(samples=samples, source_path=str(p))


def load_background_track(path) -> BackgroundTrack:
    """Load a background noise WAV; must be at least one second long."""
    p = Path(path)
    samples = _parse_wav(p.read_bytes(), str(p), want_data=True)
    return BackgroundTrack(samples=samples, source_path=str(p))


def wav_info(path) -> WavInfo:
    """Probe a WAV header without reading the sample payload.

    Walks the chunk list with seeks so scanning a large dataset stays
    cheap; raises the same errors as load_wav for bad containers.
    """
    p = Path(path)
    with open(p, "rb") as f:
        head = f.read(12)
        if len(head) < 12 or head[0:4] != b"RIFF" or head[8:12] != b"WAVE":
            raise MalformedWav(f"{p}: missing RIFF/WAVE magic")
        fmt = None
        data_size = None
        while True:
            hdr = f.read(8)
            if len(hdr) < 8:
                break
            cid = hdr[0:4]
            (size,) = struct.unpack("<I", hdr[4:8])
            if cid == b"fmt ":
                body = f.read(min(size, 16))
                if len(body) < 16:
                    raise MalformedWav(f"{p}: fmt chunk truncated")
                fmt = struct.unpack("<HHIIHH", body)
                f.seek(size - len(body) + (size & 1), 1)
            elif cid == b"data" and data_size is None:
                data_size = size
                f.seek(size + (size & 1), 1)
            else:
                f.seek(size + (size & 1), 1)
    if fmt is None or data_size is None:
        raise MalformedWav(f"{p}: missing fmt or data chunk")
    audio_format, channels, rate, _br, _ba, bits = fmt
    if audio_format != 1 or bits != 16 or channels != 1 or rate != SAMPLE_RATE:
        raise UnsupportedFormat(
            f"{p}: need 16-bit mono {SAMPLE_RATE} Hz PCM, got format={audio_format} "
            f"channels={channels} rate={rate} bits={bits}"
        )
    return WavInfo(data_size // 2, rate, channels, bits)


def save_wav(path, samples: np.ndarray) -> None:
    """Write samples as 16-bit mono 16 kHz PCM.

    Quantization rounds to nearest and clips to the int16 range; this is
    the only lossy step, so load_wav(save_wav(x)) reproduces the integer
    PCM exactly.
    """
    s = np.asarray(samples, dtype=np.float64)
    pcm = np.clip(np.rint(s * PCM_SCALE), -32768, 32767).astype("<i2")
    body = pcm.tobytes()
    hdr = b"RIFF" + struct.pack("<I", 36 + len(body)) + b"WAVE"
    hdr += b"fmt " + struct.pack(
        "<IHHIIHH", 16, 1, 1, SAMPLE_RATE, SAMPLE_RATE * 2, 2, 16
    )
    hdr += b"data" + struct.pack("<I", len(body))
    Path(path).write_bytes(hdr + body)


def generate_tone(freq_hz: float, duration_s: float, amplitude: float) -> AudioClip:
    """Synthesize amplitude * sin(2*pi*freq*n/16000) for test fixtures."""
    if freq_hz >= SAMPLE_RATE / 2:
        raise FrequencyAboveNyquist(f"{freq_hz} Hz >= {SAMPLE_RATE // 2} Hz")
    if freq_hz <= 0:
        raise ValueError("frequency must be positive")
    if not 0 <= amplitude <= 1.0:
        raise ValueError("amplitude must be in [0, 1]")
    n = int(round(duration_s * SAMPLE_RATE))
    t = np.arange(n, dtype=np.float64)
    return AudioClip(samples=amplitude * np.sin(2.0 * np.pi * freq_hz * t / SAMPLE_RATE))


def random_snippet(track: BackgroundTrack, rng: np.random.Generator) -> AudioClip:
    """Cut a uniformly-placed one-second window out of a background track."""
    if len(track) < CLIP_SAMPLES:
        raise TrackTooShort(f"{track.source_path}: {len(track)} samples")
    offset = int(rng.integers(0, len(track) - CLIP_SAMPLES + 1))
    return AudioClip(
        samples=track.samples[offset : offset + CLIP_SAMPLES],
        source_path=track.source_path,
    )


def mix_background(clip: AudioClip, snippet: AudioClip, volume: float) -> AudioClip:
    """Add volume-scaled noise to a clip, clamping the sum to [-1, 1]."""
    if len(clip) != len(snippet):
        raise LengthMismatch(f"{len(clip)} vs {len(snippet)} samples")
    if not 0 <= volume <= 1:
        raise ValueError("volume must be in [0, 1]")
    mixed = np.clip(clip.samples + volume * snippet.samples, -1.0, 1.0)
    return AudioClip(samples=mixed, source_path=clip.source_path)
