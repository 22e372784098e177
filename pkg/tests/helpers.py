"""Shared fixtures-in-code: synthetic tone datasets and tiny fake
Speech Commands trees, so the suite runs without the real download."""

from __future__ import annotations

from pathlib import Path

import numpy as np

from fskws import audio
from fskws.dataset import (
    PHASE_TEST,
    PHASE_TRAIN,
    PHASE_VAL,
    Manifest,
    ManifestEntry,
    load_manifest,
    save_manifest,
)
from fskws.protonet import ROLE_CORE, ROLE_SILENCE, ROLE_UNKNOWN

# nominal tone frequency per toy keyword; phases keep disjoint keyword sets
TONE_KEYWORDS = {
    "hz0200": (200.0, PHASE_TRAIN),
    "hz0600": (600.0, PHASE_TRAIN),
    "hz1100": (1100.0, PHASE_TRAIN),
    "hz2000": (2000.0, PHASE_TRAIN),
    "hz0350": (350.0, PHASE_VAL),
    "hz3000": (3000.0, PHASE_VAL),
    "hz0450": (450.0, PHASE_TEST),
    "hz5000": (5000.0, PHASE_TEST),
}


def jittered_tone(freq: float, rng: np.random.Generator) -> np.ndarray:
    f = freq * (1.0 + rng.uniform(-0.05, 0.05))
    amp = rng.uniform(0.3, 0.9)
    t = np.arange(audio.CLIP_SAMPLES) / audio.SAMPLE_RATE
    return amp * np.sin(2 * np.pi * f * t)


def make_tone_manifest(
    root,
    per_keyword: int = 20,
    seed: int = 0,
    keywords: dict | None = None,
    with_background: bool = False,
    with_unknown: bool = False,
    with_silence: bool = False,
) -> Manifest:
    """Write a playable toy dataset of jittered tones plus its manifest."""
    root = Path(root)
    rng = np.random.default_rng(seed)
    entries = []
    keywords = keywords or TONE_KEYWORDS
    for kw, (freq, phase) in keywords.items():
        kdir = root / kw
        kdir.mkdir(parents=True, exist_ok=True)
        for i in range(per_keyword):
            path = kdir / f"spk{i:03d}_nohash_0.wav"
            audio.save_wav(path, jittered_tone(freq, rng))
            entries.append(ManifestEntry(
                path=str(path.relative_to(root)), keyword=kw, role=ROLE_CORE,
                phase=phase, speaker_id=f"spk{i:03d}"))

    background = []
    if with_background or with_silence:
        bdir = root / "_background_noise_"
        bdir.mkdir(parents=True, exist_ok=True)
        for j in range(2):
            path = bdir / f"noise{j}.wav"
            audio.save_wav(path, 0.4 * rng.uniform(-1, 1, 2 * audio.CLIP_SAMPLES))
            background.append(str(path.relative_to(root)))

    if with_unknown:
        # unknown keywords must appear in every phase, with enough samples
        # per phase to pool k_shot + 15 eval queries
        for kw, freq in (("uk0800", 800.0), ("uk1500", 1500.0)):
            kdir = root / kw
            kdir.mkdir(parents=True, exist_ok=True)
            i = 0
            for phase in (PHASE_TRAIN, PHASE_VAL, PHASE_TEST):
                for _ in range(per_keyword):
                    path = kdir / f"spk{i:03d}_nohash_0.wav"
                    audio.save_wav(path, jittered_tone(freq, rng))
                    entries.append(ManifestEntry(
                        path=str(path.relative_to(root)), keyword=kw,
                        role=ROLE_UNKNOWN, phase=phase, speaker_id=f"spk{i:03d}"))
                    i += 1

    if with_silence:
        sdir = root / "_silence_"
        sdir.mkdir(parents=True, exist_ok=True)
        i = 0
        for phase in (PHASE_TRAIN, PHASE_VAL, PHASE_TEST):
            for _ in range(per_keyword):
                path = sdir / f"silence_{i:04d}.wav"
                audio.save_wav(path, 0.05 * rng.uniform(-1, 1, audio.CLIP_SAMPLES))
                entries.append(ManifestEntry(
                    path=str(path.relative_to(root)), keyword="_silence_",
                    role=ROLE_SILENCE, phase=phase, speaker_id=f"silence_{i:04d}"))
                i += 1

    manifest = Manifest(
        entries=entries, synthesis_seed=seed, source_dataset_version="toy-tones",
        background_tracks=background, base_dir=str(root))
    save_manifest(manifest, root / "manifest.jsonl")
    return load_manifest(root / "manifest.jsonl")


def make_fake_speech_commands(
    root,
    n_core: int = 6,
    n_unknown: int = 2,
    speakers_core: int = 10,
    speakers_unknown: int = 6,
    short_files: int = 2,
    seed: int = 0,
):
    """A miniature tree in the Speech Commands layout (noise folder included).

    Core keywords get `speakers_core` speakers (some with two utterances to
    exercise one-per-speaker selection), unknown keywords fewer; a few
    sub-second files are sprinkled in to exercise filtering.
    """
    root = Path(root)
    rng = np.random.default_rng(seed)
    bdir = root / "_background_noise_"
    bdir.mkdir(parents=True, exist_ok=True)
    for j in range(2):
        audio.save_wav(bdir / f"noise{j}.wav",
                       0.4 * rng.uniform(-1, 1, 3 * audio.CLIP_SAMPLES))

    def write_keyword(kw: str, n_speakers: int, freq: float):
        kdir = root / kw
        kdir.mkdir(parents=True, exist_ok=True)
        for s in range(n_speakers):
            spk = f"{kw}spk{s:03d}"
            audio.save_wav(kdir / f"{spk}_nohash_0.wav", jittered_tone(freq, rng))
            if s % 3 == 0:  # extra utterance for every third speaker
                audio.save_wav(kdir / f"{spk}_nohash_1.wav", jittered_tone(freq, rng))

    core = [f"core{i}" for i in range(n_core)]
    unknown = [f"unk{i}" for i in range(n_unknown)]
    for i, kw in enumerate(core):
        write_keyword(kw, speakers_core, 300.0 + 400.0 * i)
    for i, kw in enumerate(unknown):
        write_keyword(kw, speakers_unknown, 500.0 + 700.0 * i)

    # sub-second files that filtering must drop
    for i in range(short_files):
        audio.save_wav(root / core[0] / f"shorty{i:02d}_nohash_0.wav",
                       0.1 * np.ones(audio.CLIP_SAMPLES // 2))
    return root, core, unknown
