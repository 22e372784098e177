"""Few-shot Speech Commands synthesis and episode sampling.

Synthesis turns a Speech Commands v2 tree into a balanced manifest:
sub-second utterances are dropped, keywords are grouped into core
(>1000 speakers) and unknown, each keyword is balanced to one utterance
per speaker and subsampled to its group quota, core keywords are split
20/5/5 across train/val/test (disjoint keyword sets), unknown samples are
split 60/20/20 within each keyword, and 1000 quiet background sections
are materialized as the silence class.

Episode sampling then draws N-way K-shot tasks from one phase, optionally
adding a pooled unknown category and/or a silence category at a uniformly
random position, and optionally mixing background noise into the loaded
audio.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__, audio, rng as rngmod
from .features import (
    LAYOUT_FRAMES,
    LAYOUT_TEMPORAL,
    FeatureConfig,
    FeatureMatrix,
    mfcc,
    reshape_for_temporal_conv,
)
from .protonet import ROLE_CORE, ROLE_SILENCE, ROLE_UNKNOWN, Episode, EpisodeItem

PHASE_TRAIN = "TRAIN"
PHASE_VAL = "VAL"
PHASE_TEST = "TEST"
PHASES = (PHASE_TRAIN, PHASE_VAL, PHASE_TEST)

BACKGROUND_FOLDER = "_background_noise_"
SILENCE_KEYWORD = "_silence_"

# Fixed grouping for the standard v2 keyword inventory (speakers > 1000
# post-filter -> core); when a scan of a real v2 tree disagrees, these
# lists win and a warning is emitted.
V2_CORE_KEYWORDS = (
    "bed", "bird", "cat", "dog", "down", "eight", "five", "four", "go",
    "happy", "house", "left", "marvin", "nine", "no", "off", "on", "one",
    "right", "seven", "sheila", "six", "stop", "three", "tree", "two",
    "up", "wow", "yes", "zero",
)
V2_UNKNOWN_KEYWORDS = ("backward", "follow", "forward", "learn", "visual")
V2_CORE_QUOTA = 1062
V2_UNKNOWN_QUOTA = 386
CORE_SPLIT_COUNTS = (20, 5, 5)
UNKNOWN_SPLIT_FRACTIONS = (0.6, 0.2, 0.2)
SILENCE_COUNT = 1000


class MissingBackgroundFolder(FileNotFoundError):
    pass


class EmptyKeywordFolder(ValueError):
    pass


class QuotaUnreachable(ValueError):
    """Fewer speakers than the balancing quota: corrupted source data."""


class InsufficientClasses(ValueError):
    pass


class InsufficientSamples(ValueError):
    pass


class ManifestError(ValueError):
    pass


@dataclass(frozen=True)
class Utterance:
    keyword: str
    speaker_id: str
    path: str  # absolute
    n_samples: int


@dataclass
class RawInventory:
    utterances: list[Utterance]
    background_tracks: list[str]  # absolute paths
    filtered_count: int = 0

    def by_keyword(self) -> dict[str, list[Utterance]]:
        out: dict[str, list[Utterance]] = {}
        for u in self.utterances:
            out.setdefault(u.keyword, []).append(u)
        return out


@dataclass(frozen=True)
class ManifestEntry:
    path: str  # relative to the manifest directory
    keyword: str
    role: str
    phase: str
    speaker_id: str


@dataclass
class Manifest:
    entries: list[ManifestEntry]
    synthesis_seed: int
    source_dataset_version: str
    background_tracks: list[str] = field(default_factory=list)
    tool_version: str = __version__
    base_dir: str = "."
    _pools: dict | None = field(default=None, repr=False, compare=False)
    _track_cache: dict = field(default_factory=dict, repr=False, compare=False)

    def resolve(self, rel_path: str) -> Path:
        return (Path(self.base_dir) / rel_path).resolve()

    def pools(self) -> dict:
        """{phase: {'core': {keyword: [entries]}, 'unknown': [...], 'silence': [...]}}"""
        if self._pools is None:
            pools: dict = {
                ph: {"core": {}, "unknown": [], "silence": []} for ph in PHASES
            }
            for e in self.entries:
                bucket = pools[e.phase]
                if e.role == ROLE_CORE:
                    bucket["core"].setdefault(e.keyword, []).append(e)
                elif e.role == ROLE_UNKNOWN:
                    bucket["unknown"].append(e)
                else:
                    bucket["silence"].append(e)
            self._pools = pools
        return self._pools

    def load_track(self, rel_path: str) -> audio.BackgroundTrack:
        if rel_path not in self._track_cache:
            self._track_cache[rel_path] = audio.load_background_track(self.resolve(rel_path))
        return self._track_cache[rel_path]


@dataclass
class KeywordStats:
    keyword: str
    role: str
    speakers: int
    min_utterances: int
    max_utterances: int
    mean_utterances: float


@dataclass
class SynthesisReport:
    """Pre-filter per-keyword speaker/utterance statistics plus counters."""

    keyword_stats: list[KeywordStats]
    filtered_count: int
    silence_count: int

    def as_dict(self) -> dict:
        return {
            "keywords": [vars(k) for k in self.keyword_stats],
            "filtered_count": self.filtered_count,
            "silence_count": self.silence_count,
        }


@dataclass(frozen=True)
class EpisodeSpec:
    n_way: int
    k_shot: int
    n_query: int
    include_unknown: bool = False
    include_silence: bool = False
    background: bool = False
    background_volume: float = 0.1
    mix_support: bool = True
    phase: str = PHASE_TRAIN

    def __post_init__(self):
        if self.n_way < 2 or self.k_shot < 1 or self.n_query < 1:
            raise ValueError(f"bad episode spec: {self}")
        if self.phase not in PHASES:
            raise ValueError(f"unknown phase {self.phase!r}")

    @property
    def way_total(self) -> int:
        return self.n_way + int(self.include_unknown) + int(self.include_silence)


# --------------------------------------------------------------- synthesis


def scan_speech_commands(root) -> RawInventory:
    """Inventory a Speech Commands tree: one folder per keyword holding
    `<speaker>_nohash_<n>.wav` files, plus the background noise folder."""
    root = Path(root)
    if not root.is_dir():
        raise FileNotFoundError(f"dataset root {root} is not a directory")
    bg_dir = root / BACKGROUND_FOLDER
    if not bg_dir.is_dir():
        raise MissingBackgroundFolder(str(bg_dir))
    tracks = sorted(str(p) for p in bg_dir.glob("*.wav"))
    if not tracks:
        raise MissingBackgroundFolder(f"{bg_dir} contains no WAV files")

    utterances: list[Utterance] = []
    for folder in sorted(p for p in root.iterdir() if p.is_dir()):
        if folder.name.startswith("_"):
            continue
        wavs = sorted(folder.glob("*.wav"))
        if not wavs:
            raise EmptyKeywordFolder(str(folder))
        for w in wavs:
            speaker = w.name.split("_nohash_")[0]
            info = audio.wav_info(w)
            utterances.append(Utterance(folder.name, speaker, str(w), info.n_samples))
    return RawInventory(utterances=utterances, background_tracks=tracks)


def filter_short(inventory: RawInventory) -> RawInventory:
    """Drop utterances under one second; record how many were removed."""
    kept = [u for u in inventory.utterances if u.n_samples >= audio.CLIP_SAMPLES]
    return RawInventory(
        utterances=kept,
        background_tracks=inventory.background_tracks,
        filtered_count=inventory.filtered_count + len(inventory.utterances) - len(kept),
    )


def keyword_statistics(inventory: RawInventory, roles: dict[str, str] | None = None):
    """Per-keyword speaker counts and utterances-per-speaker min/max/mean."""
    stats = []
    for kw, utts in sorted(inventory.by_keyword().items()):
        per_speaker: dict[str, int] = {}
        for u in utts:
            per_speaker[u.speaker_id] = per_speaker.get(u.speaker_id, 0) + 1
        counts = list(per_speaker.values())
        stats.append(
            KeywordStats(
                keyword=kw,
                role=(roles or {}).get(kw, "?"),
                speakers=len(per_speaker),
                min_utterances=min(counts),
                max_utterances=max(counts),
                mean_utterances=round(sum(counts) / len(counts), 2),
            )
        )
    return stats


def group_core_unknown(inventory: RawInventory, threshold: int = 1000) -> dict[str, str]:
    """Role per keyword: more than `threshold` distinct speakers -> CORE.

    On the standard v2 inventory the fixed keyword lists are authoritative:
    if the threshold rule disagrees with them a warning is emitted and the
    fixed lists are used anyway.
    """
    by_kw = inventory.by_keyword()
    computed = {
        kw: (ROLE_CORE if len({u.speaker_id for u in utts}) > threshold else ROLE_UNKNOWN)
        for kw, utts in by_kw.items()
    }
    v2 = set(V2_CORE_KEYWORDS) | set(V2_UNKNOWN_KEYWORDS)
    if set(by_kw) == v2:
        fixed = {kw: ROLE_CORE for kw in V2_CORE_KEYWORDS}
        fixed.update({kw: ROLE_UNKNOWN for kw in V2_UNKNOWN_KEYWORDS})
        if computed != fixed:
            diff = sorted(kw for kw in computed if computed[kw] != fixed[kw])
            warnings.warn(
                f"speaker-count grouping disagrees with the fixed v2 lists for {diff}; "
                "using the fixed lists"
            )
        return fixed
    return computed


def _one_per_speaker(utts: list[Utterance]) -> dict[str, Utterance]:
    """Pick the lexicographically smallest filename per speaker."""
    best: dict[str, Utterance] = {}
    for u in sorted(utts, key=lambda u: Path(u.path).name):
        best.setdefault(u.speaker_id, u)
    return best


def balance(
    inventory: RawInventory,
    roles: dict[str, str],
    rng: np.random.Generator,
    quotas: dict[str, int] | None = None,
) -> dict[str, list[Utterance]]:
    """One utterance per speaker, subsampled to the group quota.

    Quotas default to the minimum speaker count within each role group so
    all keywords of a group end up with equal sample counts; explicit
    quotas (the v2 values) turn a shortfall into QuotaUnreachable.
    """
    by_kw = inventory.by_keyword()
    per_speaker = {kw: _one_per_speaker(utts) for kw, utts in by_kw.items()}

    if quotas is None:
        quotas = {}
        for role in (ROLE_CORE, ROLE_UNKNOWN):
            counts = [len(per_speaker[kw]) for kw in by_kw if roles[kw] == role]
            if counts:
                quotas[role] = min(counts)

    balanced: dict[str, list[Utterance]] = {}
    for kw in sorted(by_kw):
        quota = quotas[roles[kw]]
        speakers = sorted(per_speaker[kw])
        if len(speakers) < quota:
            raise QuotaUnreachable(f"{kw}: {len(speakers)} speakers < quota {quota}")
        chosen = rng.choice(len(speakers), size=quota, replace=False)
        balanced[kw] = [per_speaker[kw][speakers[i]] for i in sorted(chosen)]
    return balanced


def largest_remainder(total: int, fractions) -> list[int]:
    """Integer shares of `total` proportional to `fractions`, summing exactly."""
    shares = [total * f for f in fractions]
    base = [int(np.floor(s)) for s in shares]
    remainder = total - sum(base)
    order = sorted(range(len(fractions)), key=lambda i: (base[i] - shares[i], i))
    for i in order[:remainder]:
        base[i] += 1
    return base


def split_core(core_keywords, rng: np.random.Generator, counts=CORE_SPLIT_COUNTS):
    """Shuffle core keywords and deal them into disjoint phase sets."""
    keywords = sorted(core_keywords)
    if sum(counts) != len(keywords):
        raise ValueError(f"split counts {counts} do not cover {len(keywords)} keywords")
    perm = rng.permutation(len(keywords))
    shuffled = [keywords[i] for i in perm]
    out = {}
    pos = 0
    for phase, n in zip(PHASES, counts):
        for kw in shuffled[pos : pos + n]:
            out[kw] = phase
        pos += n
    return out


def split_unknown(balanced_unknown: dict[str, list[Utterance]], rng: np.random.Generator):
    """60/20/20 split of each unknown keyword's samples across all phases."""
    assignment: dict[str, str] = {}
    for kw in sorted(balanced_unknown):
        utts = sorted(balanced_unknown[kw], key=lambda u: u.path)
        perm = rng.permutation(len(utts))
        counts = largest_remainder(len(utts), UNKNOWN_SPLIT_FRACTIONS)
        pos = 0
        for phase, n in zip(PHASES, counts):
            for i in perm[pos : pos + n]:
                assignment[utts[i].path] = phase
            pos += n
    return assignment


def build_silence(
    background_tracks: list[str],
    out_dir,
    rng: np.random.Generator,
    count: int = SILENCE_COUNT,
) -> list[tuple[str, str]]:
    """Materialize quiet one-second WAVs cut from the background tracks.

    Each clip is a random section of a uniformly chosen track scaled by a
    volume drawn uniform in [0, 0.1]; returns (absolute path, phase) pairs
    split 60/20/20.
    """
    if not background_tracks:
        raise MissingBackgroundFolder("no background tracks to cut silence from")
    out_dir = Path(out_dir) / SILENCE_KEYWORD
    out_dir.mkdir(parents=True, exist_ok=True)
    tracks = [audio.load_background_track(p) for p in sorted(background_tracks)]

    paths: list[str] = []
    for i in range(count):
        track = tracks[int(rng.integers(0, len(tracks)))]
        snippet = audio.random_snippet(track, rng)
        volume = float(rng.uniform(0.0, 0.1))
        target = out_dir / f"silence_{i:04d}.wav"
        audio.save_wav(target, volume * snippet.samples)
        paths.append(str(target))

    counts = largest_remainder(count, UNKNOWN_SPLIT_FRACTIONS)
    perm = rng.permutation(count)
    phase_of = {}
    pos = 0
    for phase, n in zip(PHASES, counts):
        for i in perm[pos : pos + n]:
            phase_of[i] = phase
        pos += n
    return [(paths[i], phase_of[i]) for i in range(count)]


def synthesize_manifest(
    root,
    out_dir,
    seed: int,
    *,
    silence_count: int = SILENCE_COUNT,
    grouping_threshold: int = 1000,
) -> tuple[Manifest, SynthesisReport]:
    """Run the whole synthesis pipeline and write manifest + report files."""
    root = Path(root)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    raw = scan_speech_commands(root)
    filtered = filter_short(raw)
    roles = group_core_unknown(filtered, threshold=grouping_threshold)
    report_stats = keyword_statistics(raw, roles)  # pre-filter stats

    v2 = set(roles) == set(V2_CORE_KEYWORDS) | set(V2_UNKNOWN_KEYWORDS)
    quotas = {ROLE_CORE: V2_CORE_QUOTA, ROLE_UNKNOWN: V2_UNKNOWN_QUOTA} if v2 else None
    balanced = balance(filtered, roles, rngmod.stream(seed, "dataset.balance"), quotas)

    core_keywords = sorted(kw for kw, r in roles.items() if r == ROLE_CORE)
    if len(core_keywords) == sum(CORE_SPLIT_COUNTS):
        counts = CORE_SPLIT_COUNTS
    else:
        # smaller trees (test fixtures) get the same 20/5/5 proportions,
        # with every phase kept non-empty when possible
        fractions = [c / sum(CORE_SPLIT_COUNTS) for c in CORE_SPLIT_COUNTS]
        counts = largest_remainder(len(core_keywords), fractions)
        if len(core_keywords) >= len(PHASES):
            while min(counts) == 0:
                counts[counts.index(max(counts))] -= 1
                counts[counts.index(min(counts))] += 1
        counts = tuple(counts)
    core_phase = split_core(core_keywords, rngmod.stream(seed, "dataset.split_core"), counts)

    unknown_balanced = {kw: v for kw, v in balanced.items() if roles[kw] == ROLE_UNKNOWN}
    unknown_phase = split_unknown(unknown_balanced, rngmod.stream(seed, "dataset.split_unknown"))

    silence = build_silence(
        filtered.background_tracks, out_dir, rngmod.stream(seed, "dataset.silence"),
        count=silence_count,
    )

    entries: list[ManifestEntry] = []
    for kw in sorted(balanced):
        for u in balanced[kw]:
            phase = core_phase[kw] if roles[kw] == ROLE_CORE else unknown_phase[u.path]
            entries.append(
                ManifestEntry(
                    path=_relpath(u.path, out_dir),
                    keyword=kw,
                    role=roles[kw],
                    phase=phase,
                    speaker_id=u.speaker_id,
                )
            )
    for path, phase in silence:
        name = Path(path).stem
        entries.append(
            ManifestEntry(
                path=_relpath(path, out_dir),
                keyword=SILENCE_KEYWORD,
                role=ROLE_SILENCE,
                phase=phase,
                speaker_id=name,
            )
        )
    entries.sort(key=lambda e: (e.role, e.keyword, e.path))

    manifest = Manifest(
        entries=entries,
        synthesis_seed=seed,
        source_dataset_version=root.name,
        background_tracks=[_relpath(p, out_dir) for p in filtered.background_tracks],
        base_dir=str(out_dir),
    )
    validate_manifest(manifest)
    report = SynthesisReport(
        keyword_stats=report_stats,
        filtered_count=filtered.filtered_count,
        silence_count=silence_count,
    )
    save_manifest(manifest, out_dir / "manifest.jsonl")
    (out_dir / "report.json").write_text(
        json.dumps(report.as_dict(), indent=2, sort_keys=True) + "\n"
    )
    return manifest, report


def _relpath(path, base) -> str:
    import os

    return os.path.relpath(os.path.abspath(path), os.path.abspath(base))


# ------------------------------------------------------------- persistence


def save_manifest(manifest: Manifest, path) -> None:
    """Line-delimited JSON: one header record, then one record per entry."""
    path = Path(path)
    header = {
        "format": "fskws-manifest",
        "version": 1,
        "synthesis_seed": manifest.synthesis_seed,
        "source_dataset_version": manifest.source_dataset_version,
        "tool_version": manifest.tool_version,
        "background_tracks": manifest.background_tracks,
    }
    lines = [json.dumps(header, sort_keys=True, separators=(",", ":"))]
    for e in manifest.entries:
        lines.append(
            json.dumps(
                {"path": e.path, "keyword": e.keyword, "role": e.role,
                 "phase": e.phase, "speaker_id": e.speaker_id},
                sort_keys=True, separators=(",", ":"),
            )
        )
    path.write_text("\n".join(lines) + "\n")


def load_manifest(path) -> Manifest:
    path = Path(path)
    lines = path.read_text().splitlines()
    if not lines:
        raise ManifestError(f"{path}: empty manifest")
    header = json.loads(lines[0])
    if header.get("format") != "fskws-manifest":
        raise ManifestError(f"{path}: not a manifest file")
    entries = []
    for line in lines[1:]:
        if not line.strip():
            continue
        d = json.loads(line)
        entries.append(ManifestEntry(**d))
    manifest = Manifest(
        entries=entries,
        synthesis_seed=header["synthesis_seed"],
        source_dataset_version=header["source_dataset_version"],
        background_tracks=header.get("background_tracks", []),
        tool_version=header.get("tool_version", "?"),
        base_dir=str(path.parent),
    )
    validate_manifest(manifest)
    return manifest


def validate_manifest(manifest: Manifest) -> None:
    """Structural invariants: phase-disjoint core keywords, unknown keywords
    spanning all phases, per-keyword speaker uniqueness, uniform counts."""
    core_phases: dict[str, set] = {}
    unknown_phases: dict[str, set] = {}
    speakers: dict[str, set] = {}
    counts: dict[str, int] = {}
    for e in manifest.entries:
        if e.phase not in PHASES:
            raise ManifestError(f"bad phase {e.phase!r}")
        counts[e.keyword] = counts.get(e.keyword, 0) + 1
        spk = speakers.setdefault(e.keyword, set())
        if e.speaker_id in spk:
            raise ManifestError(f"duplicate speaker {e.speaker_id} for {e.keyword}")
        spk.add(e.speaker_id)
        if e.role == ROLE_CORE:
            core_phases.setdefault(e.keyword, set()).add(e.phase)
        elif e.role == ROLE_UNKNOWN:
            unknown_phases.setdefault(e.keyword, set()).add(e.phase)
    for kw, phases in core_phases.items():
        if len(phases) != 1:
            raise ManifestError(f"core keyword {kw} spans phases {sorted(phases)}")
    for kw, phases in unknown_phases.items():
        if phases != set(PHASES):
            raise ManifestError(f"unknown keyword {kw} missing from {set(PHASES) - phases}")
    for role, kws in ((ROLE_CORE, core_phases), (ROLE_UNKNOWN, unknown_phases)):
        sizes = {counts[kw] for kw in kws}
        if len(sizes) > 1:
            raise ManifestError(f"{role} keywords have unequal counts {sorted(sizes)}")


# ------------------------------------------------------------ episode path


def sample_episode(manifest: Manifest, spec: EpisodeSpec, rng: np.random.Generator) -> Episode:
    """Draw an N-way K-shot episode (paths and labels; audio not loaded)."""
    pools = manifest.pools()[spec.phase]
    core_keywords = sorted(kw for kw, es in pools["core"].items()
                           if len(es) >= spec.k_shot + spec.n_query)
    if len(core_keywords) < spec.n_way:
        raise InsufficientClasses(
            f"{spec.phase}: {len(core_keywords)} usable core keywords < {spec.n_way}")
    picked = rng.choice(len(core_keywords), size=spec.n_way, replace=False)
    chosen_keywords = [core_keywords[i] for i in picked]

    slots: list[tuple[str, str]] = [(ROLE_CORE, kw) for kw in chosen_keywords]
    if spec.include_unknown:
        slots.append((ROLE_UNKNOWN, ROLE_UNKNOWN.lower()))
    if spec.include_silence:
        slots.append((ROLE_SILENCE, SILENCE_KEYWORD))
    perm = rng.permutation(len(slots))
    slots = [slots[i] for i in perm]

    support: list[EpisodeItem] = []
    query: list[EpisodeItem] = []
    need = spec.k_shot + spec.n_query
    for label, (role, name) in enumerate(slots):
        if role == ROLE_CORE:
            pool = sorted(pools["core"][name], key=lambda e: e.path)
        elif role == ROLE_UNKNOWN:
            pool = sorted(pools["unknown"], key=lambda e: e.path)
        else:
            pool = sorted(pools["silence"], key=lambda e: e.path)
        if len(pool) < need:
            raise InsufficientSamples(f"{spec.phase}/{name}: {len(pool)} < {need}")
        idx = rng.choice(len(pool), size=need, replace=False)
        for j, i in enumerate(idx):
            e = pool[i]
            item = EpisodeItem(path=e.path, label=label, role=role, keyword=e.keyword)
            (support if j < spec.k_shot else query).append(item)

    return Episode(
        support=support,
        query=query,
        n_core=spec.n_way,
        category_roles=[role for role, _ in slots],
        category_names=[name for _, name in slots],
    )


def clip_for_pipeline(clip: audio.AudioClip) -> audio.AudioClip:
    """Force a loaded utterance to exactly one second.

    Short clips were filtered at synthesis; seeing one here means the
    manifest and the files went out of sync. Longer-than-a-second files do
    not occur in the source data but are cropped to their first second for
    robustness.
    """
    if len(clip) < audio.CLIP_SAMPLES:
        raise audio.LengthMismatch(
            f"{clip.source_path}: {len(clip)} samples < {audio.CLIP_SAMPLES}")
    if len(clip) > audio.CLIP_SAMPLES:
        clip = audio.AudioClip(
            samples=clip.samples[: audio.CLIP_SAMPLES], source_path=clip.source_path)
    return clip


def load_episode(
    episode: Episode,
    spec: EpisodeSpec,
    rng: np.random.Generator,
    manifest: Manifest,
    layout: str = LAYOUT_TEMPORAL,
    feature_config: FeatureConfig = FeatureConfig(),
) -> Episode:
    """Load audio for a sampled episode and attach feature matrices.

    With spec.background enabled every non-silence clip is mixed with a
    random background snippet at a volume drawn uniform in
    [0, background_volume]; support items are skipped when mix_support is
    off. Consumes `rng` only when it mixes, keeping streams aligned.
    """
    for item, is_support in [(i, True) for i in episode.support] + [
        (i, False) for i in episode.query
    ]:
        clip = clip_for_pipeline(audio.load_wav(manifest.resolve(item.path)))
        mixing = (
            spec.background
            and item.role != ROLE_SILENCE
            and (spec.mix_support or not is_support)
        )
        if mixing:
            if not manifest.background_tracks:
                raise MissingBackgroundFolder(
                    "background mixing requested but the manifest lists no tracks")
            track_rel = manifest.background_tracks[
                int(rng.integers(0, len(manifest.background_tracks)))
            ]
            snippet = audio.random_snippet(manifest.load_track(track_rel), rng)
            volume = float(rng.uniform(0.0, spec.background_volume))
            clip = audio.mix_background(clip, snippet, volume)
        feats = mfcc(clip, feature_config)
        if layout == LAYOUT_TEMPORAL:
            feats = reshape_for_temporal_conv(feats)
        elif layout != LAYOUT_FRAMES:
            raise ValueError(f"unknown layout {layout!r}")
        item.features = feats
    return episode
