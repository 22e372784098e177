"""Episodic training, evaluation with confidence intervals, checkpoints.

The schedule: per epoch, a fixed number of training episodes (sample ->
load -> one batched train-mode forward -> episode loss -> backward ->
Adam) followed by validation episodes in eval mode; the checkpoint with
the best validation accuracy wins. The learning rate starts at 1e-3 and
halves every 20 epochs. Everything downstream of the master seed is
bit-reproducible: named rng streams, deterministic kernels, timestamped
data only in the side log.
"""

from __future__ import annotations

import json
import struct
import time
from dataclasses import dataclass, field, asdict, replace

import numpy as np

from . import nets, protonet, rng as rngmod, tensor as T
from .dataset import (
    PHASE_TEST,
    PHASE_TRAIN,
    PHASE_VAL,
    EpisodeSpec,
    Manifest,
    load_episode,
    sample_episode,
)
from .features import LAYOUT_FRAMES, LAYOUT_TEMPORAL
from .protonet import Episode

CHECKPOINT_MAGIC = b"FSKW"
CHECKPOINT_VERSION = 1

CASE_A = "a"
CASE_B = "b"
CASE_C_UNKNOWN = "c-unknown"
CASE_C_SILENCE = "c-silence"
CASE_D = "d"
CASES = (CASE_A, CASE_B, CASE_C_UNKNOWN, CASE_C_SILENCE, CASE_D)

# (include_unknown, include_silence, background)
_CASE_FLAGS = {
    CASE_A: (False, False, False),
    CASE_B: (False, False, True),
    CASE_C_UNKNOWN: (True, False, False),
    CASE_C_SILENCE: (False, True, False),
    CASE_D: (True, True, True),
}

PROFILES = {
    "full": dict(epochs=200, train_episodes_per_epoch=200, val_episodes_per_epoch=100),
    "desk": dict(epochs=40, train_episodes_per_epoch=100, val_episodes_per_epoch=50),
}


class NanLoss(RuntimeError):
    """Episode loss went non-finite; carries a dump of the episode."""

    def __init__(self, message, episode_dump=None):
        super().__init__(message)
        self.episode_dump = episode_dump


class BadMagic(ValueError):
    pass


class VersionUnsupported(ValueError):
    pass


class InsufficientData(ValueError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    arch: str = nets.TD_RESNET7
    case: str = CASE_A
    n_way: int = 2
    k_shot: int = 5
    epochs: int = 200
    train_episodes_per_epoch: int = 200
    val_episodes_per_epoch: int = 100
    initial_lr: float = 1e-3
    lr_halving_period_epochs: int = 20
    train_queries_per_class: int = 5
    eval_queries_per_class: int = 15
    background_volume: float = 0.1
    mix_test_support: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.arch not in nets.ALL_KINDS:
            raise ValueError(f"unknown arch {self.arch!r}; expected one of {nets.ALL_KINDS}")
        if self.case not in CASES:
            raise ValueError(f"unknown case {self.case!r}; expected one of {CASES}")
        for name in ("n_way", "k_shot", "epochs", "train_episodes_per_epoch",
                     "val_episodes_per_epoch", "lr_halving_period_epochs",
                     "train_queries_per_class", "eval_queries_per_class"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")

    def with_profile(self, profile: str) -> "TrainConfig":
        if profile not in PROFILES:
            raise ValueError(f"unknown profile {profile!r}; expected one of {tuple(PROFILES)}")
        return replace(self, **PROFILES[profile])

    def episode_spec(self, phase: str, queries_per_class: int) -> EpisodeSpec:
        unknown, silence, background = _CASE_FLAGS[self.case]
        return EpisodeSpec(
            n_way=self.n_way,
            k_shot=self.k_shot,
            n_query=queries_per_class,
            include_unknown=unknown,
            include_silence=silence,
            background=background,
            background_volume=self.background_volume,
            mix_support=self.mix_test_support or phase == PHASE_TRAIN,
            phase=phase,
        )


def lr_at(epoch: int, cfg: TrainConfig) -> float:
    """initial_lr halved once per lr_halving_period_epochs (0-based epoch)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return cfg.initial_lr * 0.5 ** (epoch // cfg.lr_halving_period_epochs)


def _layout_for(arch: str) -> str:
    return LAYOUT_TEMPORAL if arch in (nets.TD_RESNET7, nets.TC_RESNET8) else LAYOUT_FRAMES


def _episode_forward(net: nets.Network, episode: Episode, train: bool):
    """One batched pass over support+query; returns (log_probs, loss, labels)."""
    feats = [it.features for it in episode.support] + [it.features for it in episode.query]
    emb = nets.embed(net, feats, train=train)
    n_support = len(episode.support)
    support_emb = T.narrow(emb, 0, n_support)
    query_emb = T.narrow(emb, n_support, emb.shape[0])
    protos = protonet.compute_prototypes(
        support_emb, episode.support_labels(), episode.way_total)
    dists = protonet.squared_euclidean(query_emb, protos)
    log_probs = protonet.episode_log_probs(dists)
    labels = episode.query_labels()
    loss = protonet.episode_loss(log_probs, labels)
    return log_probs, loss, labels


def _episode_dump(episode: Episode) -> dict:
    return {
        "categories": episode.category_names,
        "support": [(it.path, it.label) for it in episode.support],
        "query": [(it.path, it.label) for it in episode.query],
    }


@dataclass
class EvalResult:
    mean_accuracy: float
    ci95_halfwidth: float
    per_episode_accuracies: list[float]
    core_only_accuracy: float

    @classmethod
    def from_accuracies(cls, accuracies, core_accuracies) -> "EvalResult":
        acc = np.asarray(accuracies, dtype=np.float64)
        n = len(acc)
        ci = 1.96 * float(np.std(acc)) / np.sqrt(n) if n else 0.0
        return cls(
            mean_accuracy=float(acc.mean()) if n else 0.0,
            ci95_halfwidth=float(ci),
            per_episode_accuracies=[float(a) for a in acc],
            core_only_accuracy=float(np.mean(core_accuracies)) if n else 0.0,
        )


def _run_eval_episodes(
    net: nets.Network,
    manifest: Manifest,
    spec: EpisodeSpec,
    n_episodes: int,
    episode_rng: np.random.Generator,
    augment_rng: np.random.Generator,
) -> EvalResult:
    layout = _layout_for(net.kind)
    accs, core_accs = [], []
    for _ in range(n_episodes):
        episode = sample_episode(manifest, spec, episode_rng)
        load_episode(episode, spec, augment_rng, manifest, layout=layout)
        log_probs, _, labels = _episode_forward(net, episode, train=False)
        preds = protonet.classify(log_probs)
        accs.append(protonet.episode_accuracy(preds, labels))
        mask = episode.core_query_mask()
        core_accs.append(float(np.mean((preds == labels)[mask])) if mask.any() else accs[-1])
    return EvalResult.from_accuracies(accs, core_accs)


def train(
    manifest: Manifest,
    cfg: TrainConfig,
    *,
    log_path=None,
    progress=None,
) -> "Checkpoint":
    """Run the episodic schedule and return the best-validation checkpoint."""
    net = nets.build_network(cfg.arch, seed=rngmod.stream(cfg.seed, "trainer.init"))
    params = net.parameters()
    layout = _layout_for(cfg.arch)

    train_spec = cfg.episode_spec(PHASE_TRAIN, cfg.train_queries_per_class)
    val_spec = cfg.episode_spec(PHASE_VAL, cfg.eval_queries_per_class)
    train_rng = rngmod.stream(cfg.seed, "trainer.episodes.train")
    val_rng = rngmod.stream(cfg.seed, "trainer.episodes.val")
    aug_rng = rngmod.stream(cfg.seed, "trainer.augment.train")
    val_aug_rng = rngmod.stream(cfg.seed, "trainer.augment.eval")

    _check_phase(manifest, train_spec)
    _check_phase(manifest, val_spec)

    best: Checkpoint | None = None
    log_records = []
    t0 = time.monotonic()
    for epoch in range(cfg.epochs):
        lr = lr_at(epoch, cfg)
        losses, accs = [], []
        for _ in range(cfg.train_episodes_per_epoch):
            episode = sample_episode(manifest, train_spec, train_rng)
            load_episode(episode, train_spec, aug_rng, manifest, layout=layout)
            try:
                log_probs, loss, labels = _episode_forward(net, episode, train=True)
            except FloatingPointError as exc:
                raise NanLoss(f"non-finite forward pass at epoch {epoch}: {exc}",
                              _episode_dump(episode)) from exc
            loss_value = loss.item()
            if not np.isfinite(loss_value):
                raise NanLoss(
                    f"non-finite loss at epoch {epoch}", _episode_dump(episode))
            T.backward(loss)
            T.adam_step(params, lr)
            losses.append(loss_value)
            accs.append(protonet.episode_accuracy(protonet.classify(log_probs), labels))

        val = _run_eval_episodes(
            net, manifest, val_spec, cfg.val_episodes_per_epoch, val_rng, val_aug_rng)
        if best is None or val.mean_accuracy > best.val_accuracy:
            best = Checkpoint.from_network(net, cfg, epoch, val.mean_accuracy)
        record = {
            "epoch": epoch,
            "train_loss": float(np.mean(losses)),
            "train_acc": float(np.mean(accs)),
            "val_acc": val.mean_accuracy,
            "lr": lr,
            "wall_time": round(time.monotonic() - t0, 3),
        }
        log_records.append(record)
        if progress is not None:
            progress(record)

    if log_path is not None:
        with open(log_path, "w") as f:
            f.write(json.dumps({"config": asdict(cfg)}, sort_keys=True) + "\n")
            for record in log_records:
                f.write(json.dumps(record, sort_keys=True) + "\n")
    best.train_log = log_records
    return best


def _check_phase(manifest: Manifest, spec: EpisodeSpec) -> None:
    pools = manifest.pools()[spec.phase]
    usable = [kw for kw, es in pools["core"].items()
              if len(es) >= spec.k_shot + spec.n_query]
    if len(usable) < spec.n_way:
        raise InsufficientData(
            f"{spec.phase}: only {len(usable)} core keywords with enough samples")
    if spec.include_unknown and len(pools["unknown"]) < spec.k_shot + spec.n_query:
        raise InsufficientData(f"{spec.phase}: not enough unknown samples")
    if spec.include_silence and len(pools["silence"]) < spec.k_shot + spec.n_query:
        raise InsufficientData(f"{spec.phase}: not enough silence samples")


def evaluate(
    source,
    manifest: Manifest,
    cfg: TrainConfig | None = None,
    *,
    n_episodes: int = 100,
    n_way: int | None = None,
    k_shot: int | None = None,
    seed: int | None = None,
) -> EvalResult:
    """Accuracy over TEST-phase episodes with a 95% interval.

    `source` is a Checkpoint or a Network. The interval is
    1.96 * sigma / sqrt(n) with sigma the population standard deviation of
    the per-episode accuracies.
    """
    net, base_cfg = _net_and_config(source, cfg)
    cfg = cfg or base_cfg
    if n_way is not None:
        cfg = replace(cfg, n_way=n_way)
    if k_shot is not None:
        cfg = replace(cfg, k_shot=k_shot)
    spec = cfg.episode_spec(PHASE_TEST, cfg.eval_queries_per_class)
    _check_phase(manifest, spec)
    eval_seed = cfg.seed if seed is None else seed
    return _run_eval_episodes(
        net, manifest, spec, n_episodes,
        rngmod.stream(eval_seed, "trainer.episodes.test"),
        rngmod.stream(eval_seed, "trainer.augment.eval"),
    )


def sweep_shots(
    source,
    manifest: Manifest,
    cfg: TrainConfig | None = None,
    shots=(1, 2, 3, 4, 5),
    *,
    n_episodes: int = 100,
    seed: int | None = None,
):
    """Evaluate one model at several test-time K values."""
    return [
        (k, evaluate(source, manifest, cfg, n_episodes=n_episodes, k_shot=k, seed=seed))
        for k in shots
    ]


def _net_and_config(source, cfg):
    if isinstance(source, Checkpoint):
        return source.restore(), TrainConfig(**source.train_config)
    if isinstance(source, nets.Network):
        if cfg is None:
            raise ValueError("evaluating a bare network needs a TrainConfig")
        return source, cfg
    raise TypeError(f"cannot evaluate {type(source)!r}")


# -------------------------------------------------------------- checkpoint


@dataclass
class Checkpoint:
    """Self-describing frozen model: architecture, parameters, batchnorm
    running statistics and Adam state, all little-endian float32."""

    arch_spec: dict
    params: dict[str, np.ndarray]
    bn_stats: dict[str, np.ndarray]
    adam_m: dict[str, np.ndarray]
    adam_v: dict[str, np.ndarray]
    adam_steps: dict[str, int]
    bn_batches: list[int]
    epoch: int
    val_accuracy: float
    train_config: dict
    format_version: int = CHECKPOINT_VERSION
    train_log: list = field(default_factory=list, repr=False, compare=False)

    @classmethod
    def from_network(cls, net: nets.Network, cfg: TrainConfig,
                     epoch: int, val_accuracy: float) -> "Checkpoint":
        named = net.named_parameters()
        return cls(
            arch_spec=net.spec(),
            params={n: p.data.astype("<f4") for n, p in named.items()},
            bn_stats={n: a.astype("<f4") for n, a in net.state_arrays().items()},
            adam_m={n: (p.adam_m if p.adam_m is not None else np.zeros_like(p.data)).astype("<f4")
                    for n, p in named.items()},
            adam_v={n: (p.adam_v if p.adam_v is not None else np.zeros_like(p.data)).astype("<f4")
                    for n, p in named.items()},
            adam_steps={n: p.adam_step_count for n, p in named.items()},
            bn_batches=[bn.batches_tracked for bn in net.bn_modules()],
            epoch=epoch,
            val_accuracy=float(val_accuracy),
            train_config=asdict(cfg),
        )

    def restore(self) -> nets.Network:
        net = nets.build_network(self.arch_spec["kind"], seed=0)
        if net.spec() != self.arch_spec:
            raise T.ShapeMismatch("checkpoint architecture spec does not match builder")
        named = net.named_parameters()
        if set(named) != set(self.params):
            raise T.ShapeMismatch("checkpoint parameter names do not match architecture")
        for name, p in named.items():
            src = self.params[name]
            if src.shape != p.data.shape:
                raise T.ShapeMismatch(f"{name}: {src.shape} vs {p.data.shape}")
            p.data[...] = src
            p.adam_m = self.adam_m[name].astype(p.dtype).copy()
            p.adam_v = self.adam_v[name].astype(p.dtype).copy()
            p.adam_step_count = int(self.adam_steps[name])
        states = net.state_arrays()
        for name, arr in states.items():
            src = self.bn_stats[name]
            if src.shape != arr.shape:
                raise T.ShapeMismatch(f"{name}: {src.shape} vs {arr.shape}")
            arr[...] = src
        for bn, tracked in zip(net.bn_modules(), self.bn_batches):
            bn.batches_tracked = int(tracked)
        return net


def save_checkpoint(ckpt: Checkpoint, path) -> None:
    """magic | u32 version | u64 header length | header JSON | raw arrays."""
    arrays = []
    blobs = []
    for kind, table in (("param", ckpt.params), ("bn", ckpt.bn_stats),
                        ("adam_m", ckpt.adam_m), ("adam_v", ckpt.adam_v)):
        for name in sorted(table):
            arr = np.ascontiguousarray(table[name], dtype="<f4")
            arrays.append({"kind": kind, "name": name, "shape": list(arr.shape)})
            blobs.append(arr.tobytes())
    header = {
        "format_version": ckpt.format_version,
        "architecture": ckpt.arch_spec,
        "train_config": ckpt.train_config,
        "epoch": ckpt.epoch,
        "val_accuracy": ckpt.val_accuracy,
        "adam_steps": {k: ckpt.adam_steps[k] for k in sorted(ckpt.adam_steps)},
        "bn_batches": ckpt.bn_batches,
        "arrays": arrays,
    }
    payload = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as f:
        f.write(CHECKPOINT_MAGIC)
        f.write(struct.pack("<I", CHECKPOINT_VERSION))
        f.write(struct.pack("<Q", len(payload)))
        f.write(payload)
        for blob in blobs:
            f.write(blob)


def load_checkpoint(path) -> Checkpoint:
    with open(path, "rb") as f:
        raw = f.read()
    if raw[:4] != CHECKPOINT_MAGIC:
        raise BadMagic(f"{path}: not a checkpoint file")
    if len(raw) < 16:
        raise T.ShapeMismatch(f"{path}: truncated header")
    (version,) = struct.unpack_from("<I", raw, 4)
    if version != CHECKPOINT_VERSION:
        raise VersionUnsupported(f"{path}: format version {version}")
    (hlen,) = struct.unpack_from("<Q", raw, 8)
    if 16 + hlen > len(raw):
        raise T.ShapeMismatch(f"{path}: truncated header")
    header = json.loads(raw[16 : 16 + hlen])

    tables = {"param": {}, "bn": {}, "adam_m": {}, "adam_v": {}}
    pos = 16 + hlen
    for rec in header["arrays"]:
        shape = tuple(rec["shape"])
        nbytes = int(np.prod(shape)) * 4 if shape else 4
        if pos + nbytes > len(raw):
            raise T.ShapeMismatch(f"{path}: truncated array {rec['name']}")
        arr = np.frombuffer(raw, dtype="<f4", count=max(int(np.prod(shape)), 1),
                            offset=pos).reshape(shape).copy()
        tables[rec["kind"]][rec["name"]] = arr
        pos += nbytes
    if pos != len(raw):
        raise T.ShapeMismatch(f"{path}: {len(raw) - pos} trailing bytes")

    ckpt = Checkpoint(
        arch_spec=header["architecture"],
        params=tables["param"],
        bn_stats=tables["bn"],
        adam_m=tables["adam_m"],
        adam_v=tables["adam_v"],
        adam_steps={k: int(v) for k, v in header["adam_steps"].items()},
        bn_batches=[int(b) for b in header["bn_batches"]],
        epoch=int(header["epoch"]),
        val_accuracy=float(header["val_accuracy"]),
        train_config=header["train_config"],
        format_version=int(header["format_version"]),
    )
    ckpt.restore()  # validates names and shapes against the architecture
    return ckpt


# ------------------------------------------------------------- results csv

RESULTS_COLUMNS = ("case", "architecture", "n_way", "k_shot",
                   "mean_acc", "ci95", "core_only_acc", "episodes")


def results_csv(rows, config: dict) -> str:
    """Deterministic CSV with the effective config embedded as a comment."""
    lines = [
        "# fskws-results v1",
        "# config: " + json.dumps(config, sort_keys=True, separators=(",", ":")),
        ",".join(RESULTS_COLUMNS),
    ]
    for row in rows:
        lines.append(
            "{case},{architecture},{n_way},{k_shot},"
            "{mean_acc:.6f},{ci95:.6f},{core_only_acc:.6f},{episodes}".format(**row)
        )
    return "\n".join(lines) + "\n"


def result_row(case, architecture, n_way, k_shot, res: EvalResult) -> dict:
    return {
        "case": case,
        "architecture": architecture,
        "n_way": n_way,
        "k_shot": k_shot,
        "mean_acc": res.mean_accuracy,
        "ci95": res.ci95_halfwidth,
        "core_only_acc": res.core_only_accuracy,
        "episodes": len(res.per_episode_accuracies),
    }
