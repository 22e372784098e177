"""Command line surface: synth, train, eval, classify.

Exit codes: 0 success, 2 usage/config/data errors, 3 numeric failures.
Every artifact written (manifest, checkpoint, log, CSV) embeds the
effective configuration and master seed.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import fields, replace
from pathlib import Path

import numpy as np

from . import audio, dataset, nets, protonet, trainer
from . import tensor as T
from .features import LAYOUT_TEMPORAL, mfcc, reshape_for_temporal_conv

DATA_DIR_ENV = "FSKWS_DATA_DIR"

_USAGE_ERRORS = (
    dataset.ManifestError,
    dataset.MissingBackgroundFolder,
    dataset.EmptyKeywordFolder,
    dataset.QuotaUnreachable,
    dataset.InsufficientClasses,
    dataset.InsufficientSamples,
    trainer.InsufficientData,
    trainer.BadMagic,
    trainer.VersionUnsupported,
    audio.MalformedWav,
    audio.UnsupportedFormat,
    nets.LayoutMismatch,
    T.ShapeMismatch,
    FileNotFoundError,
    ValueError,
)


def _env_default(filename: str | None = None):
    root = os.environ.get(DATA_DIR_ENV)
    if root is None:
        return None
    return str(Path(root) / filename) if filename else root


def _read_config_file(path, allowed: dict[str, type]) -> dict:
    """key = value lines; keys must name known config fields."""
    overrides = {}
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ValueError(f"{path}:{lineno}: expected 'key = value'")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in allowed:
            raise ValueError(f"{path}:{lineno}: unknown config key {key!r}")
        typ = allowed[key]
        if typ is bool:
            if value.lower() not in ("true", "false", "1", "0"):
                raise ValueError(f"{path}:{lineno}: boolean expected for {key}")
            overrides[key] = value.lower() in ("true", "1")
        else:
            overrides[key] = typ(value)
    return overrides


def _train_config_types() -> dict[str, type]:
    types = {}
    for f in fields(trainer.TrainConfig):
        types[f.name] = f.type if isinstance(f.type, type) else {
            "str": str, "int": int, "float": float, "bool": bool}[f.type]
    return types


def _apply_overlay(cfg: trainer.TrainConfig, args, overlay: dict) -> trainer.TrainConfig:
    """Precedence: explicit flags > config file > defaults."""
    if overlay:
        cfg = replace(cfg, **overlay)
    flag_map = {
        "arch": args.arch, "case": args.case, "n_way": args.n_way,
        "k_shot": args.k_shot, "seed": args.seed,
    }
    explicit = {k: v for k, v in flag_map.items() if v is not None}
    if explicit:
        cfg = replace(cfg, **explicit)
    return cfg


def cmd_synth(args) -> int:
    if args.input is None:
        raise ValueError(f"--input is required (or set {DATA_DIR_ENV})")
    overlay = {}
    if args.config:
        overlay = _read_config_file(
            args.config, {"silence_count": int, "grouping_threshold": int})
    manifest, report = dataset.synthesize_manifest(
        args.input, args.output, args.seed, **overlay)
    print(f"manifest: {Path(args.output) / 'manifest.jsonl'} "
          f"({len(manifest.entries)} entries, seed {args.seed})")
    print(f"report:   {Path(args.output) / 'report.json'} "
          f"({report.filtered_count} sub-second files dropped, "
          f"{report.silence_count} silence clips)")
    print()
    print(f"{'keyword':<12} {'role':<8} {'speakers':>8} {'min':>4} {'max':>4} {'mean':>6}")
    for st in report.keyword_stats:
        print(f"{st.keyword:<12} {st.role:<8} {st.speakers:>8} "
              f"{st.min_utterances:>4} {st.max_utterances:>4} {st.mean_utterances:>6}")
    return 0


def cmd_train(args) -> int:
    if args.manifest is None:
        raise ValueError(f"--manifest is required (or set {DATA_DIR_ENV})")
    overlay = {}
    if args.config:
        overlay = _read_config_file(args.config, _train_config_types())
    cfg = _apply_overlay(trainer.TrainConfig(), args, overlay)
    if args.profile:
        cfg = cfg.with_profile(args.profile)

    manifest = dataset.load_manifest(args.manifest)
    out_dir = Path(args.output)
    out_dir.mkdir(parents=True, exist_ok=True)
    stem = f"{cfg.arch}_{cfg.case}_{cfg.n_way}way_{cfg.k_shot}shot_seed{cfg.seed}"
    ckpt_path = out_dir / f"{stem}.ckpt"
    log_path = out_dir / f"{stem}.log.jsonl"

    def progress(rec):
        print(_format_epoch(rec))

    ckpt = trainer.train(manifest, cfg, log_path=log_path, progress=progress)
    trainer.save_checkpoint(ckpt, ckpt_path)
    print(f"best validation accuracy {ckpt.val_accuracy:.4f} at epoch {ckpt.epoch}")
    print(f"checkpoint: {ckpt_path}")
    print(f"log:        {log_path}")
    return 0


def _format_epoch(rec: dict) -> str:
    return (f"epoch {rec['epoch']:>3}  loss {rec['train_loss']:.4f}  "
            f"train {rec['train_acc']:.3f}  val {rec['val_acc']:.3f}  "
            f"lr {rec['lr']:.2e}")


def cmd_eval(args) -> int:
    if args.manifest is None:
        raise ValueError(f"--manifest is required (or set {DATA_DIR_ENV})")
    ckpt = trainer.load_checkpoint(args.checkpoint)
    manifest = dataset.load_manifest(args.manifest)
    cfg = trainer.TrainConfig(**ckpt.train_config)
    if args.n_way is not None:
        cfg = replace(cfg, n_way=args.n_way)
    seed = args.seed if args.seed is not None else cfg.seed

    shots = ([int(s) for s in args.k_shot_sweep.split(",")]
             if args.k_shot_sweep else [args.k_shot or cfg.k_shot])
    rows = []
    for k in shots:
        res = trainer.evaluate(ckpt, manifest, cfg, n_episodes=args.episodes,
                               k_shot=k, seed=seed)
        rows.append(trainer.result_row(cfg.case, cfg.arch, cfg.n_way, k, res))
        print(f"{cfg.arch} case {cfg.case} {cfg.n_way}-way {k}-shot: "
              f"{res.mean_accuracy:.4f} ± {res.ci95_halfwidth:.4f} "
              f"(core-only {res.core_only_accuracy:.4f}, "
              f"{len(res.per_episode_accuracies)} episodes)")
    csv_text = trainer.results_csv(
        rows, {"checkpoint_config": ckpt.train_config, "eval_seed": seed,
               "episodes": args.episodes})
    if args.output:
        Path(args.output).write_text(csv_text)
        print(f"csv: {args.output}")
    else:
        print(csv_text, end="")
    return 0


def cmd_classify(args) -> int:
    ckpt = trainer.load_checkpoint(args.checkpoint)
    net = ckpt.restore()
    layout = (LAYOUT_TEMPORAL
              if net.input_layout == LAYOUT_TEMPORAL else net.input_layout)

    support_root = Path(args.support)
    keyword_dirs = sorted(p for p in support_root.iterdir() if p.is_dir())
    if not keyword_dirs:
        raise ValueError(f"{support_root}: no keyword folders")

    feats, labels, names = [], [], []
    for label, kdir in enumerate(keyword_dirs):
        wavs = sorted(kdir.glob("*.wav"))
        if not wavs:
            raise ValueError(f"{kdir}: empty support folder")
        names.append(kdir.name)
        for w in wavs:
            feats.append(_features_for(w, net))
            labels.append(label)

    query = _features_for(args.query, net, what="query")
    with T.no_grad():
        support_emb = nets.embed(net, feats, train=False)
        query_emb = nets.embed(net, [query], train=False)
        protos = protonet.compute_prototypes(
            support_emb, np.array(labels), len(names))
        dists = protonet.squared_euclidean(query_emb, protos)
        log_probs = protonet.episode_log_probs(dists)
    probs = np.exp(log_probs.numpy()[0])
    order = np.argsort(-probs)
    print(f"query: {args.query}")
    for rank, c in enumerate(order, 1):
        print(f"{rank}. {names[c]:<20} {probs[c]:.4f}")
    return 0


def _features_for(path, net: nets.Network, what: str = "support clip"):
    clip = audio.load_wav(path)
    if len(clip) < audio.CLIP_SAMPLES:
        raise ValueError(
            f"{path}: {what} is {len(clip) / audio.SAMPLE_RATE:.2f} s; need one second")
    clip = dataset.clip_for_pipeline(clip)
    feats = mfcc(clip)
    if net.input_layout == LAYOUT_TEMPORAL:
        feats = reshape_for_temporal_conv(feats)
    return feats


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="fskws",
        description="Few-shot keyword spotting: dataset synthesis, episodic "
                    "training, evaluation and one-off classification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth", help="synthesize the few-shot dataset manifest")
    p.add_argument("--input", default=_env_default(),
                   help=f"Speech Commands v2 root (default: ${DATA_DIR_ENV})")
    p.add_argument("--output", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--config", help="key=value overrides (silence_count, grouping_threshold)")
    p.set_defaults(fn=cmd_synth)

    p = sub.add_parser("train", help="episodic training")
    p.add_argument("--manifest", default=_env_default("manifest.jsonl"))
    p.add_argument("--arch", choices=nets.ALL_KINDS, default=None)
    p.add_argument("--case", choices=trainer.CASES, default=None)
    p.add_argument("--n-way", type=int, default=None)
    p.add_argument("--k-shot", type=int, default=None)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--profile", choices=tuple(trainer.PROFILES), default=None)
    p.add_argument("--config", help="key=value overrides of any TrainConfig field")
    p.add_argument("--output", default=".", help="directory for checkpoint and log")
    p.set_defaults(fn=cmd_train)

    p = sub.add_parser("eval", help="evaluate a checkpoint on TEST episodes")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--manifest", default=_env_default("manifest.jsonl"))
    p.add_argument("--k-shot-sweep", help="comma list of K values, e.g. 1,2,3,4,5")
    p.add_argument("--k-shot", type=int, default=None)
    p.add_argument("--n-way", type=int, default=None)
    p.add_argument("--episodes", type=int, default=100)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--output", help="write the results CSV here")
    p.set_defaults(fn=cmd_eval)

    p = sub.add_parser("classify", help="classify one query against support folders")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--support", required=True,
                   help="directory with one subfolder of WAVs per keyword")
    p.add_argument("--query", required=True, help="one-second WAV to classify")
    p.set_defaults(fn=cmd_classify)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except trainer.NanLoss as exc:
        print(f"error: {exc}", file=sys.stderr)
        if exc.episode_dump:
            print(json.dumps(exc.episode_dump, indent=2), file=sys.stderr)
        return 3
    except FloatingPointError as exc:
        print(f"error: numeric failure: {exc}", file=sys.stderr)
        return 3
    except _USAGE_ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
