"""Command-line entry point: ``oemb <command> [options]``.

Reports go to stdout as JSON lines, logs to stderr. Exit status is 0 on
success, 1 for invalid input (config, paths, file formats) and 2 for
failures while running.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
from pathlib import Path

import numpy as np

from . import checkpoint as ckpt
from .data import (DataFormatError, EmptySentenceError, assemble_pairs, atomic_write_bytes,
                   encode_tokens, load_manifest, load_video_features, load_word_table,
                   manifest_record, merge_manifests, subsample_frames, write_video_features)
from .evaluation import mc_accuracy, mc_predictions, rank_annotation, rank_report, rank_retrieval
from .mctest import BuildStats, InsufficientDistractorsError, build_mc_test, load_mc_test, \
    write_mc_test
from .model import JointModel
from .trainer import TrainConfig, grad_check, train

log = logging.getLogger("oemb")

COMMANDS = ("prepare", "train", "eval-rank", "build-mc", "eval-mc", "attend", "grad-check")
PATH_KEYS = ("word_table", "train_manifest", "valid_manifest", "test_manifest", "checkpoint_dir")
EXTRA_KEYS = ("use_rephrases",)
CHECKPOINT_NAME = "model.oemb"
GRAD_CHECK_TOL = 1e-4


class ConfigError(ValueError):
    pass


def emit(record: dict) -> None:
    sys.stdout.write(json.dumps(record, sort_keys=True) + "\n")
    sys.stdout.flush()


# Config --------------------------------------------------------------------


def load_run_config(path, overrides: dict | None = None) -> dict:
    """Read a JSON run config, rejecting unknown keys; ``overrides`` win."""
    try:
        raw = json.loads(Path(path).read_text(encoding="utf-8"))
    except FileNotFoundError:
        raise ConfigError(f"config file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise ConfigError(f"{path}: invalid JSON ({exc.msg} at line {exc.lineno})") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: config must be a JSON object")
    allowed = TrainConfig.field_names() | set(PATH_KEYS) | set(EXTRA_KEYS)
    unknown = sorted(set(raw) - allowed)
    if unknown:
        raise ConfigError(f"{path}: unknown config keys {unknown}")
    base = Path(path).resolve().parent
    for key in PATH_KEYS:
        if key not in raw:
            continue
        val = raw[key]
        if key == "train_manifest" and isinstance(val, list):
            raw[key] = [str(base / v) for v in val]
        elif isinstance(val, str):
            raw[key] = str(base / val)
        else:
            raise ConfigError(f"{path}: {key} must be a path string")
    raw.update({k: v for k, v in (overrides or {}).items() if v is not None})
    return raw


def train_config(run: dict) -> TrainConfig:
    try:
        return TrainConfig(**{k: v for k, v in run.items() if k in TrainConfig.field_names()})
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad training config: {exc}") from None


def require(run: dict, *keys: str) -> None:
    for key in keys:
        if key not in run:
            raise ConfigError(f"config needs {key!r}")
        paths = run[key] if isinstance(run[key], list) else [run[key]]
        for p in paths:
            if key != "checkpoint_dir" and not Path(p).exists():
                raise ConfigError(f"{key} does not exist: {p}")


def checkpoint_path(args, run: dict) -> Path:
    if args.checkpoint:
        path = Path(args.checkpoint)
    elif "checkpoint_dir" in run:
        path = Path(run["checkpoint_dir"]) / CHECKPOINT_NAME
    else:
        raise ConfigError("no checkpoint: pass --checkpoint or set checkpoint_dir")
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path}")
    return path


def _manifest(path_or_list):
    if isinstance(path_or_list, list):
        return merge_manifests(load_manifest(p) for p in path_or_list)
    return load_manifest(path_or_list)


# Commands ------------------------------------------------------------------


def cmd_prepare(args) -> int:
    src = Path(args.manifest)
    if not src.exists():
        raise ConfigError(f"manifest does not exist: {src}")
    man = load_manifest(src)
    out = Path(args.out)
    converted: dict[Path, str] = {}
    records = []
    for it in man.items:
        rec = manifest_record(it)
        path = man.resolve(it)
        if path is not None:
            if path not in converted:
                if not path.exists():
                    raise ConfigError(f"{src}: features for {it.sample_id!r} not found: {path}")
                frames = _read_raw_frames(path)
                rel = f"features/{len(converted):06d}_{path.stem}.vfea"
                write_video_features(out / rel, subsample_frames(frames, args.stride))
                converted[path] = rel
            rec["features"] = converted[path]
        records.append(json.dumps(rec, sort_keys=True) + "\n")
    atomic_write_bytes(out / src.name, "".join(records).encode("utf-8"))
    emit({"command": "prepare", "items": len(records), "videos": len(converted),
          "stride": args.stride, "manifest": str(out / src.name)})
    return 0


def _read_raw_frames(path: Path) -> np.ndarray:
    if path.suffix == ".npy":
        frames = np.load(path, allow_pickle=False)
        if frames.ndim == 1:
            frames = frames[None, :]
        if frames.ndim != 2 or 0 in frames.shape:
            raise DataFormatError(f"{path}: expected a non-empty 2-D array, got {frames.shape}")
        if not np.all(np.isfinite(frames)):
            raise DataFormatError(f"{path}: non-finite frame value")
        return frames
    return load_video_features(path)


def cmd_train(args) -> int:
    from filelock import FileLock, Timeout

    run = load_run_config(args.config, {"arch": args.arch, "loss_kind": args.loss,
                                        "rng_seed": args.seed})
    cfg = train_config(run)
    require(run, "word_table", "train_manifest", "valid_manifest")
    out = Path(args.out or run.get("checkpoint_dir") or "")
    if not str(out):
        raise ConfigError("no output directory: pass --out or set checkpoint_dir")
    out.mkdir(parents=True, exist_ok=True)
    table = load_word_table(run["word_table"])
    use_rephrases = bool(run.get("use_rephrases", True))
    tr = assemble_pairs(_manifest(run["train_manifest"]), table, "train", use_rephrases)
    va = assemble_pairs(load_manifest(run["valid_manifest"]), table, "valid", use_rephrases)
    log.info("train pairs %d (skipped %s), valid pairs %d", len(tr), tr.skipped, len(va))
    if len(tr) < 2 or len(va) < 2:
        raise ConfigError("need at least 2 training and 2 validation pairs")

    history_lines: list[str] = []

    def on_epoch(rec, best, improved):
        entry = {"epoch": rec.epoch, "train_loss": rec.train_loss,
                 "monitor_loss": rec.monitor_loss}
        history_lines.append(json.dumps(entry, sort_keys=True) + "\n")
        atomic_write_bytes(out / "history.jsonl", "".join(history_lines).encode("utf-8"))
        if improved:
            ckpt.save_checkpoint(out / CHECKPOINT_NAME, best)
        emit({**entry, "wall_ms": round(rec.wall_ms, 3)})

    try:
        with FileLock(str(out / ".lock"), timeout=0):
            effective = {**cfg.to_dict(), "use_rephrases": use_rephrases}
            atomic_write_bytes(out / "config.json",
                               (json.dumps(effective, sort_keys=True, indent=1) + "\n").encode())
            best, history = train(cfg, tr.pairs(), va.pairs(), on_epoch=on_epoch)
            ckpt.save_checkpoint(out / CHECKPOINT_NAME, best)
    except Timeout:
        raise RuntimeError(f"another trainer holds {out / '.lock'}") from None
    best_rec = min(history, key=lambda r: r.monitor_loss)
    emit({"command": "train", "epochs": len(history), "best_epoch": best_rec.epoch,
          "best_monitor_loss": best_rec.monitor_loss, "checkpoint": str(out / CHECKPOINT_NAME)})
    return 0


def cmd_eval_rank(args) -> int:
    run = load_run_config(args.config)
    require(run, "word_table", "test_manifest")
    model = JointModel(ckpt.load_checkpoint(checkpoint_path(args, run)))
    table = load_word_table(run["word_table"])
    pairs = assemble_pairs(load_manifest(run["test_manifest"]), table, args.split,
                           bool(run.get("use_rephrases", True)))
    if len(pairs) == 0:
        raise ConfigError(f"no caption/video pairs in split {args.split!r}")
    idx = np.arange(len(pairs))
    if args.subsample is not None and args.subsample < len(pairs):
        rng = np.random.default_rng(args.seed if args.seed is not None else 0)
        idx = np.sort(rng.choice(len(pairs), size=args.subsample, replace=False))
    caps = [pairs.captions[i] for i in idx]
    vids = [pairs.videos[i] for i in idx]
    reports = [rank_report("annotation", rank_annotation(model, vids, caps)),
               rank_report("retrieval", rank_retrieval(model, vids, caps))]
    for rep in reports:
        emit(rep)
    if args.out:
        text = "".join(json.dumps(r, sort_keys=True) + "\n" for r in reports)
        atomic_write_bytes(Path(args.out) / "rank_report.jsonl", text.encode("utf-8"))
    return 0


def cmd_build_mc(args) -> int:
    if args.manifest:
        man_path = args.manifest
    else:
        if not args.config:
            raise ConfigError("build-mc needs --manifest or --config with test_manifest")
        run = load_run_config(args.config)
        require(run, "test_manifest")
        man_path = run["test_manifest"]
    if not Path(man_path).exists():
        raise ConfigError(f"manifest does not exist: {man_path}")
    stats = BuildStats()
    questions = build_mc_test(load_manifest(man_path), args.split, args.seed,
                              args.exclude_same_video, args.on_insufficient, stats)
    out = Path(args.out)
    write_mc_test(out / "mc_test.jsonl", questions)
    write_mc_test(out / "mc_test_blind.jsonl", questions, blind=True)
    emit({"command": "build-mc", "questions": stats.questions,
          "skipped_unlabeled": stats.skipped_unlabeled,
          "skipped_insufficient": len(stats.skipped_insufficient),
          "test": str(out / "mc_test.jsonl")})
    return 0


def _caption_lookup(table, items: dict, ids) -> dict:
    out = {}
    for cid in ids:
        if cid not in items:
            raise ConfigError(f"caption {cid!r} not in the manifest")
        try:
            out[cid] = encode_tokens(table, items[cid].caption_tokens)
        except EmptySentenceError:
            raise ConfigError(f"caption {cid!r} has no in-vocabulary tokens") from None
    return out


def _video_lookup(manifest, items: dict, ids) -> dict:
    out = {}
    for vid in ids:
        it = items.get(vid)
        path = manifest.resolve(it) if it is not None else None
        if path is None:
            raise ConfigError(f"video {vid!r} has no features in the manifest")
        out[vid] = load_video_features(path)
    return out


def cmd_eval_mc(args) -> int:
    run = load_run_config(args.config)
    require(run, "word_table", "test_manifest")
    if not Path(args.mc).exists():
        raise ConfigError(f"multiple-choice file not found: {args.mc}")
    model = JointModel(ckpt.load_checkpoint(checkpoint_path(args, run)))
    table = load_word_table(run["word_table"])
    man = load_manifest(run["test_manifest"])
    items = man.by_id()
    test = load_mc_test(args.mc)
    if not test:
        raise ConfigError(f"{args.mc}: no questions")
    caps = _caption_lookup(table, items, {c for q in test for c in q.choice_ids})
    vids = _video_lookup(man, items, {q.video_id for q in test})
    if any(q.answer_index is None for q in test):
        preds = mc_predictions(model, test, vids, caps)
        lines = "".join(json.dumps({"video_id": q.video_id, "answer": p}) + "\n"
                        for q, p in zip(test, preds))
        if args.out:
            atomic_write_bytes(Path(args.out) / "mc_predictions.jsonl", lines.encode("utf-8"))
        else:
            sys.stdout.write(lines)
        emit({"task": "mc", "n": len(test), "accuracy": None})
        return 0
    emit({"task": "mc", "n": len(test), "accuracy": mc_accuracy(model, test, vids, caps)})
    return 0


def cmd_attend(args) -> int:
    run = load_run_config(args.config)
    require(run, "word_table")
    params = ckpt.load_checkpoint(checkpoint_path(args, run))
    if params.arch != "m3":
        raise ConfigError(f"attend needs an m3 checkpoint, got {params.arch}")
    model = JointModel(params)
    table = load_word_table(run["word_table"])
    try:
        phrase = encode_tokens(table, args.phrase.split())
    except EmptySentenceError:
        raise ConfigError(f"phrase has no in-vocabulary tokens: {args.phrase!r}") from None
    keys = [k for k in ("test_manifest", "valid_manifest", "train_manifest") if k in run]
    if not keys:
        raise ConfigError("config needs a manifest to look up video ids")
    require(run, *keys)
    man = merge_manifests(_manifest(run[k]) for k in keys)
    vids = _video_lookup(man, man.by_id(), args.videos)
    weights = model.attention(phrase, [vids[v] for v in args.videos])
    for vid, alpha in zip(args.videos, weights):
        emit({"video_id": vid, "phrase": args.phrase, "frames": int(len(alpha)),
              "weights": [float(a) for a in alpha], "argmax": int(np.argmax(alpha))})
    return 0


def cmd_grad_check(args) -> int:
    seed = args.seed if args.seed is not None else 0
    ok = True
    archs = [args.arch] if args.arch else ["m1", "m2", "m3"]
    for arch in archs:
        cfg = TrainConfig(arch=arch, loss_kind=args.loss or "pairwise")
        err = max(grad_check(cfg, s) for s in range(seed, seed + args.trials))
        ok &= err < GRAD_CHECK_TOL
        emit({"arch": arch, "loss": cfg.loss_kind, "seeds": args.trials,
              "max_rel_error": err, "pass": bool(err < GRAD_CHECK_TOL)})
    return 0 if ok else 2


# Parser --------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="oemb", description="Order-embedding video/caption toolkit.")
    sub = p.add_subparsers(dest="command", metavar="command")

    def add(name, help_):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = add("prepare", "convert raw frame features to subsampled VFEA files")
    sp.add_argument("--manifest", required=True)
    sp.add_argument("--out", required=True)
    sp.add_argument("--stride", type=int, default=10)

    sp = add("train", "train a model")
    sp.add_argument("--config", required=True)
    sp.add_argument("--arch", choices=("m1", "m2", "m3"))
    sp.add_argument("--loss", choices=("pairwise", "annotation"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")

    sp = add("eval-rank", "annotation and retrieval Recall@K / median rank")
    sp.add_argument("--config", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--split", default="test", choices=("train", "valid", "test"))
    sp.add_argument("--subsample", type=int)
    sp.add_argument("--seed", type=int)
    sp.add_argument("--out")

    sp = add("build-mc", "build a multiple-choice test")
    sp.add_argument("--config")
    sp.add_argument("--manifest")
    sp.add_argument("--split", default="test", choices=("train", "valid", "test"))
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--out", required=True)
    sp.add_argument("--exclude-same-video", action=argparse.BooleanOptionalAction, default=True)
    sp.add_argument("--on-insufficient", choices=("skip", "abort"), default="skip")

    sp = add("eval-mc", "score a multiple-choice test")
    sp.add_argument("--config", required=True)
    sp.add_argument("--mc", required=True)
    sp.add_argument("--checkpoint")
    sp.add_argument("--out")

    sp = add("attend", "per-frame attention weights of an m3 model for a phrase")
    sp.add_argument("--config", required=True)
    sp.add_argument("--phrase", required=True)
    sp.add_argument("--videos", nargs="+", required=True)
    sp.add_argument("--checkpoint")

    sp = add("grad-check", "compare analytic and finite-difference gradients")
    sp.add_argument("--arch", choices=("m1", "m2", "m3"))
    sp.add_argument("--loss", choices=("pairwise", "annotation"))
    sp.add_argument("--seed", type=int)
    sp.add_argument("--trials", type=int, default=1)
    return p


HANDLERS = {"prepare": cmd_prepare, "train": cmd_train, "eval-rank": cmd_eval_rank,
            "build-mc": cmd_build_mc, "eval-mc": cmd_eval_mc, "attend": cmd_attend,
            "grad-check": cmd_grad_check}


def _limit_threads():
    n = os.environ.get("OEMB_THREADS")
    if not n:
        return None
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:
        return None
    return threadpool_limits(int(n))


def dispatch(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if not argv or argv[0] not in COMMANDS:
        if argv and argv[0] in ("-h", "--help"):
            build_parser().print_help()
            return 0
        got = argv[0] if argv else "nothing"
        sys.stderr.write(f"oemb: unknown command {got!r}; expected one of {', '.join(COMMANDS)}\n")
        return 1
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 0 if exc.code == 0 else 1
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s", stream=sys.stderr)
    _limit_threads()
    try:
        return HANDLERS[args.command](args)
    except (ConfigError, DataFormatError, InsufficientDistractorsError) as exc:
        sys.stderr.write(f"oemb {args.command}: {exc}\n")
        return 1
    except Exception as exc:  # noqa: BLE001
        log.debug("failure", exc_info=True)
        sys.stderr.write(f"oemb {args.command}: {type(exc).__name__}: {exc}\n")
        return 2


def main() -> None:
    sys.exit(dispatch())
