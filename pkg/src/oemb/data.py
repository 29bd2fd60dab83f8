"""Loaders for word tables, VFEA frame-feature files and dataset manifests.

Sentence and video feature matrices are plain read-only ``numpy`` arrays of
shape ``(N, d_w)`` and ``(M, d_v)``.
"""
from __future__ import annotations

import json
import os
import struct
import tempfile
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Mapping

import numpy as np

VFEA_MAGIC = b"VFEA"
_VFEA_HEADER = struct.Struct("<4sII")
SPLITS = ("train", "valid", "test")


class DataFormatError(ValueError):
    """Malformed input file; the message names the file and line when known."""


class EmptySentenceError(ValueError):
    pass


def _frozen(a: np.ndarray) -> np.ndarray:
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class WordTable:
    entries: Mapping[str, np.ndarray]
    d_w: int

    def __contains__(self, token: str) -> bool:
        return token in self.entries

    def __len__(self) -> int:
        return len(self.entries)


def load_word_table(path) -> WordTable:
    """Read a GloVe-style text table: ``token f1 ... f_dw`` per line."""
    entries: dict[str, np.ndarray] = {}
    d_w = None
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line.strip():
                continue
            parts = line.split(" ")
            token, raw = parts[0], [p for p in parts[1:] if p]
            try:
                vec = np.array([float(x) for x in raw], dtype=np.float64)
            except ValueError as exc:
                raise DataFormatError(f"{path}:{lineno}: unparsable float ({exc})") from None
            if d_w is None:
                if vec.size == 0:
                    raise DataFormatError(f"{path}:{lineno}: no vector values")
                d_w = vec.size
            elif vec.size != d_w:
                raise DataFormatError(
                    f"{path}:{lineno}: expected {d_w} values, found {vec.size}")
            if token in entries:
                raise DataFormatError(f"{path}:{lineno}: duplicate token {token!r}")
            if not np.all(np.isfinite(vec)):
                raise DataFormatError(f"{path}:{lineno}: non-finite value")
            entries[token] = _frozen(vec)
    if not entries:
        raise DataFormatError(f"{path}: empty word table")
    return WordTable(entries, d_w)


def encode_tokens(table: WordTable, tokens: Iterable[str]) -> np.ndarray:
    """Stack the vectors of in-vocabulary tokens; unknown tokens are dropped."""
    tokens = list(tokens)
    if not tokens:
        raise EmptySentenceError("no tokens given")
    rows = [table.entries[t] for t in tokens if t in table.entries]
    if not rows:
        raise EmptySentenceError(f"all tokens out of vocabulary: {tokens!r}")
    return _frozen(np.vstack(rows))


def load_video_features(path) -> np.ndarray:
    data = Path(path).read_bytes()
    if len(data) < _VFEA_HEADER.size:
        raise DataFormatError(f"{path}: truncated header")
    magic, m, d = _VFEA_HEADER.unpack_from(data)
    if magic != VFEA_MAGIC:
        raise DataFormatError(f"{path}: bad magic {magic!r}")
    if m == 0 or d == 0:
        raise DataFormatError(f"{path}: empty matrix in header (M={m}, d={d})")
    payload = data[_VFEA_HEADER.size:]
    if len(payload) != 4 * m * d:
        raise DataFormatError(
            f"{path}: truncated payload, header says {m}x{d} floats "
            f"but file holds {len(payload) // 4}")
    frames = np.frombuffer(payload, dtype="<f4").reshape(m, d)
    if not np.all(np.isfinite(frames)):
        raise DataFormatError(f"{path}: non-finite frame value")
    return frames


def write_video_features(path, frames) -> None:
    frames = np.ascontiguousarray(frames, dtype="<f4")
    if frames.ndim != 2 or 0 in frames.shape:
        raise ValueError(f"expected a non-empty 2-D matrix, got shape {frames.shape}")
    blob = _VFEA_HEADER.pack(VFEA_MAGIC, *frames.shape) + frames.tobytes()
    atomic_write_bytes(path, blob)


def atomic_write_bytes(path, blob: bytes) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(blob)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def subsample_frames(frames: np.ndarray, stride: int) -> np.ndarray:
    """Keep frames 0, stride, 2*stride, ...; a single frame stays as is."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")
    return frames[::stride]


@dataclass(frozen=True)
class ManifestItem:
    sample_id: str
    split: str
    feature_path: str | None
    caption_tokens: tuple[str, ...]
    activity_labels: tuple[str, ...] = ()
    is_rephrase: bool = False


@dataclass(frozen=True)
class DatasetManifest:
    items: tuple[ManifestItem, ...]
    root: Path = field(default=Path("."))

    def split(self, name: str) -> list[ManifestItem]:
        return [it for it in self.items if it.split == name]

    def resolve(self, item: ManifestItem) -> Path | None:
        if item.feature_path is None:
            return None
        p = Path(item.feature_path)
        return p if p.is_absolute() else self.root / p

    def by_id(self) -> dict[str, ManifestItem]:
        return {it.sample_id: it for it in self.items}


_MANIFEST_KEYS = {"id", "split", "features", "tokens", "activity_labels", "rephrase"}


def parse_manifest_record(rec: dict, where: str = "") -> ManifestItem:
    if not isinstance(rec, dict):
        raise DataFormatError(f"{where}: record is not a JSON object")
    unknown = set(rec) - _MANIFEST_KEYS
    if unknown:
        raise DataFormatError(f"{where}: unknown keys {sorted(unknown)}")
    for key in ("id", "split", "tokens"):
        if key not in rec:
            raise DataFormatError(f"{where}: missing key {key!r}")
    if not isinstance(rec["id"], str):
        raise DataFormatError(f"{where}: id must be a string")
    if rec["split"] not in SPLITS:
        raise DataFormatError(f"{where}: unknown split {rec['split']!r}")
    tokens = rec["tokens"]
    if not isinstance(tokens, list) or not all(isinstance(t, str) for t in tokens):
        raise DataFormatError(f"{where}: tokens must be an array of strings")
    if not tokens:
        raise DataFormatError(f"{where}: empty caption for {rec['id']!r}")
    feats = rec.get("features")
    if feats is not None and not isinstance(feats, str):
        raise DataFormatError(f"{where}: features must be a path or null")
    labels = rec.get("activity_labels", [])
    if not isinstance(labels, list) or not all(isinstance(x, str) for x in labels):
        raise DataFormatError(f"{where}: activity_labels must be an array of strings")
    rephrase = rec.get("rephrase", False)
    if not isinstance(rephrase, bool):
        raise DataFormatError(f"{where}: rephrase must be a boolean")
    return ManifestItem(rec["id"], rec["split"], feats, tuple(tokens), tuple(labels), rephrase)


def load_manifest(path) -> DatasetManifest:
    """Load a JSON-lines manifest; relative feature paths resolve against its directory."""
    items = []
    seen: set[str] = set()
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            where = f"{path}:{lineno}"
            try:
                rec = json.loads(line)
            except json.JSONDecodeError as exc:
                raise DataFormatError(f"{where}: invalid JSON ({exc.msg})") from None
            item = parse_manifest_record(rec, where)
            if item.sample_id in seen:
                raise DataFormatError(f"{where}: duplicate id {item.sample_id!r}")
            seen.add(item.sample_id)
            items.append(item)
    return DatasetManifest(tuple(items), Path(path).resolve().parent)


def merge_manifests(manifests: Iterable[DatasetManifest]) -> DatasetManifest:
    """Union of several manifests with feature paths made absolute."""
    items, seen = [], set()
    for man in manifests:
        for it in man.items:
            if it.sample_id in seen:
                raise DataFormatError(f"duplicate id {it.sample_id!r} across manifests")
            seen.add(it.sample_id)
            p = man.resolve(it)
            items.append(ManifestItem(it.sample_id, it.split, None if p is None else str(p),
                                      it.caption_tokens, it.activity_labels, it.is_rephrase))
    return DatasetManifest(tuple(items), Path("."))


def manifest_record(item: ManifestItem) -> dict:
    return {"id": item.sample_id, "split": item.split, "features": item.feature_path,
            "tokens": list(item.caption_tokens), "activity_labels": list(item.activity_labels),
            "rephrase": item.is_rephrase}


@dataclass
class PairSet:
    """Caption/video pairs assembled from a manifest split."""
    ids: list[str]
    captions: list[np.ndarray]
    videos: list[np.ndarray]
    skipped: dict[str, int]

    def pairs(self) -> list[tuple[np.ndarray, np.ndarray]]:
        return list(zip(self.captions, self.videos))

    def __len__(self) -> int:
        return len(self.ids)


def assemble_pairs(manifest: DatasetManifest, table: WordTable, split: str | None = None,
                   use_rephrases: bool = True) -> PairSet:
    """Encode every captioned video of ``split``; caption-only rows are skipped."""
    ids, caps, vids = [], [], []
    skipped = {"no_features": 0, "all_oov": 0, "rephrase": 0}
    cache: dict[Path, np.ndarray] = {}
    for it in manifest.items:
        if split is not None and it.split != split:
            continue
        path = manifest.resolve(it)
        if path is None:
            skipped["no_features"] += 1
            continue
        if it.is_rephrase and not use_rephrases:
            skipped["rephrase"] += 1
            continue
        try:
            sent = encode_tokens(table, it.caption_tokens)
        except EmptySentenceError:
            skipped["all_oov"] += 1
            continue
        if path not in cache:
            cache[path] = load_video_features(path)
        ids.append(it.sample_id)
        caps.append(sent)
        vids.append(cache[path])
    return PairSet(ids, caps, vids, skipped)
