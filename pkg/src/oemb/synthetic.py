"""Toy caption/video corpora with known structure, for smoke tests and demos.

``concept_corpus``: every sample mixes ``k`` of ``n_concepts`` latent
concepts. Caption tokens are noisy word-space images of those concepts
(plus a few pure-noise filler tokens); video frames are noisy video-space
sums of them. Activity labels name the concepts, so captions with disjoint
concept sets share no label word.

``order_corpus``: every caption is a permutation of the same ``n_tokens``
words and the video encodes that permutation. Averaging the tokens throws
the order away; a recurrent encoder can keep it.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from itertools import permutations

import numpy as np

from .data import DatasetManifest, ManifestItem


@dataclass
class Corpus:
    captions: list[np.ndarray]
    videos: list[np.ndarray]
    labels: list[tuple[str, ...]] = field(default_factory=list)

    def pairs(self, idx=None):
        idx = range(len(self.captions)) if idx is None else idx
        return [(self.captions[i], self.videos[i]) for i in idx]

    def __len__(self) -> int:
        return len(self.captions)


def concept_corpus(n: int, rng: np.random.Generator, n_concepts: int = 32, k: int = 3,
                   d_w: int = 16, d_v: int = 32, word_noise: float = 0.2,
                   frame_noise: float = 0.5, frames: tuple[int, int] = (3, 8),
                   fillers: tuple[int, int] = (0, 2), tables=None) -> tuple[Corpus, tuple]:
    """``n`` samples; pass the returned ``tables`` back in to draw more from the same world."""
    if tables is None:
        tables = (rng.normal(size=(n_concepts, d_w)), rng.normal(size=(n_concepts, d_v)))
    word_vecs, video_vecs = tables
    caps, vids, labels = [], [], []
    for _ in range(n):
        concepts = rng.choice(len(word_vecs), size=k, replace=False)
        toks = word_vecs[concepts] + word_noise * rng.normal(size=(k, word_vecs.shape[1]))
        n_fill = int(rng.integers(fillers[0], fillers[1] + 1))
        toks = np.vstack([toks, word_noise * rng.normal(size=(n_fill, word_vecs.shape[1]))])
        caps.append(toks[rng.permutation(len(toks))])
        m = int(rng.integers(frames[0], frames[1] + 1))
        base = video_vecs[concepts].sum(axis=0)
        vids.append(base + frame_noise * rng.normal(size=(m, video_vecs.shape[1])))
        labels.append(tuple(f"act{c} obj{c}" for c in sorted(concepts)))
    return Corpus(caps, vids, labels), tables


def order_corpus(n: int, rng: np.random.Generator, n_tokens: int = 5, d_w: int = 16,
                 d_v: int = 32, word_noise: float = 0.1, frame_noise: float = 0.2,
                 frames: tuple[int, int] = (3, 8), tables=None, distinct: bool = False):
    """Captions are permutations of one token set; videos show the permutation matrix."""
    if n_tokens * n_tokens > d_v:
        raise ValueError("d_v must hold the flattened permutation matrix")
    if tables is None:
        tables = rng.normal(size=(n_tokens, d_w))
    all_perms = list(permutations(range(n_tokens)))
    if distinct:
        if n > len(all_perms):
            raise ValueError(f"only {len(all_perms)} distinct orderings")
        chosen = [all_perms[i] for i in rng.choice(len(all_perms), size=n, replace=False)]
    else:
        chosen = [all_perms[i] for i in rng.integers(len(all_perms), size=n)]
    caps, vids = [], []
    for perm in chosen:
        caps.append(tables[list(perm)] + word_noise * rng.normal(size=(n_tokens, d_w)))
        code = np.zeros(d_v)
        for pos, tok in enumerate(perm):
            code[pos * n_tokens + tok] = 1.0
        m = int(rng.integers(frames[0], frames[1] + 1))
        vids.append(code + frame_noise * rng.normal(size=(m, d_v)))
    return Corpus(caps, vids), tables


def corpus_manifest(corpus: Corpus, split: str = "test", prefix: str = "s") -> tuple[
        DatasetManifest, dict[str, np.ndarray], dict[str, np.ndarray]]:
    """In-memory manifest over ``corpus`` plus id -> caption / video feature maps.

    Feature paths are placeholders naming each sample's video; nothing is
    read from disk.
    """
    items, caps, vids = [], {}, {}
    for i in range(len(corpus)):
        sid = f"{prefix}{i:06d}"
        labels = corpus.labels[i] if corpus.labels else ()
        items.append(ManifestItem(sid, split, f"/synthetic/{sid}.vfea", ("tok",), labels))
        caps[sid] = corpus.captions[i]
        vids[sid] = corpus.videos[i]
    return DatasetManifest(tuple(items)), caps, vids
