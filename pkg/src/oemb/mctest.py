"""Multiple-choice test construction from a caption corpus with activity labels.

Each question pairs a video with its ground-truth caption and four
distractor captions from the same split whose activity-label words do not
overlap the correct caption's.
"""
from __future__ import annotations

import hashlib
import json
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from typing import Iterable, Sequence

import numpy as np

from .data import DataFormatError, DatasetManifest, atomic_write_bytes
from .evaluation import N_CHOICES, McQuestion

log = logging.getLogger(__name__)


class InsufficientDistractorsError(ValueError):
    pass


def label_words(labels: Iterable[str]) -> frozenset[str]:
    """Lowercased whitespace tokens of every phrase, as one set."""
    return frozenset(w.lower() for phrase in labels for w in phrase.split())


def _draw(eligible: Sequence, rng: np.random.Generator, n: int) -> list:
    picks = rng.choice(len(eligible), size=n, replace=False)
    return [eligible[i] for i in picks]


def sample_distractors(pool: Sequence[tuple[str, frozenset]], correct: frozenset,
                       rng: np.random.Generator, n: int = N_CHOICES - 1,
                       name: str = "") -> list[str]:
    """Uniform draw without replacement among pool captions sharing no label word."""
    eligible = [cid for cid, words in pool if not (words & correct)]
    if len(eligible) < n:
        raise InsufficientDistractorsError(
            f"caption {name!r}: only {len(eligible)} eligible distractors, need {n}")
    return _draw(eligible, rng, n)


def question_rng(seed: int, video_id: str) -> np.random.Generator:
    digest = hashlib.sha256(video_id.encode("utf-8")).digest()
    return np.random.default_rng([seed, int.from_bytes(digest[:8], "little")])


@dataclass
class BuildStats:
    questions: int = 0
    skipped_unlabeled: int = 0
    skipped_insufficient: list[str] = field(default_factory=list)


def build_mc_test(manifest: DatasetManifest, split: str, seed: int,
                  exclude_same_video: bool = True, on_insufficient: str = "skip",
                  stats: BuildStats | None = None) -> list[McQuestion]:
    """One question per labeled, non-rephrase video of ``split``.

    Candidate distractors are every other caption in the split (caption-only
    rows included); with ``exclude_same_video`` captions pointing at the same
    feature file as the answer are left out as well. ``on_insufficient`` is
    ``"skip"`` or ``"abort"``.
    """
    if on_insufficient not in ("skip", "abort"):
        raise ValueError("on_insufficient must be 'skip' or 'abort'")
    stats = stats if stats is not None else BuildStats()
    items = manifest.split(split)
    ids = [it.sample_id for it in items]
    words = [label_words(it.activity_labels) for it in items]
    videos = [None if it.feature_path is None else str(manifest.resolve(it)) for it in items]

    index: dict[str, list[int]] = defaultdict(list)
    for k, ws in enumerate(words):
        for w in ws:
            index[w].append(k)
    by_video: dict[str, list[int]] = defaultdict(list)
    for k, v in enumerate(videos):
        if v is not None:
            by_video[v].append(k)

    questions, seen_videos = [], set()
    for k, it in enumerate(items):
        if videos[k] is None or it.is_rephrase or videos[k] in seen_videos:
            continue
        seen_videos.add(videos[k])
        if not words[k]:
            stats.skipped_unlabeled += 1
            continue
        keep = np.ones(len(items), dtype=bool)
        keep[k] = False
        for w in words[k]:
            keep[index[w]] = False
        if exclude_same_video:
            keep[by_video[videos[k]]] = False
        eligible = np.flatnonzero(keep)
        rng = question_rng(seed, it.sample_id)
        if len(eligible) < N_CHOICES - 1:
            msg = (f"caption {it.sample_id!r}: only {len(eligible)} eligible distractors, "
                   f"need {N_CHOICES - 1}")
            if on_insufficient == "abort":
                raise InsufficientDistractorsError(msg)
            stats.skipped_insufficient.append(it.sample_id)
            continue
        choices = [ids[j] for j in _draw(eligible, rng, N_CHOICES - 1)]
        answer = int(rng.integers(N_CHOICES))
        choices.insert(answer, it.sample_id)
        questions.append(McQuestion(it.sample_id, tuple(choices), answer))
    stats.questions = len(questions)
    if stats.skipped_unlabeled or stats.skipped_insufficient:
        log.warning("skipped %d unlabeled and %d under-supplied captions",
                    stats.skipped_unlabeled, len(stats.skipped_insufficient))
    return questions


def dumps_mc_test(questions: Sequence[McQuestion], blind: bool = False) -> str:
    return "".join(json.dumps(q.to_record(blind), sort_keys=True) + "\n" for q in questions)


def write_mc_test(path, questions: Sequence[McQuestion], blind: bool = False) -> None:
    atomic_write_bytes(path, dumps_mc_test(questions, blind).encode("utf-8"))


def load_mc_test(path) -> list[McQuestion]:
    out = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                out.append(McQuestion.from_record(json.loads(line)))
            except (ValueError, KeyError, TypeError) as exc:
                raise DataFormatError(f"{path}:{lineno}: bad question ({exc})") from None
    return out
