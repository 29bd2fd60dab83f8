"""Retrieval ranks, Recall@K, median rank and multiple-choice scoring.

A *model* here is anything with ``score_matrix(captions, videos)`` returning
``out[i, j] = S(caption_i, video_j)``; :class:`oemb.model.JointModel` is the
usual one.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

N_CHOICES = 5


def _ranks_of_diagonal(scores: np.ndarray) -> np.ndarray:
    """Rank of ``scores[i, i]`` within row ``i``: 1 + count of strictly larger entries."""
    diag = np.diag(scores)
    better = scores > diag[:, None]
    return 1 + better.sum(axis=1)


def annotation_ranks_from_scores(scores) -> np.ndarray:
    """Each video (column) ranks all captions; ties favour the ground truth."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty score matrix")
    return _ranks_of_diagonal(s.T)


def retrieval_ranks_from_scores(scores) -> np.ndarray:
    """Each caption (row) ranks all videos; ties favour the ground truth."""
    s = np.asarray(scores, dtype=np.float64)
    if s.size == 0:
        raise ValueError("empty score matrix")
    return _ranks_of_diagonal(s)


def _check_pairs(videos, captions):
    if len(videos) == 0 or len(captions) == 0:
        raise ValueError("need at least one video/caption pair")
    if len(videos) != len(captions):
        raise ValueError(f"{len(videos)} videos but {len(captions)} captions")


def rank_annotation(model, videos: Sequence, captions: Sequence) -> np.ndarray:
    _check_pairs(videos, captions)
    return annotation_ranks_from_scores(model.score_matrix(captions, videos))


def rank_retrieval(model, videos: Sequence, captions: Sequence) -> np.ndarray:
    _check_pairs(videos, captions)
    return retrieval_ranks_from_scores(model.score_matrix(captions, videos))


def recall_at_k(ranks, k: int) -> float:
    ranks = np.asarray(ranks)
    if ranks.size == 0:
        raise ValueError("empty rank list")
    if k < 1:
        raise ValueError("k must be >= 1")
    return 100.0 * np.count_nonzero(ranks <= k) / ranks.size


def median_rank(ranks) -> float:
    ranks = np.asarray(ranks, dtype=np.float64)
    if ranks.size == 0:
        raise ValueError("empty rank list")
    return float(np.median(ranks))


def rank_report(task: str, ranks, ks=(1, 5, 10)) -> dict:
    return {"task": task, "pool_size": int(len(ranks)),
            "r_at": {str(k): recall_at_k(ranks, k) for k in ks},
            "medr": median_rank(ranks)}


def argmax_first(scores) -> int:
    """Index of the largest score; the lowest index wins ties."""
    return int(np.argmax(np.asarray(scores, dtype=np.float64)))


def mc_answer(model, video, choices: Sequence) -> int:
    if len(choices) != N_CHOICES:
        raise ValueError(f"expected {N_CHOICES} choices, got {len(choices)}")
    return argmax_first(model.score_matrix(list(choices), [video])[:, 0])


@dataclass(frozen=True)
class McQuestion:
    video_id: str
    choice_ids: tuple[str, ...]
    answer_index: int | None

    def to_record(self, blind: bool = False) -> dict:
        rec = {"video_id": self.video_id, "choices": list(self.choice_ids)}
        if not blind:
            rec["answer"] = self.answer_index
        return rec

    @classmethod
    def from_record(cls, rec: dict) -> "McQuestion":
        choices = tuple(rec["choices"])
        if len(choices) != N_CHOICES:
            raise ValueError(f"question {rec.get('video_id')!r}: expected {N_CHOICES} choices")
        answer = rec.get("answer")
        if answer is not None and not (isinstance(answer, int) and 0 <= answer < N_CHOICES):
            raise ValueError(f"question {rec.get('video_id')!r}: bad answer {answer!r}")
        return cls(str(rec["video_id"]), choices, answer)


def mc_predictions(model, test: Sequence[McQuestion], videos: dict, captions: dict) -> list[int]:
    """Chosen index per question; ``videos``/``captions`` map ids to feature matrices."""
    return [mc_answer(model, videos[q.video_id], [captions[c] for c in q.choice_ids])
            for q in test]


def mc_accuracy(model, test: Sequence[McQuestion], videos: dict, captions: dict) -> float:
    if not test:
        raise ValueError("empty multiple-choice test")
    if any(q.answer_index is None for q in test):
        raise ValueError("accuracy needs answers; got a blind test")
    preds = mc_predictions(model, test, videos, captions)
    correct = sum(p == q.answer_index for p, q in zip(preds, test))
    return 100.0 * correct / len(test)
