"""Order-violation similarity and the two minibatch ranking losses.

Score matrices are indexed ``s[i, j] = S(caption_i, video_j)`` with the
ground-truth pairs on the diagonal.
"""
from __future__ import annotations

import numpy as np

DEFAULT_MARGIN = 0.05
LOSS_KINDS = ("pairwise", "annotation")


def order_similarity(c, v) -> float:
    """``-||max(0, c - v)||^2``; zero exactly when ``c <= v`` componentwise."""
    c = np.asarray(c, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if c.shape != v.shape:
        raise ValueError(f"dimension mismatch: {c.shape} vs {v.shape}")
    d = np.maximum(0.0, c - v)
    return -float(d @ d)


def order_scores(C: np.ndarray, V: np.ndarray, block: int = 64) -> np.ndarray:
    """All-pairs similarity: ``out[i, j] = S(C[i], V[j])``."""
    if C.shape[1] != V.shape[1]:
        raise ValueError(f"dimension mismatch: {C.shape[1]} vs {V.shape[1]}")
    out = np.empty((len(C), len(V)))
    for lo in range(0, len(C), block):
        P = np.maximum(0.0, C[lo:lo + block, None, :] - V[None, :, :])
        out[lo:lo + block] = -np.einsum("ijk,ijk->ij", P, P)
    return out


def order_scores_backward(C: np.ndarray, V: np.ndarray, G: np.ndarray, block: int = 64):
    """Gradients of ``sum(G * order_scores(C, V))`` w.r.t. ``C`` and ``V``."""
    dC = np.empty_like(C, dtype=np.float64)
    dV = np.zeros_like(V, dtype=np.float64)
    for lo in range(0, len(C), block):
        P = np.maximum(0.0, C[lo:lo + block, None, :] - V[None, :, :])
        GP = G[lo:lo + block, :, None] * P
        dC[lo:lo + block] = -2.0 * GP.sum(axis=1)
        dV += 2.0 * GP.sum(axis=0)
    return dC, dV


def _check_square(scores) -> np.ndarray:
    s = np.asarray(scores, dtype=np.float64)
    if s.ndim != 2 or s.shape[0] != s.shape[1]:
        raise ValueError(f"score matrix must be square, got shape {s.shape}")
    return s


def _hinges(s: np.ndarray, margin: float):
    diag = np.diag(s)
    off = ~np.eye(len(s), dtype=bool)
    # caption contrast: column i compares captions j against video i
    cap = np.where(off, margin - diag[None, :] + s, 0.0)
    # video contrast: row i compares videos j against caption i
    vid = np.where(off, margin - diag[:, None] + s, 0.0)
    return cap, vid


def pairwise_rank_loss(scores, margin: float = DEFAULT_MARGIN) -> float:
    s = _check_square(scores)
    cap, vid = _hinges(s, margin)
    return float(np.maximum(0.0, cap).sum() + np.maximum(0.0, vid).sum())


def annotation_rank_loss(scores, margin: float = DEFAULT_MARGIN) -> float:
    s = _check_square(scores)
    cap, _ = _hinges(s, margin)
    return float(np.maximum(0.0, cap).sum())


def rank_loss(scores, margin: float = DEFAULT_MARGIN, kind: str = "pairwise") -> float:
    if kind == "pairwise":
        return pairwise_rank_loss(scores, margin)
    if kind == "annotation":
        return annotation_rank_loss(scores, margin)
    raise ValueError(f"unknown loss kind {kind!r}")


def rank_loss_grad(scores, margin: float = DEFAULT_MARGIN, kind: str = "pairwise"):
    """Loss value and its (sub)gradient w.r.t. every score entry.

    Hinges contribute nothing at exactly zero.
    """
    if kind not in LOSS_KINDS:
        raise ValueError(f"unknown loss kind {kind!r}")
    s = _check_square(scores)
    cap, vid = _hinges(s, margin)
    on_cap = (cap > 0).astype(np.float64)
    loss = float(np.maximum(0.0, cap).sum())
    G = on_cap.copy()
    np.fill_diagonal(G, -on_cap.sum(axis=0))
    if kind == "pairwise":
        on_vid = (vid > 0).astype(np.float64)
        loss += float(np.maximum(0.0, vid).sum())
        G += on_vid
        G[np.diag_indices(len(s))] -= on_vid.sum(axis=1)
    return loss, G
