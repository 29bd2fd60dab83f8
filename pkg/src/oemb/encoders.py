"""Sentence and video encoders for the joint embedding space.

Three architectures share these pieces:

* ``m1``: mean word vector -> ``W_word``; mean frame -> ``W_video``.
* ``m2``: LSTM last hidden state; mean frame -> ``W_video``.
* ``m3``: LSTM last hidden state; attention-weighted frame mean -> ``W_video``,
  with attention conditioned on that hidden state.

Every embedding is ``|z| / ||z||``, so it is nonnegative with unit L2 norm.
The single-sample functions are the reference path; the ``*_batch`` and
``*_backward`` functions below them are what training runs.
"""
from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

DEGENERATE_NORM = 1e-12
GATES = ("i", "f", "c", "o")


class DegenerateEmbeddingError(ValueError):
    def __init__(self, message: str, index: int | None = None):
        super().__init__(message)
        self.index = index


def _check(cond: bool, message: str) -> None:
    if not cond:
        raise ValueError(message)


def sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def normalize_abs(z: np.ndarray) -> np.ndarray:
    """Row-wise ``|z| / ||z||``; raises on rows with near-zero norm."""
    u = np.abs(z)
    n = np.linalg.norm(u, axis=-1, keepdims=True)
    bad = np.flatnonzero(n.reshape(-1) < DEGENERATE_NORM)
    if bad.size:
        raise DegenerateEmbeddingError(
            f"degenerate embedding (norm < {DEGENERATE_NORM:g}) at row {int(bad[0])}",
            int(bad[0]))
    return u / n


def normalize_abs_backward(z: np.ndarray, e: np.ndarray, de: np.ndarray) -> np.ndarray:
    """Gradient through ``e = |z|/||z||`` (sign(0) taken as 0)."""
    n = np.linalg.norm(z, axis=-1, keepdims=True)
    du = (de - e * np.sum(e * de, axis=-1, keepdims=True)) / n
    return np.sign(z) * du


@dataclass(frozen=True)
class LstmParams:
    """Single-layer LSTM with forget gate: ``W*`` act on the input, ``U*`` on h."""
    Wi: np.ndarray
    Wf: np.ndarray
    Wc: np.ndarray
    Wo: np.ndarray
    Ui: np.ndarray
    Uf: np.ndarray
    Uc: np.ndarray
    Uo: np.ndarray
    bi: np.ndarray
    bf: np.ndarray
    bc: np.ndarray
    bo: np.ndarray

    @property
    def d_h(self) -> int:
        return self.Ui.shape[0]

    @property
    def d_in(self) -> int:
        return self.Wi.shape[1]

    def stacked(self):
        W = np.concatenate([self.Wi, self.Wf, self.Wc, self.Wo], axis=0)
        U = np.concatenate([self.Ui, self.Uf, self.Uc, self.Uo], axis=0)
        b = np.concatenate([self.bi, self.bf, self.bc, self.bo])
        return W, U, b

    @classmethod
    def from_tensors(cls, tensors, prefix: str = "lstm.") -> "LstmParams":
        return cls(**{f.name: tensors[prefix + f.name] for f in fields(cls)})


@dataclass(frozen=True)
class AttentionParams:
    Q: np.ndarray  # d_a x d_h
    K: np.ndarray  # d_a x d_v
    s: np.ndarray  # d_a

    @classmethod
    def from_tensors(cls, tensors, prefix: str = "attn.") -> "AttentionParams":
        return cls(tensors[prefix + "Q"], tensors[prefix + "K"], tensors[prefix + "s"])


def encode_sentence_sa(W_word: np.ndarray, S: np.ndarray) -> np.ndarray:
    _check(W_word.shape[1] == S.shape[1],
           f"W_word expects d_w={W_word.shape[1]}, sentence has {S.shape[1]}")
    return normalize_abs(W_word @ S.mean(axis=0))


def encode_video_sa(W_video: np.ndarray, V: np.ndarray) -> np.ndarray:
    _check(W_video.shape[1] == V.shape[1],
           f"W_video expects d_v={W_video.shape[1]}, video has {V.shape[1]}")
    return normalize_abs(W_video @ V.mean(axis=0))


def lstm_step(params: LstmParams, x_t, h_prev, c_prev):
    x_t, h_prev, c_prev = (np.asarray(a, dtype=np.float64) for a in (x_t, h_prev, c_prev))
    _check(x_t.shape == (params.d_in,), f"x_t must have shape ({params.d_in},), got {x_t.shape}")
    _check(h_prev.shape == (params.d_h,) and c_prev.shape == (params.d_h,),
           f"state must have shape ({params.d_h},)")
    p = params
    i = sigmoid(p.Wi @ x_t + p.Ui @ h_prev + p.bi)
    f = sigmoid(p.Wf @ x_t + p.Uf @ h_prev + p.bf)
    g = np.tanh(p.Wc @ x_t + p.Uc @ h_prev + p.bc)
    o = sigmoid(p.Wo @ x_t + p.Uo @ h_prev + p.bo)
    c = f * c_prev + i * g
    h = o * np.tanh(c)
    return h, c


def lstm_last_hidden(params: LstmParams, S: np.ndarray) -> np.ndarray:
    h = np.zeros(params.d_h)
    c = np.zeros(params.d_h)
    for x in S:
        h, c = lstm_step(params, x, h, c)
    return h


def encode_sentence_lstm(params: LstmParams, S: np.ndarray) -> np.ndarray:
    return normalize_abs(lstm_last_hidden(params, S))


def attention_weights(params: AttentionParams, h_N, V: np.ndarray) -> np.ndarray:
    """Additive attention: ``softmax_i(s . tanh(Q h + K v_i))``."""
    h_N = np.asarray(h_N, dtype=np.float64)
    _check(params.Q.shape[1] == h_N.shape[0], "h_N does not match attention query map")
    _check(params.K.shape[1] == V.shape[1], "frames do not match attention key map")
    scores = np.tanh(params.Q @ h_N + V @ params.K.T) @ params.s
    return softmax(scores)


def softmax(x: np.ndarray, axis: int = -1) -> np.ndarray:
    e = np.exp(x - np.max(x, axis=axis, keepdims=True))
    return e / np.sum(e, axis=axis, keepdims=True)


def encode_video_attention(params: AttentionParams, W_video: np.ndarray, h_N, V: np.ndarray):
    alpha = attention_weights(params, h_N, V)
    _check(W_video.shape[1] == V.shape[1], "W_video does not match frame dimension")
    return normalize_abs(W_video @ (alpha @ V))


# Batched paths -------------------------------------------------------------


def pad_sequences(seqs) -> tuple[np.ndarray, np.ndarray]:
    """Right-pad a list of 2-D arrays to ``(B, T, d)`` and return a ``(B, T)`` mask."""
    lengths = [len(s) for s in seqs]
    T = max(lengths)
    d = seqs[0].shape[1]
    out = np.zeros((len(seqs), T, d))
    mask = np.zeros((len(seqs), T))
    for b, s in enumerate(seqs):
        out[b, :len(s)] = s
        mask[b, :len(s)] = 1.0
    return out, mask


def lstm_forward_batch(params: LstmParams, X: np.ndarray, mask: np.ndarray):
    """Run the LSTM over padded ``X``; padded steps carry the state unchanged.

    Returns the final hidden states ``(B, d_h)`` and a cache for the backward pass.
    """
    W, U, b = params.stacked()
    B, T, _ = X.shape
    d_h = params.d_h
    h = np.zeros((B, d_h))
    c = np.zeros((B, d_h))
    steps = []
    XW = X @ W.T + b
    for t in range(T):
        a = XW[:, t] + h @ U.T
        i = sigmoid(a[:, :d_h])
        f = sigmoid(a[:, d_h:2 * d_h])
        g = np.tanh(a[:, 2 * d_h:3 * d_h])
        o = sigmoid(a[:, 3 * d_h:])
        c_new = f * c + i * g
        tc = np.tanh(c_new)
        h_new = o * tc
        m = mask[:, t:t + 1]
        steps.append((h, c, i, f, g, o, tc))
        h = m * h_new + (1.0 - m) * h
        c = m * c_new + (1.0 - m) * c
    return h, (X, mask, steps)


def lstm_backward_batch(params: LstmParams, cache, dh_last: np.ndarray) -> dict[str, np.ndarray]:
    X, mask, steps = cache
    W, U, _ = params.stacked()
    d_h = params.d_h
    dW = np.zeros_like(W)
    dU = np.zeros_like(U)
    db = np.zeros(4 * d_h)
    dh = dh_last.copy()
    dc = np.zeros_like(dh)
    for t in range(len(steps) - 1, -1, -1):
        h_prev, c_prev, i, f, g, o, tc = steps[t]
        m = mask[:, t:t + 1]
        dh_new, dc_carry = m * dh, m * dc
        do = dh_new * tc
        dcn = dc_carry + dh_new * o * (1.0 - tc * tc)
        di = dcn * g
        dg = dcn * i
        df = dcn * c_prev
        da = np.concatenate([di * i * (1.0 - i), df * f * (1.0 - f),
                             dg * (1.0 - g * g), do * o * (1.0 - o)], axis=1)
        dW += da.T @ X[:, t]
        dU += da.T @ h_prev
        db += da.sum(axis=0)
        dh = (1.0 - m) * dh + da @ U
        dc = (1.0 - m) * dc + dcn * f
    out = {}
    for k, gate in enumerate(GATES):
        sl = slice(k * d_h, (k + 1) * d_h)
        out["W" + gate] = dW[sl]
        out["U" + gate] = dU[sl]
        out["b" + gate] = db[sl]
    return out


def attention_pool_batch(params: AttentionParams, h: np.ndarray, Vpad: np.ndarray,
                         vmask: np.ndarray, KV: np.ndarray | None = None):
    """Attention of one query ``h`` over every padded video in ``Vpad``.

    Returns weights ``(B, Mmax)`` (zero on padding), pooled frames ``(B, d_v)``
    and a cache for :func:`attention_pool_backward`.
    """
    if KV is None:
        KV = Vpad @ params.K.T
    T = np.tanh(params.Q @ h + KV)
    e = T @ params.s
    e = np.where(vmask > 0, e, -np.inf)
    alpha = softmax(e, axis=1)
    pooled = np.einsum("bm,bmd->bd", alpha, Vpad)
    return alpha, pooled, (h, T, alpha)


def attention_pool_backward(params: AttentionParams, Vpad: np.ndarray, cache,
                            dpooled: np.ndarray):
    """Returns ``(dh, dQ, dK, ds)`` for one query."""
    h, T, alpha = cache
    dalpha = np.einsum("bmd,bd->bm", Vpad, dpooled)
    de = alpha * (dalpha - np.sum(alpha * dalpha, axis=1, keepdims=True))
    ds = np.einsum("bm,bmk->k", de, T)
    dpre = de[..., None] * params.s * (1.0 - T * T)
    da = dpre.sum(axis=(0, 1))
    dQ = np.outer(da, h)
    dK = np.einsum("bmk,bmd->kd", dpre, Vpad)
    return params.Q.T @ da, dQ, dK, ds
