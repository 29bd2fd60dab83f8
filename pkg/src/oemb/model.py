"""Model parameters, scoring and the batched loss/gradient pass."""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from . import encoders as enc
from .objective import order_scores, order_scores_backward, rank_loss_grad

ARCHS = ("m1", "m2", "m3")
LSTM_NAMES = tuple(f"lstm.{k}{g}" for k in ("W", "U", "b") for g in enc.GATES)
ATTN_NAMES = ("attn.Q", "attn.K", "attn.s")


def tensor_names(arch: str) -> tuple[str, ...]:
    if arch == "m1":
        return ("W_word", "W_video")
    if arch == "m2":
        return LSTM_NAMES + ("W_video",)
    if arch == "m3":
        return LSTM_NAMES + ("W_video",) + ATTN_NAMES
    raise ValueError(f"unknown architecture {arch!r}; expected one of {ARCHS}")


@dataclass
class ModelParams:
    """All trainable tensors of one architecture. The LSTM width equals ``d_e``."""
    arch: str
    d_w: int
    d_v: int
    d_e: int
    d_a: int
    tensors: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def d_h(self) -> int:
        return self.d_e

    def meta(self) -> dict:
        return {"arch": self.arch, "d_w": self.d_w, "d_v": self.d_v, "d_e": self.d_e,
                "d_h": self.d_h, "d_a": self.d_a}

    def expected_shapes(self) -> dict[str, tuple[int, ...]]:
        d_w, d_v, d_e, d_h, d_a = self.d_w, self.d_v, self.d_e, self.d_h, self.d_a
        shapes = {"W_word": (d_e, d_w), "W_video": (d_e, d_v),
                  "attn.Q": (d_a, d_h), "attn.K": (d_a, d_v), "attn.s": (d_a,)}
        for g in enc.GATES:
            shapes[f"lstm.W{g}"] = (d_h, d_w)
            shapes[f"lstm.U{g}"] = (d_h, d_h)
            shapes[f"lstm.b{g}"] = (d_h,)
        return {n: shapes[n] for n in tensor_names(self.arch)}

    def validate(self) -> None:
        want = self.expected_shapes()
        if set(want) != set(self.tensors):
            raise ValueError(f"{self.arch} expects tensors {sorted(want)}, "
                             f"got {sorted(self.tensors)}")
        for name, shape in want.items():
            if self.tensors[name].shape != shape:
                raise ValueError(f"{name}: expected shape {shape}, "
                                 f"got {self.tensors[name].shape}")

    def copy(self) -> "ModelParams":
        return replace(self, tensors={k: v.copy() for k, v in self.tensors.items()})

    def lstm(self) -> enc.LstmParams:
        return enc.LstmParams.from_tensors(self.tensors)

    def attention(self) -> enc.AttentionParams:
        return enc.AttentionParams.from_tensors(self.tensors)


def init_params(arch: str, d_w: int, d_v: int, d_e: int = 950, d_a: int = 300,
                rng: np.random.Generator | int | None = 0) -> ModelParams:
    """Glorot-uniform matrices, zero biases, forget-gate bias 1."""
    rng = np.random.default_rng(rng)
    p = ModelParams(arch, d_w, d_v, d_e, d_a)
    for name, shape in p.expected_shapes().items():
        if name.startswith("lstm.b"):
            p.tensors[name] = np.full(shape, 1.0 if name == "lstm.bf" else 0.0)
            continue
        fan_out, fan_in = shape if len(shape) == 2 else (1, shape[0])
        r = np.sqrt(6.0 / (fan_in + fan_out))
        p.tensors[name] = rng.uniform(-r, r, size=shape)
    return p


class JointModel:
    """Read-only scorer around a :class:`ModelParams`."""

    def __init__(self, params: ModelParams):
        params.validate()
        self.params = params

    @property
    def arch(self) -> str:
        return self.params.arch

    def caption_states(self, captions) -> np.ndarray:
        """Pre-normalization caption vectors: ``W_word`` means (m1) or last LSTM states."""
        t = self.params.tensors
        if self.arch == "m1":
            means = np.stack([np.asarray(c, dtype=np.float64).mean(axis=0) for c in captions])
            return means @ t["W_word"].T
        X, mask = enc.pad_sequences(captions)
        h, _ = enc.lstm_forward_batch(self.params.lstm(), X, mask)
        return h

    def encode_captions(self, captions) -> np.ndarray:
        return enc.normalize_abs(self.caption_states(captions))

    def encode_videos(self, videos) -> np.ndarray:
        """Mean-pooled video embeddings (m1/m2 only)."""
        if self.arch == "m3":
            raise ValueError("m3 video embeddings depend on the caption; use score_matrix")
        means = np.stack([np.asarray(v, dtype=np.float64).mean(axis=0) for v in videos])
        return enc.normalize_abs(means @ self.params.tensors["W_video"].T)

    def attention(self, caption, videos) -> list[np.ndarray]:
        """Per-frame attention weights of each video for one caption (m3 only)."""
        if self.arch != "m3":
            raise ValueError("attention weights exist only for m3 models")
        h = self.caption_states([caption])[0]
        att = self.params.attention()
        return [enc.attention_weights(att, h, np.asarray(v, dtype=np.float64)) for v in videos]

    def score_matrix(self, captions, videos) -> np.ndarray:
        """``out[i, j] = S(caption_i, video_j)``."""
        if self.arch != "m3":
            return order_scores(self.encode_captions(captions), self.encode_videos(videos))
        H = self.caption_states(captions)
        C = enc.normalize_abs(H)
        att = self.params.attention()
        W = self.params.tensors["W_video"]
        Vpad, vmask = enc.pad_sequences([np.asarray(v, dtype=np.float64) for v in videos])
        KV = Vpad @ att.K.T
        out = np.empty((len(captions), len(videos)))
        for i in range(len(captions)):
            _, pooled, _ = enc.attention_pool_batch(att, H[i], Vpad, vmask, KV)
            Ve = enc.normalize_abs(pooled @ W.T)
            out[i] = order_scores(C[i:i + 1], Ve)[0]
        return out


def loss_and_grads(params: ModelParams, captions, videos, margin: float, kind: str):
    """Ranking loss over the B x B batch score matrix and exact gradients of it."""
    t = params.tensors
    B = len(captions)
    grads = {k: np.zeros_like(v) for k, v in t.items()}
    W = t["W_video"]

    if params.arch == "m1":
        means = np.stack([np.asarray(c, dtype=np.float64).mean(axis=0) for c in captions])
        H = means @ t["W_word"].T
    else:
        lstm = params.lstm()
        X, mask = enc.pad_sequences(captions)
        H, lstm_cache = enc.lstm_forward_batch(lstm, X, mask)
    C = enc.normalize_abs(H)

    if params.arch != "m3":
        vmeans = np.stack([np.asarray(v, dtype=np.float64).mean(axis=0) for v in videos])
        Zv = vmeans @ W.T
        Ve = enc.normalize_abs(Zv)
        S = order_scores(C, Ve)
        loss, G = rank_loss_grad(S, margin, kind)
        dC, dVe = order_scores_backward(C, Ve, G)
        dZv = enc.normalize_abs_backward(Zv, Ve, dVe)
        grads["W_video"] = dZv.T @ vmeans
        dH = enc.normalize_abs_backward(H, C, dC)
    else:
        att = params.attention()
        Vpad, vmask = enc.pad_sequences([np.asarray(v, dtype=np.float64) for v in videos])
        KV = Vpad @ att.K.T
        S = np.empty((B, B))
        per_caption = []
        for i in range(B):
            _, pooled, acache = enc.attention_pool_batch(att, H[i], Vpad, vmask, KV)
            Zv = pooled @ W.T
            Ve = enc.normalize_abs(Zv)
            S[i] = order_scores(C[i:i + 1], Ve)[0]
            per_caption.append((pooled, acache, Zv, Ve))
        loss, G = rank_loss_grad(S, margin, kind)
        dH = np.zeros_like(H)
        dC = np.zeros_like(C)
        for i, (pooled, acache, Zv, Ve) in enumerate(per_caption):
            if not G[i].any():
                continue
            dCi, dVe = order_scores_backward(C[i:i + 1], Ve, G[i:i + 1])
            dC[i] = dCi[0]
            dZv = enc.normalize_abs_backward(Zv, Ve, dVe)
            grads["W_video"] += dZv.T @ pooled
            dh, dQ, dK, ds = enc.attention_pool_backward(att, Vpad, acache, dZv @ W)
            dH[i] += dh
            grads["attn.Q"] += dQ
            grads["attn.K"] += dK
            grads["attn.s"] += ds
        dH += enc.normalize_abs_backward(H, C, dC)

    if params.arch == "m1":
        grads["W_word"] = dH.T @ means
    else:
        for name, g in enc.lstm_backward_batch(lstm, lstm_cache, dH).items():
            grads["lstm." + name] = g
    return loss, grads
