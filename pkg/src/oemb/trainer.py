"""Minibatch training: gradients, clipping, Adam, early stopping, grad checks."""
from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field, fields
from typing import Callable, Sequence

import numpy as np

from .encoders import DegenerateEmbeddingError
from .model import ARCHS, JointModel, ModelParams, init_params, loss_and_grads
from .objective import LOSS_KINDS, rank_loss

log = logging.getLogger(__name__)

Pair = tuple[np.ndarray, np.ndarray]


class TrainingError(RuntimeError):
    pass


@dataclass
class TrainConfig:
    arch: str = "m2"
    batch_size: int = 200
    lr: float = 0.001
    clip_threshold: float = 2.0
    margin: float = 0.05
    loss_kind: str = "pairwise"
    d_e: int = 950
    d_a: int = 300
    monitor_size: int = 1000
    patience: int = 5
    max_epochs: int = 20
    rng_seed: int = 0

    def __post_init__(self):
        self.validate()

    def validate(self) -> None:
        if self.arch not in ARCHS:
            raise ValueError(f"arch must be one of {ARCHS}, got {self.arch!r}")
        if self.loss_kind not in LOSS_KINDS:
            raise ValueError(f"loss_kind must be one of {LOSS_KINDS}, got {self.loss_kind!r}")
        if self.batch_size < 2:
            raise ValueError("batch_size must be >= 2 to form contrastive terms")
        if self.lr < 0 or self.margin < 0:
            raise ValueError("lr and margin must be nonnegative")
        for name in ("clip_threshold", "d_e", "d_a", "monitor_size", "max_epochs"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.patience < 1:
            raise ValueError("patience must be >= 1")

    @classmethod
    def field_names(cls) -> set[str]:
        return {f.name for f in fields(cls)}

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass
class AdamState:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, tensors: dict[str, np.ndarray]) -> "AdamState":
        return cls({k: np.zeros_like(t) for k, t in tensors.items()},
                   {k: np.zeros_like(t) for k, t in tensors.items()})


def global_norm(grads: dict[str, np.ndarray]) -> float:
    return float(np.sqrt(sum(float(np.sum(g * g)) for g in grads.values())))


def clip_gradients(grads: dict[str, np.ndarray], threshold: float) -> dict[str, np.ndarray]:
    """Rescale all tensors together so the global L2 norm is at most ``threshold``."""
    if threshold <= 0:
        raise ValueError("threshold must be positive")
    norm = global_norm(grads)
    if norm <= threshold:
        return grads
    scale = threshold / norm
    return {k: g * scale for k, g in grads.items()}


def adam_step(params: dict[str, np.ndarray], grads: dict[str, np.ndarray],
              state: AdamState, lr: float):
    """One bias-corrected Adam update. Inputs are left untouched."""
    t = state.step + 1
    b1, b2 = state.beta1, state.beta2
    new_params, m, v = {}, {}, {}
    for k, p in params.items():
        g = grads[k]
        m[k] = b1 * state.m[k] + (1.0 - b1) * g
        v[k] = b2 * state.v[k] + (1.0 - b2) * g * g
        m_hat = m[k] / (1.0 - b1 ** t)
        v_hat = v[k] / (1.0 - b2 ** t)
        new_params[k] = p - lr * m_hat / (np.sqrt(v_hat) + state.eps)
    return new_params, AdamState(m, v, t, b1, b2, state.eps)


def batch_gradients(params: ModelParams, batch: Sequence[Pair], cfg: TrainConfig):
    """Configured ranking loss of one minibatch and its exact gradients.

    Raises :class:`DegenerateEmbeddingError` (with ``index`` set to the batch
    position) if any sample encodes to a zero vector.
    """
    if len(batch) < 2:
        raise ValueError("a batch needs at least 2 pairs")
    captions = [c for c, _ in batch]
    videos = [v for _, v in batch]
    return loss_and_grads(params, captions, videos, cfg.margin, cfg.loss_kind)


def batch_loss(params: ModelParams, batch: Sequence[Pair], cfg: TrainConfig) -> float:
    S = JointModel(params).score_matrix([c for c, _ in batch], [v for _, v in batch])
    return rank_loss(S, cfg.margin, cfg.loss_kind)


@dataclass
class EpochRecord:
    epoch: int
    train_loss: float
    monitor_loss: float
    wall_ms: float = field(default=0.0, compare=False)


def _chunks(idx: np.ndarray, size: int):
    for lo in range(0, len(idx), size):
        chunk = idx[lo:lo + size]
        if len(chunk) >= 2:
            yield chunk


def train(cfg: TrainConfig, train_set: Sequence[Pair], valid_set: Sequence[Pair],
          init: ModelParams | None = None,
          on_epoch: Callable[[EpochRecord, ModelParams, bool], None] | None = None):
    """Adam on shuffled minibatches with early stopping on a fixed monitor subset.

    The monitor subset (``cfg.monitor_size`` validation pairs, or all of them)
    is drawn once from ``cfg.rng_seed``. Its loss is the mean batch loss over
    fixed ``batch_size`` chunks. Returns the best-monitor parameters and the
    per-epoch history. ``on_epoch(record, params, improved)`` runs after each
    epoch.
    """
    if not train_set or not valid_set:
        raise ValueError("train and validation sets must be non-empty")
    if len(train_set) < 2:
        raise ValueError("need at least 2 training pairs")
    rng = np.random.default_rng(cfg.rng_seed)
    d_w = train_set[0][0].shape[1]
    d_v = train_set[0][1].shape[1]
    params = init.copy() if init is not None else init_params(
        cfg.arch, d_w, d_v, cfg.d_e, cfg.d_a, rng)
    monitor_idx = np.sort(rng.choice(len(valid_set), min(cfg.monitor_size, len(valid_set)),
                                     replace=False))
    monitor_batches = [[valid_set[i] for i in chunk]
                       for chunk in _chunks(monitor_idx, cfg.batch_size)]
    if not monitor_batches:
        raise ValueError("monitor subset needs at least 2 validation pairs")

    state = AdamState.zeros_like(params.tensors)
    best, best_loss, stale = params.copy(), np.inf, 0
    history: list[EpochRecord] = []
    for epoch in range(1, cfg.max_epochs + 1):
        t0 = time.perf_counter()
        order = rng.permutation(len(train_set))
        losses = []
        for step, chunk in enumerate(_chunks(order, cfg.batch_size)):
            batch = [train_set[i] for i in chunk]
            try:
                loss, grads = batch_gradients(params, batch, cfg)
            except DegenerateEmbeddingError as exc:
                sample = int(chunk[exc.index]) if exc.index is not None else -1
                log.warning("epoch %d step %d: degenerate embedding for training sample %d; "
                            "batch skipped", epoch, step, sample)
                continue
            if not np.isfinite(loss) or not all(np.all(np.isfinite(g)) for g in grads.values()):
                raise TrainingError(f"non-finite loss or gradient at epoch {epoch}, step {step}")
            grads = clip_gradients(grads, cfg.clip_threshold)
            new, state = adam_step(params.tensors, grads, state, cfg.lr)
            params.tensors = new
            losses.append(loss)
        monitor = float(np.mean([batch_loss(params, b, cfg) for b in monitor_batches]))
        if not np.isfinite(monitor):
            raise TrainingError(f"non-finite monitor loss at epoch {epoch}")
        rec = EpochRecord(epoch, float(np.mean(losses)) if losses else float("nan"), monitor,
                          (time.perf_counter() - t0) * 1000.0)
        history.append(rec)
        improved = monitor < best_loss
        if improved:
            best, best_loss, stale = params.copy(), monitor, 0
        else:
            stale += 1
        log.info("epoch %d train %.6f monitor %.6f%s", epoch, rec.train_loss, monitor,
                 " *" if improved else "")
        if on_epoch is not None:
            on_epoch(rec, best, improved)
        if stale >= cfg.patience:
            break
    return best, history


def _grad_check_instance(arch: str, rng: np.random.Generator, kind: str):
    d_w, d_v, d_e, d_a, B = 3, 4, 5, 3, 3
    params = init_params(arch, d_w, d_v, d_e, d_a, rng)
    # Weights at this scale avoid saturated gates, whose tiny gradients drown in
    # finite-difference roundoff at h=1e-5.
    for name, t in params.tensors.items():
        params.tensors[name] = rng.normal(0.0, 0.6, size=t.shape)
    captions = [rng.normal(size=(int(rng.integers(1, 5)), d_w)) for _ in range(B)]
    videos = [rng.normal(size=(int(rng.integers(1, 5)), d_v)) for _ in range(B)]
    return params, captions, videos


def grad_check(cfg: TrainConfig, rng_seed: int = 0, h: float = 1e-5,
               margin: float = 1.0) -> float:
    """Max relative error between analytic and central-difference gradients.

    Uses a random tiny instance (d_w=3, d_v=4, d_e=5, d_a=3, B=3) of
    ``cfg.arch`` in float64 with ``cfg.loss_kind``. The margin defaults to
    1.0 so that most hinges are active.
    """
    rng = np.random.default_rng(rng_seed)
    params, captions, videos = _grad_check_instance(cfg.arch, rng, cfg.loss_kind)

    def f() -> float:
        S = JointModel(params).score_matrix(captions, videos)
        return rank_loss(S, margin, cfg.loss_kind)

    _, grads = loss_and_grads(params, captions, videos, margin, cfg.loss_kind)
    worst = 0.0
    for name, t in params.tensors.items():
        for idx in np.ndindex(t.shape):
            orig = t[idx]
            t[idx] = orig + h
            up = f()
            t[idx] = orig - h
            down = f()
            t[idx] = orig
            num = (up - down) / (2.0 * h)
            ana = grads[name][idx]
            worst = max(worst, abs(ana - num) / max(1e-8, abs(ana) + abs(num)))
    return worst

