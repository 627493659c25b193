"""GloVe token vectors fitted to a co-occurrence table with AdaGrad."""
from __future__ import annotations

import logging
import threading
from dataclasses import dataclass

import numpy as np

from . import kernels
from .cooccurrence import CoocTable
from .embedding import EmbeddingMatrix

log = logging.getLogger(__name__)

VECTOR_CHOICES = ("sum", "center", "context")


class GloveDivergence(FloatingPointError):
    def __init__(self, message: str, epoch: int, entry: int | None = None):
        super().__init__(message)
        self.epoch = epoch
        self.entry = entry


@dataclass(frozen=True)
class GloveConfig:
    dim: int = 300
    iterations: int = 15
    x_max: float = 100.0
    alpha: float = 0.75
    learning_rate: float = 0.05
    seed: int = 0
    vector: str = "sum"
    threads: int = 1
    grad_clip: float = 100.0
    min_count: int = 1

    def __post_init__(self):
        if self.dim < 1:
            raise ValueError(f"dim must be >= 1, got {self.dim}")
        if self.iterations < 1:
            raise ValueError(f"iterations must be >= 1, got {self.iterations}")
        if not 0 < self.alpha <= 1:
            raise ValueError(f"alpha must be in (0, 1], got {self.alpha}")
        if self.x_max <= 0:
            raise ValueError(f"x_max must be > 0, got {self.x_max}")
        if self.learning_rate <= 0:
            raise ValueError(f"learning_rate must be > 0, got {self.learning_rate}")
        if self.vector not in VECTOR_CHOICES:
            raise ValueError(f"vector must be one of {VECTOR_CHOICES}, got {self.vector!r}")
        if self.threads < 1:
            raise ValueError("threads must be >= 1")
        if self.min_count < 1:
            raise ValueError("min_count must be >= 1")


@dataclass
class GloveParams:
    w: np.ndarray
    w_tilde: np.ndarray
    b: np.ndarray
    b_tilde: np.ndarray
    grad_sq_w: np.ndarray
    grad_sq_w_tilde: np.ndarray
    grad_sq_b: np.ndarray
    grad_sq_b_tilde: np.ndarray

    @classmethod
    def init(cls, vocab_size: int, dim: int, rng: np.random.Generator) -> "GloveParams":
        """Uniform(-0.5/dim, 0.5/dim) weights and biases; AdaGrad sums start at 1."""

        def draw(*shape):
            return (rng.random(shape) - 0.5) / dim

        return cls(
            w=draw(vocab_size, dim),
            w_tilde=draw(vocab_size, dim),
            b=draw(vocab_size),
            b_tilde=draw(vocab_size),
            grad_sq_w=np.ones((vocab_size, dim)),
            grad_sq_w_tilde=np.ones((vocab_size, dim)),
            grad_sq_b=np.ones(vocab_size),
            grad_sq_b_tilde=np.ones(vocab_size),
        )

    @property
    def vocab_size(self) -> int:
        return self.w.shape[0]

    def vectors(self, which: str = "sum") -> np.ndarray:
        if which == "sum":
            return self.w + self.w_tilde
        if which == "center":
            return self.w.copy()
        if which == "context":
            return self.w_tilde.copy()
        raise ValueError(f"unknown vector choice {which!r}")


def weighting(x: np.ndarray, x_max: float, alpha: float) -> np.ndarray:
    return np.minimum(1.0, (x / x_max) ** alpha)


def _residuals(p: GloveParams, t: CoocTable) -> np.ndarray:
    if p.vocab_size != t.vocab_size:
        raise ValueError(f"params vocab {p.vocab_size} != table vocab {t.vocab_size}")
    dots = np.einsum("kd,kd->k", p.w[t.rows], p.w_tilde[t.cols])
    return dots + p.b[t.rows] + p.b_tilde[t.cols] - np.log(t.vals)


def glove_loss(p: GloveParams, t: CoocTable, cfg: GloveConfig) -> float:
    """J = sum over nonzero X_ij of f(X_ij) * (w_i . w~_j + b_i + b~_j - log X_ij)^2."""
    r = _residuals(p, t)
    return float(np.sum(weighting(t.vals, cfg.x_max, cfg.alpha) * r * r))


def glove_grad(p: GloveParams, t: CoocTable, cfg: GloveConfig) -> dict[str, np.ndarray]:
    """Analytic gradient of :func:`glove_loss` w.r.t. w, w_tilde, b, b_tilde."""
    g = 2.0 * weighting(t.vals, cfg.x_max, cfg.alpha) * _residuals(p, t)
    grads = {
        "w": np.zeros_like(p.w),
        "w_tilde": np.zeros_like(p.w_tilde),
        "b": np.bincount(t.rows, weights=g, minlength=p.vocab_size),
        "b_tilde": np.bincount(t.cols, weights=g, minlength=p.vocab_size),
    }
    np.add.at(grads["w"], t.rows, g[:, None] * p.w_tilde[t.cols])
    np.add.at(grads["w_tilde"], t.cols, g[:, None] * p.w[t.rows])
    return grads


def _run_epoch(p: GloveParams, t: CoocTable, order: np.ndarray, cfg: GloveConfig,
               backend: str | None) -> tuple[float, int]:
    k = kernels.get(backend)
    args = (p.w, p.w_tilde, p.b, p.b_tilde,
            p.grad_sq_w, p.grad_sq_w_tilde, p.grad_sq_b, p.grad_sq_b_tilde,
            t.rows, t.cols, t.vals)
    hyper = (cfg.learning_rate, cfg.x_max, cfg.alpha, cfg.grad_clip)
    if cfg.threads == 1:
        return k.glove_epoch(*args, order, *hyper)

    # Lock-free shared updates across threads; not bitwise reproducible.
    shards = np.array_split(order, cfg.threads)
    results: list = [None] * len(shards)

    def work(idx):
        results[idx] = k.glove_epoch(*args, np.ascontiguousarray(shards[idx]), *hyper)

    threads = [threading.Thread(target=work, args=(i,)) for i in range(len(shards))]
    for th in threads:
        th.start()
    for th in threads:
        th.join()
    cost = sum(r[0] for r in results)
    offset = 0
    for shard, (_, bad) in zip(shards, results):
        if bad >= 0:
            return cost, offset + bad
        offset += len(shard)
    return cost, -1


def fit_glove(t: CoocTable, cfg: GloveConfig = GloveConfig(), *,
              backend: str | None = None) -> tuple[GloveParams, list[float]]:
    """Train GloVe parameters; returns them with the loss after every epoch."""
    if len(t) == 0:
        raise ValueError("cannot train GloVe on an empty co-occurrence table")
    rng = np.random.default_rng(cfg.seed)
    p = GloveParams.init(t.vocab_size, cfg.dim, rng)
    history: list[float] = []
    for epoch in range(cfg.iterations):
        order = rng.permutation(len(t)).astype(np.int64)
        _, bad = _run_epoch(p, t, order, cfg, backend)
        if bad >= 0:
            e = int(order[bad])
            raise GloveDivergence(
                f"non-finite residual in epoch {epoch} at step {bad} "
                f"(entry {int(t.rows[e])},{int(t.cols[e])} X={t.vals[e]:g})",
                epoch, bad,
            )
        loss = glove_loss(p, t, cfg)
        if not np.isfinite(loss):
            raise GloveDivergence(f"non-finite loss after epoch {epoch}", epoch)
        log.debug("glove epoch %d loss %.6g", epoch, loss)
        history.append(loss)
    return p, history


def trained_mask(t: CoocTable) -> np.ndarray:
    mask = np.zeros(t.vocab_size, dtype=bool)
    mask[t.rows] = True
    return mask


def drop_rare(t: CoocTable, counts: np.ndarray, min_count: int) -> CoocTable:
    """Remove every entry touching a token seen fewer than ``min_count`` times,
    like the vocabulary cut of the reference GloVe tools."""
    counts = np.asarray(counts)
    if counts.shape != (t.vocab_size,):
        raise ValueError(f"counts must have shape ({t.vocab_size},), got {counts.shape}")
    keep_tok = counts >= min_count
    keep = keep_tok[t.rows] & keep_tok[t.cols]
    return CoocTable(t.rows[keep], t.cols[keep], t.vals[keep], t.vocab_size, t.total_tokens)


def train_glove(t: CoocTable, cfg: GloveConfig = GloveConfig(), *,
                counts: np.ndarray | None = None,
                backend: str | None = None) -> EmbeddingMatrix:
    """Token vectors (``cfg.vector``, default w + w_tilde); rows absent from the
    table are zeroed and flagged untrained.

    With ``cfg.min_count > 1`` the per-token ``counts`` are required and tokens
    below the cut are left untrained.
    """
    if cfg.min_count > 1:
        if counts is None:
            raise ValueError("min_count > 1 needs per-token counts")
        t = drop_rare(t, counts, cfg.min_count)
    p, _ = fit_glove(t, cfg, backend=backend)
    vectors = p.vectors(cfg.vector)
    untrained = ~trained_mask(t)
    vectors[untrained] = 0.0
    return EmbeddingMatrix(vectors, untrained)
