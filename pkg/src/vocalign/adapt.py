"""Target-vocabulary initialization, two-stage fine-tuning, distillation, and
normalized perplexity."""
from __future__ import annotations

import logging
import math
import struct
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .align import AlignmentMap
from .tokenizer import Tokenizer, TokenStream
from .toylm import (
    AdamWState,
    Batch,
    LmParams,
    _softmax,
    adamw_step,
    backward,
    forward,
    forward_with_cache,
    loss_and_grads,
    loss_only,
    nll_and_dlogits,
    sample_batch,
    token_nll,
)

log = logging.getLogger(__name__)

INIT_METHODS = ("aligned", "random_init", "random_perm", "multivariate", "mean")
RANDOM_INIT_STD = 0.02
VOCAB_BLOCKS = ("embedding", "lm_head")
TEACHER_MAGIC = b"TLG1"


@dataclass(frozen=True)
class InitMethod:
    name: str = "aligned"
    seed: int = 0

    def __post_init__(self):
        if self.name not in INIT_METHODS:
            raise ValueError(f"unknown init method {self.name!r}; choose from {INIT_METHODS}")


@dataclass(frozen=True)
class TrainPlan:
    total_steps: int
    stage_boundary: int | None = None
    lr_stage1: float = 1e-3
    lr_stage2: float = 1e-3
    batch_tokens: int = 512
    distill_weight: float = 1.0
    temperature: float = 1.0
    task_mix: float = 0.15
    weight_decay: float = 0.01
    seed: int = 0

    def __post_init__(self):
        if self.total_steps < 0:
            raise ValueError("total_steps must be >= 0")
        if self.stage_boundary is None:
            object.__setattr__(self, "stage_boundary", self.total_steps // 2)
        if not 0 <= self.stage_boundary <= self.total_steps:
            raise ValueError(
                f"stage_boundary {self.stage_boundary} outside [0, {self.total_steps}]")
        if self.lr_stage1 <= 0 or self.lr_stage2 <= 0:
            raise ValueError("learning rates must be > 0")
        if self.distill_weight < 0:
            raise ValueError("distill_weight must be >= 0")
        if self.temperature <= 0:
            raise ValueError("temperature must be > 0")
        if not 0 <= self.task_mix <= 1:
            raise ValueError("task_mix must be in [0, 1]")

    def seqs_per_batch(self, context: int) -> int:
        return max(1, self.batch_tokens // context)


@dataclass
class StepRecord:
    step: int
    stage: int
    nll: float
    kl: float = 0.0


class TrainingDiverged(FloatingPointError):
    def __init__(self, message: str, history: list[StepRecord], params: LmParams):
        super().__init__(message)
        self.history = history
        self.params = params


# -- initialization ---------------------------------------------------------

def _fill_rows(src: np.ndarray, targets: np.ndarray, method: str, t2s: np.ndarray | None,
               fallback: np.ndarray, perm_rows: np.ndarray | None,
               rng: np.random.Generator) -> np.ndarray:
    """Rows for the non-shared target IDs in ``targets``."""
    n, d = len(targets), src.shape[1]
    mean = src.astype(np.float64).mean(axis=0)
    if method == "aligned":
        rows = src[t2s[targets]].astype(np.float64)
        rows[fallback] = mean
    elif method == "random_init":
        rows = rng.normal(0.0, RANDOM_INIT_STD, (n, d))
    elif method == "random_perm":
        rows = src[perm_rows].astype(np.float64)
    elif method == "multivariate":
        cov = np.cov(src.astype(np.float64), rowvar=False)
        rows = rng.multivariate_normal(mean, cov, size=n, method="eigh")
    elif method == "mean":
        rows = np.broadcast_to(mean, (n, d))
    else:
        raise ValueError(method)
    return rows.astype(src.dtype)


def init_target_params(src: LmParams, target_vocab_size: int,
                       method: InitMethod | str = "aligned",
                       alignment: AlignmentMap | None = None,
                       shared: Iterable[tuple[int, int]] | None = None) -> LmParams:
    """Build a model for the target vocabulary from a source model.

    The internal block is copied verbatim. Embedding and lm_head rows of shared
    tokens are copied from their source rows; the remaining rows follow
    ``method``. ``aligned`` copies row ``t2s[t]`` and uses the source mean for
    fallback rows.
    """
    if isinstance(method, str):
        method = InitMethod(method)
    if method.name == "aligned" and alignment is None:
        raise ValueError("the aligned method needs an AlignmentMap")
    if alignment is not None:
        if alignment.source_size != src.config.vocab_size:
            raise ValueError(f"alignment source size {alignment.source_size} != "
                             f"model vocab {src.config.vocab_size}")
        if alignment.target_size != target_vocab_size:
            raise ValueError(f"alignment target size {alignment.target_size} != "
                             f"target vocab {target_vocab_size}")
    if shared is None:
        shared = alignment.shared if alignment is not None else ()
    shared_t2s = {int(t): int(s) for s, t in shared}
    if any(not 0 <= s < src.config.vocab_size or not 0 <= t < target_vocab_size
           for t, s in shared_t2s.items()):
        raise ValueError("shared pair outside vocabulary range")

    rng = np.random.default_rng(method.seed)
    others = np.array([t for t in range(target_vocab_size) if t not in shared_t2s],
                      dtype=np.int64)
    t2s = alignment.t2s if alignment is not None else None
    fallback = (np.isin(others, sorted(alignment.fallback_t)) if alignment is not None
                else np.zeros(len(others), dtype=bool))
    perm_rows = (rng.integers(0, src.config.vocab_size, len(others))
                 if method.name == "random_perm" else None)
    shared_t = np.array(sorted(shared_t2s), dtype=np.int64)
    shared_s = np.array([shared_t2s[t] for t in shared_t], dtype=np.int64)

    blocks = {}
    for block in VOCAB_BLOCKS:
        source = getattr(src, block)
        out = np.empty((target_vocab_size, source.shape[1]), dtype=source.dtype)
        out[shared_t] = source[shared_s]
        if len(others):
            out[others] = _fill_rows(source, others, method.name, t2s, fallback, perm_rows, rng)
        blocks[block] = out
    cfg = replace(src.config, vocab_size=target_vocab_size)
    return LmParams(cfg, blocks["embedding"], blocks["lm_head"],
                    {k: a.copy() for k, a in src.internal.items()})


# -- training ---------------------------------------------------------------

def first_step_loss(p: LmParams, stream: TokenStream, plan: TrainPlan) -> float:
    """Loss on the batch the first training step would draw, before any update."""
    rng = np.random.default_rng(plan.seed)
    batch = sample_batch(stream.ids, rng, plan.seqs_per_batch(p.config.context), p.config.context)
    return loss_only(p, batch)


def two_stage_finetune(p: LmParams, stream: TokenStream, plan: TrainPlan,
                       callback: Callable[[int, LmParams, AdamWState], None] | None = None
                       ) -> tuple[LmParams, list[StepRecord]]:
    """Steps before ``plan.stage_boundary`` update only embedding and lm_head;
    later steps update everything. ``p`` is not modified."""
    if len(stream) < 2:
        raise ValueError("training stream needs at least two tokens")
    params = p.copy()
    state = AdamWState(weight_decay=plan.weight_decay)
    rng = np.random.default_rng(plan.seed)
    ctx = params.config.context
    n_seqs = plan.seqs_per_batch(ctx)
    vocab_names = params.names(VOCAB_BLOCKS)
    all_names = params.names()
    history: list[StepRecord] = []
    for step in range(plan.total_steps):
        batch = sample_batch(stream.ids, rng, n_seqs, ctx)
        stage = 1 if step < plan.stage_boundary else 2
        try:
            loss, grads = loss_and_grads(params, batch)
        except FloatingPointError as exc:
            raise TrainingDiverged(f"step {step} (stage {stage}): {exc}", history, params) from exc
        if stage == 1:
            adamw_step(params, grads, state, plan.lr_stage1, vocab_names)
        else:
            adamw_step(params, grads, state, plan.lr_stage2, all_names)
        history.append(StepRecord(step, stage, loss))
        if callback is not None:
            callback(step, params, state)
    return params, history


def full_finetune(p: LmParams, stream: TokenStream, plan: TrainPlan
                  ) -> tuple[LmParams, list[StepRecord]]:
    """Plain training of every parameter at ``plan.lr_stage2``."""
    params = p.copy()
    state = AdamWState(weight_decay=plan.weight_decay)
    rng = np.random.default_rng(plan.seed)
    ctx = params.config.context
    history = []
    for step in range(plan.total_steps):
        batch = sample_batch(stream.ids, rng, plan.seqs_per_batch(ctx), ctx)
        loss, grads = loss_and_grads(params, batch)
        adamw_step(params, grads, state, plan.lr_stage2)
        history.append(StepRecord(step, 2, loss))
    return params, history


# -- distillation -----------------------------------------------------------

TeacherFn = Callable[[int, np.ndarray], np.ndarray]


def teacher_from_params(teacher: LmParams) -> TeacherFn:
    def provide(batch_index: int, inputs: np.ndarray) -> np.ndarray:
        return forward(teacher, inputs)
    return provide


def kl_divergence(teacher_logits: np.ndarray, student_logits: np.ndarray,
                  temperature: float = 1.0) -> np.ndarray:
    """Per-position KL(softmax(teacher/T) || softmax(student/T)) in nats."""
    t = teacher_logits.astype(np.float64) / temperature
    s = student_logits.astype(np.float64) / temperature
    log_pt = t - t.max(-1, keepdims=True)
    log_pt -= np.log(np.exp(log_pt).sum(-1, keepdims=True))
    log_ps = s - s.max(-1, keepdims=True)
    log_ps -= np.log(np.exp(log_ps).sum(-1, keepdims=True))
    return (np.exp(log_pt) * (log_pt - log_ps)).sum(-1)


@dataclass
class DistillOutput:
    loss: float
    nll: float
    kl: float
    grads: LmParams


def distill_step(student: LmParams, teacher: TeacherFn | LmParams, batch: Batch,
                 plan: TrainPlan, batch_index: int = 0) -> DistillOutput:
    """loss = NLL + lambda * T^2 * KL(teacher || student) at temperature T, per token.

    Gradients reach the student only. With lambda == 0 the gradient is exactly
    the plain next-token gradient.
    """
    if isinstance(teacher, LmParams):
        teacher = teacher_from_params(teacher)
    logits, cache = forward_with_cache(student, batch)
    t_logits = np.asarray(teacher(batch_index, batch.inputs))
    if t_logits.shape != logits.shape:
        raise ValueError(f"teacher logits shape {t_logits.shape} != student {logits.shape}; "
                         "vocabularies must match")
    nll, dlogits = nll_and_dlogits(logits, batch.targets)
    tau = plan.temperature
    kl = float(kl_divergence(t_logits, logits, tau).mean()) * tau * tau
    lam = plan.distill_weight
    if lam != 0:
        p_s = _softmax(logits.astype(np.float64) / tau)
        p_t = _softmax(t_logits.astype(np.float64) / tau)
        dlogits = dlogits + lam * tau * (p_s - p_t) / batch.n_tokens
    grads = backward(student, batch, dlogits, cache)
    return DistillOutput(nll + lam * kl, nll, kl, grads)


def distill_finetune(student: LmParams, teacher: TeacherFn | LmParams,
                     pretrain: TokenStream, task: TokenStream, plan: TrainPlan
                     ) -> tuple[LmParams, list[StepRecord]]:
    """Full tuning where a ``plan.task_mix`` share of batches come from ``task``
    and carry the distillation term; the rest are plain next-token batches."""
    params = student.copy()
    state = AdamWState(weight_decay=plan.weight_decay)
    rng = np.random.default_rng(plan.seed)
    ctx = params.config.context
    n_seqs = plan.seqs_per_batch(ctx)
    history = []
    for step in range(plan.total_steps):
        if rng.random() < plan.task_mix:
            batch = sample_batch(task.ids, rng, n_seqs, ctx)
            out = distill_step(params, teacher, batch, plan, step)
            grads, rec = out.grads, StepRecord(step, 2, out.nll, out.kl)
        else:
            batch = sample_batch(pretrain.ids, rng, n_seqs, ctx)
            loss, grads = loss_and_grads(params, batch)
            rec = StepRecord(step, 2, loss)
        adamw_step(params, grads, state, plan.lr_stage2)
        history.append(rec)
    return params, history


def write_teacher_logits(path: str | Path, records: Iterable[tuple[int, np.ndarray]],
                         vocab_size: int) -> None:
    """Header ``TLG1`` + u32 vocab, then per batch: u32 index, u32 rows, f32 rows."""
    with open(path, "wb") as f:
        f.write(TEACHER_MAGIC + struct.pack("<I", vocab_size))
        for idx, logits in records:
            rows = np.asarray(logits, dtype="<f4").reshape(-1, vocab_size)
            f.write(struct.pack("<II", idx, len(rows)))
            f.write(rows.tobytes())


class TeacherLogitsFile:
    """Offline teacher: logits precomputed per batch index."""

    def __init__(self, path: str | Path):
        data = Path(path).read_bytes()
        if data[:4] != TEACHER_MAGIC:
            raise ValueError(f"{path}: bad magic {data[:4]!r}")
        (self.vocab_size,) = struct.unpack_from("<I", data, 4)
        self.batches: dict[int, np.ndarray] = {}
        off = 8
        while off < len(data):
            idx, rows = struct.unpack_from("<II", data, off)
            off += 8
            n = rows * self.vocab_size
            self.batches[idx] = np.frombuffer(data, "<f4", n, off).reshape(rows, self.vocab_size)
            off += 4 * n

    def __call__(self, batch_index: int, inputs: np.ndarray) -> np.ndarray:
        try:
            rows = self.batches[batch_index]
        except KeyError:
            raise KeyError(f"no teacher logits for batch {batch_index}") from None
        return rows.reshape(*np.shape(inputs), self.vocab_size)


# -- evaluation -------------------------------------------------------------

@dataclass
class PerplexityStats:
    nll_sum: float
    n_predicted: int
    n_model_tokens: int
    n_ref_tokens: int

    @property
    def exponent(self) -> float:
        return self.nll_sum / self.n_predicted * self.n_model_tokens / self.n_ref_tokens

    @property
    def value(self) -> float:
        return math.exp(self.exponent)

    def as_dict(self) -> dict:
        return {
            "normalized_perplexity": self.value,
            "nll_sum": self.nll_sum,
            "n_predicted": self.n_predicted,
            "n_model_tokens": self.n_model_tokens,
            "n_ref_tokens": self.n_ref_tokens,
            "formula": "exp(nll_sum / n_predicted * n_model_tokens / n_ref_tokens)",
        }


def corpus_nll(p: LmParams, stream: TokenStream) -> tuple[float, int]:
    """Summed NLL over every token that has at least one token of context in its
    segment. Long segments are scored in consecutive windows."""
    ctx = p.config.context
    windows: dict[int, list[np.ndarray]] = {}
    for seg in stream.segments():
        for start in range(0, len(seg) - 1, ctx):
            w = seg[start:start + ctx + 1]
            windows.setdefault(len(w), []).append(w)
    total, count = 0.0, 0
    for _, group in sorted(windows.items()):
        batch = Batch.from_windows(np.stack(group))
        logits = forward(p, batch.inputs)
        total += float(token_nll(logits, batch.targets).sum())
        count += batch.n_tokens
    return total, count


def perplexity_stats(p: LmParams, tok_model: Tokenizer, tok_ref: Tokenizer,
                     corpus: Sequence[str]) -> PerplexityStats:
    stream = tok_model.encode_lines(corpus)
    n_ref = len(tok_ref.encode_lines(corpus))
    if len(stream) == 0 or n_ref == 0:
        raise ValueError("corpus is empty under one of the tokenizers")
    nll, n_pred = corpus_nll(p, stream)
    if n_pred == 0:
        raise ValueError("no segment has two or more tokens to score")
    return PerplexityStats(nll, n_pred, len(stream), n_ref)


def normalized_perplexity(p: LmParams, tok_model: Tokenizer, tok_ref: Tokenizer,
                          corpus: Sequence[str]) -> float:
    """Perplexity with its exponent measured per reference-tokenizer token.

    The mean NLL per predicted token is rescaled by (model tokens / reference
    tokens), so with ``tok_ref == tok_model`` this is ordinary perplexity.
    """
    return perplexity_stats(p, tok_model, tok_ref, corpus).value
