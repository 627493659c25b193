"""A small causal transformer LM in numpy with hand-written backprop.

Parameters are split into three blocks: ``embedding`` and ``lm_head`` (both
|V| x d, untied) and ``internal`` (positions, transformer blocks, final norm).
Vocabulary adaptation swaps and retunes the first two.
"""
from __future__ import annotations

import json
import math
from dataclasses import dataclass, field, asdict
from pathlib import Path
from typing import Iterator

import numpy as np

from .embedding import EmbeddingMatrix

BLOCKS = ("embedding", "internal", "lm_head")
LN_EPS = 1e-5
_GELU_C = math.sqrt(2.0 / math.pi)


@dataclass(frozen=True)
class LmConfig:
    vocab_size: int
    d_model: int = 64
    n_layers: int = 2
    context: int = 64
    d_ff: int | None = None

    @property
    def ff(self) -> int:
        return self.d_ff or 4 * self.d_model


@dataclass
class LmParams:
    config: LmConfig
    embedding: np.ndarray
    lm_head: np.ndarray
    internal: dict[str, np.ndarray] = field(default_factory=dict)

    def __post_init__(self):
        v = self.config.vocab_size
        if self.embedding.shape[0] != v or self.lm_head.shape[0] != v:
            raise ValueError(
                f"embedding/lm_head rows ({self.embedding.shape[0]}, {self.lm_head.shape[0]}) "
                f"!= vocab_size {v}"
            )

    def named(self) -> Iterator[tuple[str, np.ndarray]]:
        yield "embedding", self.embedding
        for k, a in self.internal.items():
            yield "internal." + k, a
        yield "lm_head", self.lm_head

    def get(self, name: str) -> np.ndarray:
        if name.startswith("internal."):
            return self.internal[name[len("internal."):]]
        return getattr(self, name)

    def names(self, blocks=BLOCKS) -> list[str]:
        return [n for n, _ in self.named() if block_of(n) in blocks]

    def n_scalars(self) -> int:
        return sum(a.size for _, a in self.named())

    def copy(self) -> "LmParams":
        return LmParams(self.config, self.embedding.copy(), self.lm_head.copy(),
                        {k: a.copy() for k, a in self.internal.items()})

    def astype(self, dtype) -> "LmParams":
        return LmParams(self.config, self.embedding.astype(dtype), self.lm_head.astype(dtype),
                        {k: a.astype(dtype) for k, a in self.internal.items()})

    @property
    def dtype(self):
        return self.embedding.dtype

    def zeros_like(self) -> "LmParams":
        return LmParams(self.config, np.zeros_like(self.embedding), np.zeros_like(self.lm_head),
                        {k: np.zeros_like(a) for k, a in self.internal.items()})

    def save(self, directory: str | Path, *, seed: int | None = None, step: int = 0) -> None:
        """Each tensor as an EMB1 matrix plus ``manifest.json``."""
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        tensors = {}
        for name, a in self.named():
            fname = name + ".emb"
            EmbeddingMatrix(a.reshape(a.shape[0], -1) if a.ndim > 1 else a[None, :]).save(
                directory / fname)
            tensors[name] = {"file": fname, "shape": list(a.shape)}
        manifest = {"config": asdict(self.config), "seed": seed, "step": step,
                    "tensors": tensors}
        (directory / "manifest.json").write_text(json.dumps(manifest, indent=2) + "\n")

    @classmethod
    def load(cls, directory: str | Path) -> "LmParams":
        directory = Path(directory)
        manifest = json.loads((directory / "manifest.json").read_text())
        cfg = LmConfig(**manifest["config"])
        arrays = {}
        for name, info in manifest["tensors"].items():
            m = EmbeddingMatrix.load(directory / info["file"])
            arrays[name] = m.vectors.reshape(info["shape"]).copy()
        internal = {n[len("internal."):]: a for n, a in arrays.items() if n.startswith("internal.")}
        return cls(cfg, arrays["embedding"], arrays["lm_head"], internal)


def block_of(name: str) -> str:
    return "internal" if name.startswith("internal.") else name


def init_params(cfg: LmConfig, seed: int = 0, dtype=np.float32) -> LmParams:
    rng = np.random.default_rng(seed)
    d, ff, std = cfg.d_model, cfg.ff, 0.02
    proj_std = std / math.sqrt(2 * cfg.n_layers)

    def normal(shape, s=std):
        return rng.normal(0.0, s, shape).astype(dtype)

    internal: dict[str, np.ndarray] = {"pos": normal((cfg.context, d))}
    for layer in range(cfg.n_layers):
        p = f"h{layer}."
        internal[p + "ln1_g"] = np.ones(d, dtype)
        internal[p + "ln1_b"] = np.zeros(d, dtype)
        internal[p + "wq"] = normal((d, d))
        internal[p + "wk"] = normal((d, d))
        internal[p + "wv"] = normal((d, d))
        internal[p + "wo"] = normal((d, d), proj_std)
        internal[p + "ln2_g"] = np.ones(d, dtype)
        internal[p + "ln2_b"] = np.zeros(d, dtype)
        internal[p + "w1"] = normal((d, ff))
        internal[p + "b1"] = np.zeros(ff, dtype)
        internal[p + "w2"] = normal((ff, d), proj_std)
        internal[p + "b2"] = np.zeros(d, dtype)
    internal["lnf_g"] = np.ones(d, dtype)
    internal["lnf_b"] = np.zeros(d, dtype)
    return LmParams(cfg, normal((cfg.vocab_size, d)), normal((cfg.vocab_size, d)), internal)


@dataclass
class Batch:
    inputs: np.ndarray
    targets: np.ndarray

    def __post_init__(self):
        self.inputs = np.atleast_2d(np.asarray(self.inputs, dtype=np.int64))
        self.targets = np.atleast_2d(np.asarray(self.targets, dtype=np.int64))
        if self.inputs.shape != self.targets.shape:
            raise ValueError("inputs and targets must have the same shape")

    @classmethod
    def from_windows(cls, windows: np.ndarray) -> "Batch":
        windows = np.atleast_2d(windows)
        return cls(windows[:, :-1], windows[:, 1:])

    @property
    def n_tokens(self) -> int:
        return self.targets.size


def sample_batch(ids: np.ndarray, rng: np.random.Generator, n_seqs: int, context: int) -> Batch:
    """Random contiguous windows of ``context + 1`` tokens."""
    span = min(context, len(ids) - 1)
    if span < 1:
        raise ValueError("stream too short to form a training window")
    starts = rng.integers(0, len(ids) - span, n_seqs)
    windows = np.stack([ids[s:s + span + 1] for s in starts])
    return Batch.from_windows(windows)


# -- layers -----------------------------------------------------------------

def _ln_forward(x, g, b):
    mu = x.mean(-1, keepdims=True)
    xc = x - mu
    rstd = 1.0 / np.sqrt((xc * xc).mean(-1, keepdims=True) + LN_EPS)
    xhat = xc * rstd
    return xhat * g + b, (xhat, rstd)


def _ln_backward(dy, g, cache):
    xhat, rstd = cache
    axes = tuple(range(dy.ndim - 1))
    dg = (dy * xhat).sum(axes)
    db = dy.sum(axes)
    dxhat = dy * g
    dx = rstd * (dxhat - dxhat.mean(-1, keepdims=True)
                 - xhat * (dxhat * xhat).mean(-1, keepdims=True))
    return dx, dg, db


def _gelu(x):
    t = np.tanh(_GELU_C * (x + 0.044715 * x ** 3))
    return 0.5 * x * (1.0 + t), t


def _gelu_backward(dy, x, t):
    dt = _GELU_C * (1.0 + 3 * 0.044715 * x * x)
    return dy * (0.5 * (1.0 + t) + 0.5 * x * (1.0 - t * t) * dt)


def _softmax(x, axis=-1):
    z = x - x.max(axis, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis, keepdims=True)


def _check_ids(p: LmParams, ids: np.ndarray) -> None:
    v = p.config.vocab_size
    if ids.size and (ids.min() < 0 or ids.max() >= v):
        bad = np.argwhere((ids < 0) | (ids >= v))[0]
        raise IndexError(f"token id {int(ids[tuple(bad)])} at {tuple(int(i) for i in bad)} "
                         f"out of range [0, {v})")
    if ids.shape[-1] > p.config.context:
        raise ValueError(f"sequence length {ids.shape[-1]} exceeds context {p.config.context}")


def _forward(p: LmParams, ids: np.ndarray, keep_cache: bool):
    cfg = p.config
    P = p.internal
    B, T = ids.shape
    d = cfg.d_model
    scale = 1.0 / math.sqrt(d)
    mask = np.triu(np.ones((T, T), dtype=bool), 1)
    x = p.embedding[ids] + P["pos"][:T]
    caches = []
    for layer in range(cfg.n_layers):
        pre = f"h{layer}."
        a, ln1 = _ln_forward(x, P[pre + "ln1_g"], P[pre + "ln1_b"])
        q, k, v = a @ P[pre + "wq"], a @ P[pre + "wk"], a @ P[pre + "wv"]
        s = (q @ k.transpose(0, 2, 1)) * scale
        s[:, mask] = -np.inf
        att = _softmax(s)
        o = att @ v
        x = x + o @ P[pre + "wo"]
        f, ln2 = _ln_forward(x, P[pre + "ln2_g"], P[pre + "ln2_b"])
        hpre = f @ P[pre + "w1"] + P[pre + "b1"]
        h, th = _gelu(hpre)
        x = x + h @ P[pre + "w2"] + P[pre + "b2"]
        if keep_cache:
            caches.append((a, ln1, q, k, v, att, o, f, ln2, hpre, h, th))
    xf, lnf = _ln_forward(x, P["lnf_g"], P["lnf_b"])
    logits = xf @ p.lm_head.T
    return logits, (caches, xf, lnf)


def forward(p: LmParams, ids) -> np.ndarray:
    """Logits of shape (T, V) for a 1-d input or (B, T, V) for a batch."""
    ids = np.asarray(ids, dtype=np.int64)
    squeeze = ids.ndim == 1
    ids2 = np.atleast_2d(ids)
    _check_ids(p, ids2)
    logits, _ = _forward(p, ids2, keep_cache=False)
    return logits[0] if squeeze else logits


def token_nll(logits: np.ndarray, targets: np.ndarray) -> np.ndarray:
    """Per-position negative log-likelihood, computed at 64-bit."""
    z = logits.astype(np.float64)
    z = z - z.max(-1, keepdims=True)
    lse = np.log(np.exp(z).sum(-1))
    picked = np.take_along_axis(z, targets[..., None], -1)[..., 0]
    return lse - picked


def backward(p: LmParams, batch: Batch, dlogits: np.ndarray, cache) -> LmParams:
    """Gradients of all blocks given d(loss)/d(logits)."""
    cfg = p.config
    P = p.internal
    caches, xf, lnf = cache
    ids = batch.inputs
    B, T = ids.shape
    scale = 1.0 / math.sqrt(cfg.d_model)
    g = p.zeros_like()
    G = g.internal
    dlogits = dlogits.astype(p.dtype)

    g.lm_head[...] = np.einsum("btv,btd->vd", dlogits, xf)
    dxf = dlogits @ p.lm_head
    dx, G["lnf_g"][...], G["lnf_b"][...] = _ln_backward(dxf, P["lnf_g"], lnf)
    for layer in reversed(range(cfg.n_layers)):
        pre = f"h{layer}."
        a, ln1, q, k, v, att, o, f, ln2, hpre, h, th = caches[layer]
        # feed-forward
        G[pre + "b2"][...] = dx.sum((0, 1))
        G[pre + "w2"][...] = np.einsum("btf,btd->fd", h, dx)
        dh = dx @ P[pre + "w2"].T
        dhpre = _gelu_backward(dh, hpre, th)
        G[pre + "b1"][...] = dhpre.sum((0, 1))
        G[pre + "w1"][...] = np.einsum("btd,btf->df", f, dhpre)
        df = dhpre @ P[pre + "w1"].T
        dxf2, G[pre + "ln2_g"][...], G[pre + "ln2_b"][...] = _ln_backward(
            df, P[pre + "ln2_g"], ln2)
        dx = dx + dxf2
        # attention
        G[pre + "wo"][...] = np.einsum("btd,bte->de", o, dx)
        do = dx @ P[pre + "wo"].T
        datt = do @ v.transpose(0, 2, 1)
        dv = att.transpose(0, 2, 1) @ do
        ds = att * (datt - (datt * att).sum(-1, keepdims=True)) * scale
        dq = ds @ k
        dk = ds.transpose(0, 2, 1) @ q
        G[pre + "wq"][...] = np.einsum("btd,bte->de", a, dq)
        G[pre + "wk"][...] = np.einsum("btd,bte->de", a, dk)
        G[pre + "wv"][...] = np.einsum("btd,bte->de", a, dv)
        da = dq @ P[pre + "wq"].T + dk @ P[pre + "wk"].T + dv @ P[pre + "wv"].T
        dxa, G[pre + "ln1_g"][...], G[pre + "ln1_b"][...] = _ln_backward(
            da, P[pre + "ln1_g"], ln1)
        dx = dx + dxa
    G["pos"][:T] = dx.sum(0)
    np.add.at(g.embedding, ids.reshape(-1), dx.reshape(-1, cfg.d_model))
    return g


def loss_and_grads(p: LmParams, batch: Batch) -> tuple[float, LmParams]:
    """Mean next-token cross-entropy and gradients for every parameter block."""
    logits, cache = forward_with_cache(p, batch)
    loss, dlogits = nll_and_dlogits(logits, batch.targets)
    return loss, backward(p, batch, dlogits, cache)


def forward_with_cache(p: LmParams, batch: Batch):
    _check_ids(p, batch.inputs)
    _check_ids(p, batch.targets)
    return _forward(p, batch.inputs, keep_cache=True)


def nll_and_dlogits(logits: np.ndarray, targets: np.ndarray) -> tuple[float, np.ndarray]:
    """Mean NLL and its gradient w.r.t. the logits (64-bit)."""
    loss = float(token_nll(logits, targets).mean())
    if not math.isfinite(loss):
        raise FloatingPointError(
            f"non-finite loss {loss}; max |logit| {np.abs(logits).max():.3g}")
    probs = _softmax(logits.astype(np.float64))
    np.put_along_axis(probs, targets[..., None],
                      np.take_along_axis(probs, targets[..., None], -1) - 1.0, -1)
    return loss, probs / targets.size


def loss_only(p: LmParams, batch: Batch) -> float:
    logits, _ = _forward(p, batch.inputs, keep_cache=False)
    return float(token_nll(logits, batch.targets).mean())


@dataclass
class AdamWState:
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8
    weight_decay: float = 0.01
    m: dict[str, np.ndarray] = field(default_factory=dict)
    v: dict[str, np.ndarray] = field(default_factory=dict)
    step: dict[str, int] = field(default_factory=dict)

    def copy(self) -> "AdamWState":
        return AdamWState(self.beta1, self.beta2, self.eps, self.weight_decay,
                          {k: a.copy() for k, a in self.m.items()},
                          {k: a.copy() for k, a in self.v.items()},
                          dict(self.step))


def adamw_step(p: LmParams, grads: LmParams, state: AdamWState, lr: float,
               names: list[str] | None = None) -> LmParams:
    """In-place AdamW update of ``names`` (default: every tensor).

    Moments and bias-correction step counts are kept per tensor, so tensors
    excluded from an update keep their optimizer state untouched.
    """
    for name in names if names is not None else [n for n, _ in p.named()]:
        w = p.get(name)
        g = grads.get(name)
        if name not in state.m:
            state.m[name] = np.zeros_like(w)
            state.v[name] = np.zeros_like(w)
            state.step[name] = 0
        state.step[name] += 1
        t = state.step[name]
        m, v = state.m[name], state.v[name]
        m *= state.beta1
        m += (1 - state.beta1) * g
        v *= state.beta2
        v += (1 - state.beta2) * (g * g)
        mhat = m / (1 - state.beta1 ** t)
        vhat = v / (1 - state.beta2 ** t)
        w -= (lr * (mhat / (np.sqrt(vhat) + state.eps) + state.weight_decay * w)).astype(w.dtype)
    return p
