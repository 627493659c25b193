"""Token-ID alignment between two vocabularies and its evaluation metrics."""
from __future__ import annotations

import csv
import json
import logging
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Iterable, Sequence

import numpy as np

from .embedding import EmbeddingMatrix, unit_rows
from .tokenizer import Tokenizer, TokenStream

log = logging.getLogger(__name__)

DEFAULT_ANCHORS = 300
SEGMENT_EMB_HEADER = struct.Struct("<II")

Pair = tuple[int, int]


@dataclass
class AlignmentMap:
    """One-to-one ID maps in both directions.

    ``s2t[s]`` is the target ID for source token ``s`` and ``t2s[t]`` the source
    ID whose parameters initialize target token ``t``. Rows that had no trained
    vector point at ID 0 with similarity 0 and are listed in ``fallback_t`` /
    ``fallback_s``.
    """

    s2t: np.ndarray
    t2s: np.ndarray
    sim_s2t: np.ndarray
    sim_t2s: np.ndarray
    shared: frozenset[Pair] = frozenset()
    fallback_t: frozenset[int] = frozenset()
    fallback_s: frozenset[int] = frozenset()

    def __post_init__(self):
        self.s2t = np.asarray(self.s2t, dtype=np.int64)
        self.t2s = np.asarray(self.t2s, dtype=np.int64)
        self.sim_s2t = np.asarray(self.sim_s2t, dtype=np.float64)
        self.sim_t2s = np.asarray(self.sim_t2s, dtype=np.float64)
        self.shared = frozenset((int(s), int(t)) for s, t in self.shared)
        self.fallback_t = frozenset(int(t) for t in self.fallback_t)
        self.fallback_s = frozenset(int(s) for s in self.fallback_s)

    @property
    def source_size(self) -> int:
        return len(self.s2t)

    @property
    def target_size(self) -> int:
        return len(self.t2s)

    @classmethod
    def identity(cls, n: int) -> "AlignmentMap":
        ids = np.arange(n)
        return cls(ids, ids.copy(), np.ones(n), np.ones(n), frozenset((i, i) for i in range(n)))

    def validate(self) -> None:
        if np.any((self.s2t < 0) | (self.s2t >= self.target_size)):
            raise ValueError("s2t holds an invalid target id")
        if np.any((self.t2s < 0) | (self.t2s >= self.source_size)):
            raise ValueError("t2s holds an invalid source id")
        for s, t in self.shared:
            if self.s2t[s] != t or self.t2s[t] != s:
                raise ValueError(f"shared pair ({s}, {t}) not mapped directly")
        for sims in (self.sim_s2t, self.sim_t2s):
            if np.any(np.abs(sims) > 1 + 1e-9):
                raise ValueError("similarity outside [-1, 1]")

    def __eq__(self, other):
        if not isinstance(other, AlignmentMap):
            return NotImplemented
        return (
            np.array_equal(self.s2t, other.s2t)
            and np.array_equal(self.t2s, other.t2s)
            and self.sim_s2t.tobytes() == other.sim_s2t.tobytes()
            and self.sim_t2s.tobytes() == other.sim_t2s.tobytes()
            and self.shared == other.shared
            and self.fallback_t == other.fallback_t
            and self.fallback_s == other.fallback_s
        )

    def save_tsv(self, path: str | Path) -> None:
        shared_s = {s for s, _ in self.shared}
        shared_t = {t for _, t in self.shared}
        with open(path, "w", newline="") as f:
            w = csv.writer(f, delimiter="\t", lineterminator="\n")
            w.writerow(["direction", "from_id", "to_id", "cosine", "shared_flag", "fallback_flag"])
            for s, (t, c) in enumerate(zip(self.s2t.tolist(), self.sim_s2t.tolist())):
                w.writerow(["s2t", s, t, repr(c), int(s in shared_s), int(s in self.fallback_s)])
            for t, (s, c) in enumerate(zip(self.t2s.tolist(), self.sim_t2s.tolist())):
                w.writerow(["t2s", t, s, repr(c), int(t in shared_t), int(t in self.fallback_t)])

    @classmethod
    def load_tsv(cls, path: str | Path) -> "AlignmentMap":
        rows: dict[str, list] = {"s2t": [], "t2s": []}
        with open(path, newline="") as f:
            reader = csv.reader(f, delimiter="\t")
            header = next(reader)
            if header[:3] != ["direction", "from_id", "to_id"]:
                raise ValueError(f"{path}: unexpected header {header}")
            for lineno, rec in enumerate(reader, 2):
                if len(rec) != 6 or rec[0] not in rows:
                    raise ValueError(f"{path}:{lineno}: malformed row {rec}")
                rows[rec[0]].append((int(rec[1]), int(rec[2]), float(rec[3]),
                                     rec[4] == "1", rec[5] == "1"))
        for direction, recs in rows.items():
            recs.sort()
            if [r[0] for r in recs] != list(range(len(recs))):
                raise ValueError(f"{path}: {direction} ids are not dense")
        s_rows, t_rows = rows["s2t"], rows["t2s"]
        shared = {(r[1], r[0]) for r in t_rows if r[3]}
        m = cls(
            s2t=[r[1] for r in s_rows], t2s=[r[1] for r in t_rows],
            sim_s2t=[r[2] for r in s_rows], sim_t2s=[r[2] for r in t_rows],
            shared=frozenset(shared),
            fallback_t=frozenset(r[0] for r in t_rows if r[4]),
            fallback_s=frozenset(r[0] for r in s_rows if r[4]),
        )
        m.validate()
        return m


def shared_tokens(tok_s: Tokenizer, tok_t: Tokenizer, *,
                  include_special: bool = False) -> set[Pair]:
    """(source_id, target_id) pairs whose token strings are identical."""
    pairs = set()
    for token, t in tok_t.token_to_id.items():
        s = tok_s.token_to_id.get(token)
        if s is None:
            continue
        if not include_special and (token in tok_s.special_tokens or token in tok_t.special_tokens):
            continue
        pairs.add((s, t))
    return pairs


def overlap_ratio(tok_s: Tokenizer, tok_t: Tokenizer) -> float:
    """|V_s intersect V_t| / |V_t| over token strings."""
    common = sum(1 for token in tok_t.token_to_id if token in tok_s.token_to_id)
    return common / len(tok_t)


def to_relative(emb: EmbeddingMatrix, anchors: Sequence[int]) -> EmbeddingMatrix:
    """Re-express every row as its cosine similarities to the ``anchors`` rows."""
    anchors = [int(a) for a in anchors]
    if not anchors:
        raise ValueError("at least one anchor is required")
    unit, norms = unit_rows(emb.vectors)
    for a in anchors:
        if emb.untrained[a] or norms[a] == 0:
            raise ValueError(f"anchor row {a} is untrained or has zero norm")
    rel = unit @ unit[anchors].T
    rel[emb.untrained] = 0.0
    return EmbeddingMatrix(rel, emb.untrained.copy())


def select_anchors(shared: Iterable[Pair], emb_s: EmbeddingMatrix, emb_t: EmbeddingMatrix,
                   k: int = DEFAULT_ANCHORS, freq_s: np.ndarray | None = None,
                   freq_t: np.ndarray | None = None) -> list[Pair]:
    """Top-``k`` shared pairs with both rows trained, by the smaller corpus frequency."""
    usable = sorted(
        (s, t) for s, t in shared if not emb_s.untrained[s] and not emb_t.untrained[t]
    )
    if len(usable) < k:
        raise ValueError(f"relative mode needs {k} trained shared pairs, found {len(usable)}")
    if freq_s is not None and freq_t is not None:
        usable.sort(key=lambda st: (-min(freq_s[st[0]], freq_t[st[1]]), st[0]))
    return usable[:k]


def _best_matches(query: EmbeddingMatrix, keys: EmbeddingMatrix, block: int
                  ) -> tuple[np.ndarray, np.ndarray]:
    q_unit, q_norm = unit_rows(query.vectors)
    k_unit, k_norm = unit_rows(keys.vectors)
    usable_keys = keys.trained & (k_norm > 0)
    best = np.zeros(query.rows, dtype=np.int64)
    sims = np.zeros(query.rows)
    if not usable_keys.any():
        return best, sims
    rows = np.flatnonzero(query.trained & (q_norm > 0))
    for start in range(0, len(rows), block):
        idx = rows[start:start + block]
        s = q_unit[idx] @ k_unit.T
        s[:, ~usable_keys] = -np.inf
        arg = np.argmax(s, axis=1)  # first maximum = lowest id on ties
        best[idx] = arg
        sims[idx] = np.clip(s[np.arange(len(idx)), arg], -1.0, 1.0)
    return best, sims


def align_vocabs(emb_s: EmbeddingMatrix, emb_t: EmbeddingMatrix,
                 shared: Iterable[Pair] = (), mode: str = "direct",
                 k: int = DEFAULT_ANCHORS, *, freq_s: np.ndarray | None = None,
                 freq_t: np.ndarray | None = None, block: int = 2048) -> AlignmentMap:
    """Map every token to its most cosine-similar token in the other vocabulary.

    ``mode="relative"`` first re-encodes both spaces against ``k`` shared anchor
    tokens so that independently trained spaces become comparable. Shared pairs
    are mapped directly regardless of similarity.
    """
    shared = {(int(s), int(t)) for s, t in shared}
    if mode == "relative":
        anchors = select_anchors(shared, emb_s, emb_t, k, freq_s, freq_t)
        emb_s = to_relative(emb_s, [s for s, _ in anchors])
        emb_t = to_relative(emb_t, [t for _, t in anchors])
    elif mode != "direct":
        raise ValueError(f"unknown alignment mode {mode!r}")
    if emb_s.dim != emb_t.dim:
        raise ValueError(f"embedding dims differ: {emb_s.dim} vs {emb_t.dim}")
    if not emb_t.trained.any():
        raise ValueError("all target rows are untrained; nothing to align")

    t2s, sim_t2s = _best_matches(emb_t, emb_s, block)
    s2t, sim_s2t = _best_matches(emb_s, emb_t, block)

    s_unit, s_norm = unit_rows(emb_s.vectors)
    t_unit, t_norm = unit_rows(emb_t.vectors)
    for s, t in shared:
        t2s[t], s2t[s] = s, t
        c = float(np.clip(s_unit[s] @ t_unit[t], -1.0, 1.0))
        sim_t2s[t] = sim_s2t[s] = c
    shared_t = {t for _, t in shared}
    shared_s = {s for s, _ in shared}
    fallback_t = {int(t) for t in np.flatnonzero(emb_t.untrained | (t_norm == 0))} - shared_t
    fallback_s = {int(s) for s in np.flatnonzero(emb_s.untrained | (s_norm == 0))} - shared_s
    m = AlignmentMap(s2t, t2s, sim_s2t, sim_t2s, frozenset(shared),
                     frozenset(fallback_t), frozenset(fallback_s))
    log.info("aligned %d target / %d source rows (%d shared, %d fallback)",
             m.target_size, m.source_size, len(shared), len(fallback_t))
    return m


def shuffle_alignment(m: AlignmentMap, fraction: float, seed: int = 0) -> AlignmentMap:
    """Replace ``fraction`` of the entries of each direction by random IDs.

    For one seed the replaced entries are nested across fractions, so a larger
    fraction always corrupts a superset of a smaller one.
    """
    if not 0 <= fraction <= 1:
        raise ValueError("fraction must be in [0, 1]")
    rng = np.random.default_rng(seed)
    order_t = rng.permutation(m.target_size)
    random_s = rng.integers(0, m.source_size, m.target_size)
    order_s = rng.permutation(m.source_size)
    random_t = rng.integers(0, m.target_size, m.source_size)
    hit_t = order_t[: int(round(fraction * m.target_size))]
    hit_s = order_s[: int(round(fraction * m.source_size))]
    t2s, s2t = m.t2s.copy(), m.s2t.copy()
    sim_t2s, sim_s2t = m.sim_t2s.copy(), m.sim_s2t.copy()
    t2s[hit_t] = random_s[hit_t]
    s2t[hit_s] = random_t[hit_s]
    sim_t2s[hit_t] = 0.0
    sim_s2t[hit_s] = 0.0
    hit_t_set, hit_s_set = set(hit_t.tolist()), set(hit_s.tolist())
    shared = frozenset(
        (s, t) for s, t in m.shared if t not in hit_t_set and s not in hit_s_set
    )
    return AlignmentMap(s2t, t2s, sim_s2t, sim_t2s, shared,
                        m.fallback_t - hit_t_set, m.fallback_s - hit_s_set)


def convert_stream(stream: TokenStream, m: AlignmentMap) -> TokenStream:
    """Map every source ID through ``s2t``; segment bounds are kept."""
    ids = stream.ids
    bad = np.flatnonzero((ids < 0) | (ids >= m.source_size))
    if len(bad):
        p = int(bad[0])
        raise IndexError(f"source id {int(ids[p])} at position {p} out of range")
    return TokenStream(m.s2t[ids], stream.segment_bounds)


def _segment_counts(stream: TokenStream, width: int) -> tuple[np.ndarray, np.ndarray]:
    keys = stream.segment_ids() * width + stream.ids
    return np.unique(keys, return_counts=True)


def bleu1(candidate: TokenStream, reference: TokenStream, *,
          brevity_penalty: bool = True) -> float:
    """Corpus-level BLEU restricted to unigrams.

    Clipped unigram matches are summed over segments and divided by the total
    candidate length; the brevity penalty is exp(min(0, 1 - r/c)).
    """
    if candidate.n_segments != reference.n_segments:
        raise ValueError(
            f"segment counts differ: {candidate.n_segments} vs {reference.n_segments}"
        )
    c, r = len(candidate), len(reference)
    if c == 0:
        raise ValueError("candidate corpus is empty")
    width = int(max(candidate.ids.max(), reference.ids.max() if r else 0)) + 1
    ck, cc = _segment_counts(candidate, width)
    rk, rc = _segment_counts(reference, width)
    _, ci, ri = np.intersect1d(ck, rk, assume_unique=True, return_indices=True)
    matches = int(np.minimum(cc[ci], rc[ri]).sum())
    score = matches / c
    if brevity_penalty:
        score *= float(np.exp(min(0.0, 1.0 - r / c)))
    return score


Embedder = Callable[[Sequence[str]], np.ndarray]


class GloveSegmentEmbedder:
    """Segment vector = mean of the trained token vectors of the segment."""

    def __init__(self, tokenizer: Tokenizer, emb: EmbeddingMatrix):
        self.tokenizer = tokenizer
        self.emb = emb

    def __call__(self, segments: Sequence[str]) -> np.ndarray:
        out = np.zeros((len(segments), self.emb.dim))
        vec = self.emb.vectors.astype(np.float64)
        for i, text in enumerate(segments):
            ids = np.asarray(self.tokenizer.encode_ids(text), dtype=np.int64)
            ids = ids[ids < self.emb.rows]
            ids = ids[self.emb.trained[ids]]
            if len(ids):
                out[i] = vec[ids].mean(axis=0)
        return out


def segment_similarities(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Row-wise cosine; NaN where either vector is zero (segment skipped)."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ValueError(f"segment embedding shapes differ: {a.shape} vs {b.shape}")
    na, nb = np.linalg.norm(a, axis=1), np.linalg.norm(b, axis=1)
    ok = (na > 0) & (nb > 0)
    sims = np.full(len(a), np.nan)
    sims[ok] = np.einsum("ij,ij->i", a[ok], b[ok]) / (na[ok] * nb[ok])
    return np.clip(sims, -1.0, 1.0)


def semantic_score_from_vectors(a: np.ndarray, b: np.ndarray) -> float:
    sims = segment_similarities(a, b)
    skipped = int(np.isnan(sims).sum())
    if skipped == len(sims):
        raise ValueError("no segment had an embeddable vector")
    if skipped:
        log.warning("semantic score skipped %d of %d segments", skipped, len(sims))
    return float(np.nanmean(sims))


def semantic_score(original: Sequence[str], recovered: Sequence[str],
                   embedder: Embedder) -> float:
    """Mean per-segment cosine between embeddings of original and recovered text."""
    if len(original) != len(recovered):
        raise ValueError(f"segment counts differ: {len(original)} vs {len(recovered)}")
    return semantic_score_from_vectors(embedder(list(original)), embedder(list(recovered)))


def write_segment_embeddings(path: str | Path, vectors: np.ndarray) -> None:
    vectors = np.asarray(vectors, dtype="<f4")
    with open(path, "wb") as f:
        f.write(SEGMENT_EMB_HEADER.pack(*vectors.shape))
        f.write(vectors.tobytes())


def read_segment_embeddings(path: str | Path) -> np.ndarray:
    data = Path(path).read_bytes()
    count, dim = SEGMENT_EMB_HEADER.unpack_from(data)
    if len(data) != 8 + 4 * count * dim:
        raise ValueError(f"{path}: size does not match header ({count} x {dim})")
    return np.frombuffer(data, dtype="<f4", offset=8).reshape(count, dim).astype(np.float32)


def write_summary(path: str | Path, **metrics) -> None:
    with open(path, "w") as f:
        json.dump(metrics, f, indent=2, sort_keys=True)
        f.write("\n")
