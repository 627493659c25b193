"""The desk-scale vocabulary replacement scenario shared by the acceptance tests.

A two-language synthetic corpus (about 1 MB). The source tokenizer (300 tokens)
is trained on the monolingual "a" lines only, the target tokenizer (400 tokens)
on every line, so target-only tokens are mostly whole words of language "b".
"""
from __future__ import annotations

from dataclasses import dataclass, replace
from functools import lru_cache

import numpy as np

from vocalign.adapt import TrainPlan, full_finetune
from vocalign.align import align_vocabs, shared_tokens
from vocalign.cooccurrence import count_cooc
from vocalign.glove import GloveConfig, train_glove
from vocalign.synthetic import bilingual_corpus, topic_corpus
from vocalign.tokenizer import TokenStream, Tokenizer, train_bpe
from vocalign.toylm import LmConfig, LmParams, init_params

CORPUS_BYTES = 1_000_000
SOURCE_SIZE, TARGET_SIZE = 300, 400
GLOVE = GloveConfig(dim=50, min_count=20)
ANCHORS = 40
SOURCE_STEPS = 300


@dataclass
class Pair:
    lines: list[str]
    tok_s: Tokenizer
    tok_t: Tokenizer
    stream_s: TokenStream
    stream_t: TokenStream
    freq_s: np.ndarray
    freq_t: np.ndarray
    shared: set
    source_model: LmParams


@lru_cache(maxsize=1)
def tokenizer_pair() -> Pair:
    lines, tags = bilingual_corpus(CORPUS_BYTES, seed=0)
    tok_s = train_bpe([l for l, t in zip(lines, tags) if t == "a"], SOURCE_SIZE)
    tok_t = train_bpe(lines, TARGET_SIZE)
    stream_s, stream_t = tok_s.encode_lines(lines), tok_t.encode_lines(lines)
    src = init_params(LmConfig(SOURCE_SIZE, 64, 2, 64), seed=0)
    plan = TrainPlan(total_steps=SOURCE_STEPS, stage_boundary=0, lr_stage2=3e-3,
                     batch_tokens=512, seed=0)
    src, _ = full_finetune(src, stream_s, plan)
    return Pair(lines, tok_s, tok_t, stream_s, stream_t,
                np.bincount(stream_s.ids, minlength=SOURCE_SIZE),
                np.bincount(stream_t.ids, minlength=TARGET_SIZE),
                shared_tokens(tok_s, tok_t), src)


@lru_cache(maxsize=4)
def alignment(seed: int):
    """Alignment for one scenario seed; the seed drives both GloVe runs."""
    p = tokenizer_pair()
    emb = {}
    for side, stream, freq, n in (("s", p.stream_s, p.freq_s, SOURCE_SIZE),
                                  ("t", p.stream_t, p.freq_t, TARGET_SIZE)):
        cfg = replace(GLOVE, seed=1000 * seed + (side == "t"))
        emb[side] = train_glove(count_cooc(stream, 15, n), cfg, counts=freq)
    return align_vocabs(emb["s"], emb["t"], p.shared, "relative", ANCHORS,
                        freq_s=p.freq_s, freq_t=p.freq_t)


def eval_plan(seed: int) -> TrainPlan:
    return TrainPlan(total_steps=1, batch_tokens=4096, seed=100 + seed)


@lru_cache(maxsize=1)
def single_language(n_bytes: int = CORPUS_BYTES, vocab: int = SOURCE_SIZE):
    lines = topic_corpus(n_bytes, seed=3)
    tok = train_bpe(lines, vocab)
    return lines, tok, tok.encode_lines(lines)
