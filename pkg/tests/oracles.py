"""Deliberately naive reference implementations used as test oracles.

Nothing here imports the package's algorithms; they are re-derived from the
definitions so that agreement means something.
"""
from __future__ import annotations

from collections import Counter, defaultdict
from fractions import Fraction

import numpy as np
import regex

GPT2_PATTERN = r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""


def gpt2_pretokens(text: str) -> list[bytes]:
    return [m.encode("utf-8") for m in regex.findall(GPT2_PATTERN, text)]


def _merge_all(word: list[bytes], a: bytes, b: bytes) -> list[bytes]:
    out, i = [], 0
    while i < len(word):
        if i + 1 < len(word) and word[i] == a and word[i + 1] == b:
            out.append(a + b)
            i += 2
        else:
            out.append(word[i])
            i += 1
    return out


def brute_bpe_train(lines: list[str], target_size: int) -> tuple[list[bytes], list[tuple[bytes, bytes]]]:
    """Recount every pair from scratch each round; ties by (left, right) bytes."""
    counts = Counter()
    for line in lines:
        counts.update(gpt2_pretokens(line))
    words = {w: [bytes([c]) for c in w] for w in counts}
    vocab = [bytes([i]) for i in range(256)]
    merges = []
    while len(vocab) < target_size:
        pairs = Counter()
        for w, parts in words.items():
            for x, y in zip(parts, parts[1:]):
                pairs[(x, y)] += counts[w]
        if not pairs:
            raise RuntimeError("out of pairs")
        top = max(pairs.values())
        best = min(p for p, c in pairs.items() if c == top)
        merges.append(best)
        if best[0] + best[1] not in vocab:
            vocab.append(best[0] + best[1])
        words = {w: _merge_all(parts, *best) for w, parts in words.items()}
    return vocab, merges


def brute_bpe_encode(text: str, vocab: list[bytes], merges: list[tuple[bytes, bytes]]) -> list[int]:
    """Merge the single leftmost lowest-rank pair until none applies."""
    rank = {}
    for r, m in enumerate(merges):
        rank.setdefault(m, r)
    index = {t: i for i, t in enumerate(vocab)}
    out = []
    for word in gpt2_pretokens(text):
        parts = [bytes([c]) for c in word]
        while True:
            cands = [(rank[(x, y)], i) for i, (x, y) in enumerate(zip(parts, parts[1:]))
                     if (x, y) in rank]
            if not cands:
                break
            _, i = min(cands)
            parts = parts[:i] + [parts[i] + parts[i + 1]] + parts[i + 2:]
        out.extend(index[p] for p in parts)
    return out


def brute_cooc(segments: list[list[int]], window: int, vocab_size: int) -> np.ndarray:
    # Exact rational totals, rounded once to float64.
    hits = Counter()
    for seg in segments:
        for p in range(len(seg)):
            for q in range(p + 1, min(len(seg), p + window + 1)):
                hits[seg[p], seg[q], q - p] += 1
                hits[seg[q], seg[p], q - p] += 1
    totals = defaultdict(Fraction)
    for (a, b, d), c in hits.items():
        totals[a, b] += Fraction(c, d)
    x = np.zeros((vocab_size, vocab_size))
    for cell, v in totals.items():
        x[cell] = float(v)
    return x


def central_diff(f, x: np.ndarray, idx, h: float = 1e-6) -> float:
    old = x[idx]
    x[idx] = old + h
    fp = f()
    x[idx] = old - h
    fm = f()
    x[idx] = old
    return (fp - fm) / (2 * h)


def rel_error(a: float, b: float, floor: float = 1e-8) -> float:
    return abs(a - b) / max(abs(a), abs(b), floor)

