"""Seeded synthetic corpora with topical co-occurrence structure, for tests,
benchmarks and the demo pipeline."""
from __future__ import annotations

import numpy as np

CONSONANTS = list("bdfgklmnprstvz")
VOWELS = list("aeiou")


def make_lexicon(n_words: int, rng: np.random.Generator,
                 consonants=CONSONANTS, vowels=VOWELS) -> list[str]:
    words: list[str] = []
    seen = set()
    while len(words) < n_words:
        n_syll = int(rng.integers(1, 4))
        w = "".join(rng.choice(consonants) + rng.choice(vowels) for _ in range(n_syll))
        if rng.random() < 0.3:
            w += rng.choice(consonants)
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words


def topic_corpus(n_bytes: int, seed: int = 0, n_words: int = 400, n_topics: int = 8,
                 topic_share: float = 0.7, consonants=CONSONANTS, vowels=VOWELS) -> list[str]:
    """Lines of pseudo-words; each line draws mostly from one topic's words.

    Word frequencies are Zipfian; every word belongs to one topic.
    """
    rng = np.random.default_rng(seed)
    lexicon = make_lexicon(n_words, rng, consonants, vowels)
    zipf = 1.0 / np.arange(1, n_words + 1)
    zipf /= zipf.sum()
    topic_of = rng.integers(0, n_topics, n_words)
    topic_probs = []
    for k in range(n_topics):
        w = np.where(topic_of == k, zipf, 0.0)
        topic_probs.append(w / w.sum())
    lines: list[str] = []
    size = 0
    while size < n_bytes:
        k = int(rng.integers(n_topics))
        n = int(rng.integers(6, 18))
        from_topic = rng.random(n) < topic_share
        picks = np.where(from_topic,
                         rng.choice(n_words, n, p=topic_probs[k]),
                         rng.choice(n_words, n, p=zipf))
        words = [lexicon[i] for i in picks]
        if rng.random() < 0.3:
            words.insert(int(rng.integers(len(words))), str(int(rng.integers(0, 100))))
        line = " ".join(words).capitalize() + rng.choice([".", ".", ",", "?", "!"])
        lines.append(line)
        size += len(line.encode("utf-8")) + 1
    return lines


A_CONSONANTS = list("bdfgklm")
A_VOWELS = list("aei")
B_CONSONANTS = list("nprstvz")
B_VOWELS = list("ouy")
# Characters whose UTF-8 encodings together touch almost every byte value.
NOISE_CHARS = [chr(c) for c in list(range(1, 32)) + list(range(33, 127)) + list(range(0xA1, 0x800, 7))
               + list(range(0x800, 0x10000, 997)) + list(range(0x10000, 0x110000, 65537))
               if not 0xD800 <= c < 0xE000 and chr(c) not in "\n\r\x0b\x0c\x1c\x1d\x1e\x85"]


def bilingual_corpus(n_bytes: int, seed: int = 0, n_concepts: int = 48, n_topics: int = 6,
                     successor_share: float = 0.8, mixed_share: float = 0.8,
                     noise_share: float = 0.005) -> tuple[list[str], list[str]]:
    """Two pseudo-languages with disjoint alphabets describing the same concepts.

    Sentences walk a sparse concept Markov chain inside one topic and are
    rendered in language ``"a"``, ``"b"``, or code-switched word by word
    (``"ab"``). Topic-specific numbers are shared by both languages and a small
    share of ``"noise"`` lines spreads over most byte values.
    Returns (lines, tag per line).
    """
    rng = np.random.default_rng(seed)
    lex_a = _short_lexicon(n_concepts, rng, A_CONSONANTS, A_VOWELS, (1, 2))
    lex_b = _short_lexicon(n_concepts, rng, B_CONSONANTS, B_VOWELS, (2, 3))
    zipf = 1.0 / np.arange(1, n_concepts + 1) ** 0.8
    topic_of = rng.permutation(np.arange(n_concepts) % n_topics)
    members = [np.flatnonzero(topic_of == k) for k in range(n_topics)]
    topic_p = [zipf[m] / zipf[m].sum() for m in members]
    successors = [rng.choice(members[topic_of[c]], 3, p=topic_p[topic_of[c]])
                  for c in range(n_concepts)]
    numbers = [[str(int(x)) for x in rng.choice(100, 3, replace=False)] for _ in range(n_topics)]
    lines, tags = [], []
    size = 0
    while size < n_bytes:
        u = rng.random()
        if u < noise_share:
            n = int(rng.integers(3, 12))
            line = "".join(rng.choice(NOISE_CHARS, n))
            tag = "noise"
        else:
            k = int(rng.integers(n_topics))
            c = int(rng.choice(members[k], p=topic_p[k]))
            concepts = [c]
            for _ in range(int(rng.integers(5, 14))):
                if rng.random() < successor_share:
                    c = int(rng.choice(successors[c]))
                else:
                    c = int(rng.choice(members[k], p=topic_p[k]))
                concepts.append(c)
            v = rng.random()
            tag = "ab" if v < mixed_share else ("a" if v < (1 + mixed_share) / 2 else "b")
            if tag == "ab":
                words = [(lex_a if rng.random() < 0.5 else lex_b)[i] for i in concepts]
            else:
                lex = lex_a if tag == "a" else lex_b
                words = [lex[i] for i in concepts]
            if rng.random() < 0.5:
                words.insert(int(rng.integers(len(words) + 1)), str(rng.choice(numbers[k])))
            line = " ".join(words) + rng.choice([".", ".", ",", "?"])
        lines.append(line)
        tags.append(tag)
        size += len(line.encode("utf-8")) + 1
    return lines, tags


def _short_lexicon(n_words, rng, consonants, vowels, syllables):
    words, seen = [], set()
    while len(words) < n_words:
        n_syll = int(rng.integers(syllables[0], syllables[1] + 1))
        w = "".join(rng.choice(consonants) + rng.choice(vowels) for _ in range(n_syll))
        if w not in seen:
            seen.add(w)
            words.append(w)
    return words
