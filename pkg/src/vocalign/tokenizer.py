"""Byte-level BPE tokenizers: training, GPT-2 style file loading, encode/decode."""
from __future__ import annotations

import json
import struct
from collections import Counter, defaultdict
from dataclasses import dataclass, field
from functools import lru_cache
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import regex

# GPT-2 pre-tokenization pattern; a leading space stays attached to the word after it.
PRETOKENIZE_PATTERN = regex.compile(
    r"""'s|'t|'re|'ve|'m|'ll|'d| ?\p{L}+| ?\p{N}+| ?[^\s\p{L}\p{N}]+|\s+(?!\S)|\s+"""
)

STREAM_MAGIC = b"TKS1"
SEGMENT_MAGIC = b"SEG1"


class TokenizerError(ValueError):
    pass


class BPETrainingError(TokenizerError):
    def __init__(self, message: str, achievable_size: int):
        super().__init__(message)
        self.achievable_size = achievable_size


@lru_cache(maxsize=1)
def bytes_to_unicode() -> dict[int, str]:
    """The GPT-2 byte -> printable character table."""
    bs = (
        list(range(ord("!"), ord("~") + 1))
        + list(range(ord("¡"), ord("¬") + 1))
        + list(range(ord("®"), ord("ÿ") + 1))
    )
    cs = bs[:]
    n = 0
    for b in range(256):
        if b not in bs:
            bs.append(b)
            cs.append(256 + n)
            n += 1
    return {b: chr(c) for b, c in zip(bs, cs)}


@lru_cache(maxsize=1)
def unicode_to_bytes() -> dict[str, int]:
    return {c: b for b, c in bytes_to_unicode().items()}


def pretokenize(text: str) -> list[str]:
    return PRETOKENIZE_PATTERN.findall(text)


def token_bytes(token: str) -> bytes:
    """Raw bytes of a byte-mapped token string."""
    inv = unicode_to_bytes()
    return bytes(inv[c] for c in token)


@dataclass(frozen=True)
class TokenStream:
    """Token IDs plus the end offset of every segment (one segment per corpus line)."""

    ids: np.ndarray
    segment_bounds: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        ids = np.ascontiguousarray(self.ids, dtype=np.int64).reshape(-1)
        object.__setattr__(self, "ids", ids)
        if self.segment_bounds is None:
            bounds = np.array([len(ids)] if len(ids) else [], dtype=np.int64)
        else:
            bounds = np.ascontiguousarray(self.segment_bounds, dtype=np.int64).reshape(-1)
        if len(bounds):
            if np.any(np.diff(bounds) <= 0) or bounds[0] <= 0:
                raise ValueError("segment bounds must be strictly increasing and positive")
            if bounds[-1] != len(ids):
                raise ValueError(
                    f"last segment bound {bounds[-1]} != stream length {len(ids)}"
                )
        elif len(ids):
            raise ValueError("nonempty stream needs at least one segment bound")
        object.__setattr__(self, "segment_bounds", bounds)

    def __len__(self) -> int:
        return len(self.ids)

    @property
    def n_segments(self) -> int:
        return len(self.segment_bounds)

    def segments(self) -> list[np.ndarray]:
        starts = np.concatenate([[0], self.segment_bounds[:-1]])
        return [self.ids[s:e] for s, e in zip(starts, self.segment_bounds)]

    def segment_ids(self) -> np.ndarray:
        """Segment index of every position."""
        lengths = np.diff(np.concatenate([[0], self.segment_bounds]))
        return np.repeat(np.arange(len(lengths), dtype=np.int64), lengths)

    @classmethod
    def from_segments(cls, segments: Iterable[Sequence[int]]) -> "TokenStream":
        parts = [np.asarray(s, dtype=np.int64) for s in segments]
        parts = [p for p in parts if len(p)]
        if not parts:
            return cls(np.zeros(0, dtype=np.int64))
        bounds = np.cumsum([len(p) for p in parts])
        return cls(np.concatenate(parts), bounds)

    def split(self, n_shards: int) -> list["TokenStream"]:
        """Split at segment boundaries into at most ``n_shards`` roughly equal shards."""
        if n_shards <= 1 or self.n_segments <= 1:
            return [self]
        targets = np.linspace(0, len(self), n_shards + 1)[1:-1]
        cut_idx = np.unique(np.searchsorted(self.segment_bounds, targets))
        cut_idx = cut_idx[cut_idx < self.n_segments - 1]
        shards = []
        prev_seg, prev_pos = 0, 0
        for ci in list(cut_idx) + [self.n_segments - 1]:
            end = int(self.segment_bounds[ci])
            bounds = self.segment_bounds[prev_seg : ci + 1] - prev_pos
            shards.append(TokenStream(self.ids[prev_pos:end], bounds))
            prev_seg, prev_pos = ci + 1, end
        return shards

    def save(self, path: str | Path) -> None:
        path = Path(path)
        with open(path, "wb") as f:
            f.write(STREAM_MAGIC)
            f.write(struct.pack("<I", len(self.ids)))
            f.write(self.ids.astype("<u4").tobytes())
        with open(segment_sidecar(path), "wb") as f:
            f.write(SEGMENT_MAGIC)
            f.write(struct.pack("<I", len(self.segment_bounds)))
            f.write(self.segment_bounds.astype("<u8").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "TokenStream":
        path = Path(path)
        data = path.read_bytes()
        if data[:4] != STREAM_MAGIC:
            raise ValueError(f"{path}: bad magic {data[:4]!r}")
        (count,) = struct.unpack_from("<I", data, 4)
        ids = np.frombuffer(data, dtype="<u4", count=count, offset=8).astype(np.int64)
        sidecar = segment_sidecar(path)
        if sidecar.exists():
            sdata = sidecar.read_bytes()
            if sdata[:4] != SEGMENT_MAGIC:
                raise ValueError(f"{sidecar}: bad magic {sdata[:4]!r}")
            (nseg,) = struct.unpack_from("<I", sdata, 4)
            bounds = np.frombuffer(sdata, dtype="<u8", count=nseg, offset=8).astype(np.int64)
        else:
            bounds = None
        return cls(ids, bounds)


def segment_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".seg")


class Tokenizer:
    """Immutable byte-level BPE tokenizer.

    ``id_to_token`` holds byte-mapped token strings (the vocab.json convention).
    Tokens that are neither single bytes nor merge products are treated as special
    tokens: they never come out of ``encode`` and are excluded from alignment.
    """

    def __init__(
        self,
        id_to_token: Sequence[str],
        merges: Sequence[tuple[str, str]],
        special_tokens: Sequence[str] = (),
    ):
        self.id_to_token: tuple[str, ...] = tuple(id_to_token)
        self.token_to_id: dict[str, int] = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            counts = Counter(self.id_to_token)
            dup = next(t for t, c in counts.items() if c > 1)
            raise TokenizerError(f"duplicate token {dup!r}")
        self.merges: tuple[tuple[str, str], ...] = tuple(merges)
        self.byte_map = bytes_to_unicode()
        for b, ch in self.byte_map.items():
            if ch not in self.token_to_id:
                raise TokenizerError(f"byte token for 0x{b:02x} ({ch!r}) missing from vocab")
        for rank, (a, b) in enumerate(self.merges):
            for operand in (a, b, a + b):
                if operand not in self.token_to_id:
                    raise TokenizerError(
                        f"merge {rank} ({a!r} {b!r}): token {operand!r} not in vocab"
                    )
        self.ranks = {pair: r for r, pair in enumerate(self.merges)}
        produced = set(self.byte_map.values()) | {a + b for a, b in self.merges}
        declared = set(special_tokens)
        self.special_tokens: frozenset[str] = frozenset(
            t for t in self.id_to_token if t not in produced or t in declared
        )
        self._byte_ids = np.array(
            [self.token_to_id[self.byte_map[b]] for b in range(256)], dtype=np.int64
        )
        self._cache: dict[str, tuple[int, ...]] = {}

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def vocab_size(self) -> int:
        return len(self.id_to_token)

    def __repr__(self) -> str:
        return f"Tokenizer(vocab_size={len(self)}, merges={len(self.merges)})"

    def _bpe(self, word: str) -> tuple[int, ...]:
        cached = self._cache.get(word)
        if cached is not None:
            return cached
        parts = [self.byte_map[b] for b in word.encode("utf-8")]
        ranks = self.ranks
        while len(parts) > 1:
            best, best_rank = None, None
            for pair in zip(parts, parts[1:]):
                r = ranks.get(pair)
                if r is not None and (best_rank is None or r < best_rank):
                    best, best_rank = pair, r
            if best is None:
                break
            a, b = best
            merged, i = [], 0
            while i < len(parts):
                if i < len(parts) - 1 and parts[i] == a and parts[i + 1] == b:
                    merged.append(a + b)
                    i += 2
                else:
                    merged.append(parts[i])
                    i += 1
            parts = merged
        ids = tuple(self.token_to_id[p] for p in parts)
        self._cache[word] = ids
        return ids

    def encode_ids(self, text: str) -> list[int]:
        out: list[int] = []
        for word in pretokenize(text):
            out.extend(self._bpe(word))
        return out

    def encode(self, text: str) -> TokenStream:
        """Encode ``text`` as a single segment."""
        return TokenStream(np.array(self.encode_ids(text), dtype=np.int64))

    def encode_lines(self, lines: Iterable[str]) -> TokenStream:
        """One segment per line; lines that produce no tokens are dropped."""
        return TokenStream.from_segments(self.encode_ids(line) for line in lines)

    def decode_bytes(self, ids: Sequence[int] | np.ndarray) -> bytes:
        inv = unicode_to_bytes()
        n = len(self.id_to_token)
        out = bytearray()
        for pos, i in enumerate(np.asarray(ids, dtype=np.int64).tolist()):
            if not 0 <= i < n:
                raise IndexError(f"token id {i} at position {pos} out of range [0, {n})")
            token = self.id_to_token[i]
            if token in self.special_tokens and any(c not in inv for c in token):
                out.extend(token.encode("utf-8"))
            else:
                out.extend(inv[c] for c in token)
        return bytes(out)

    def decode(self, stream: TokenStream | Sequence[int] | np.ndarray) -> str:
        ids = stream.ids if isinstance(stream, TokenStream) else stream
        return self.decode_bytes(ids).decode("utf-8", errors="replace")

    def decode_segments(self, stream: TokenStream) -> list[str]:
        return [self.decode(seg) for seg in stream.segments()]

    def content_ids(self) -> np.ndarray:
        return np.array(
            [i for i, t in enumerate(self.id_to_token) if t not in self.special_tokens],
            dtype=np.int64,
        )

    def save(self, vocab_file: str | Path, merges_file: str | Path) -> None:
        with open(vocab_file, "w", encoding="utf-8") as f:
            json.dump(self.token_to_id, f, ensure_ascii=False, indent=0)
        with open(merges_file, "w", encoding="utf-8") as f:
            f.write("#version: 0.2\n")
            for a, b in self.merges:
                f.write(f"{a} {b}\n")


def load_tokenizer(
    vocab_file: str | Path,
    merges_file: str | Path,
    special_tokens: Sequence[str] = (),
) -> Tokenizer:
    """Load GPT-2 style ``vocab.json`` + ``merges.txt`` files."""

    def no_duplicates(pairs):
        seen = {}
        for k, v in pairs:
            if k in seen:
                raise TokenizerError(f"{vocab_file}: token {k!r} listed twice")
            seen[k] = v
        return seen

    with open(vocab_file, encoding="utf-8") as f:
        vocab = json.load(f, object_pairs_hook=no_duplicates)
    by_id: dict[int, str] = {}
    for token, idx in vocab.items():
        if not isinstance(idx, int) or idx < 0:
            raise TokenizerError(f"{vocab_file}: token {token!r} has invalid id {idx!r}")
        if idx in by_id:
            raise TokenizerError(
                f"{vocab_file}: duplicate id {idx} for {by_id[idx]!r} and {token!r}"
            )
        by_id[idx] = token
    missing = sorted(set(range(len(by_id))) - set(by_id))
    if missing:
        raise TokenizerError(
            f"{vocab_file}: non-dense id space, first missing id {missing[0]} "
            f"(max id {max(by_id)}, {len(by_id)} tokens)"
        )
    merges = []
    with open(merges_file, encoding="utf-8") as f:
        for lineno, line in enumerate(f, 1):
            line = line.rstrip("\r\n")
            if not line or (lineno == 1 and line.startswith("#version")):
                continue
            parts = line.split(" ")
            if len(parts) != 2:
                raise TokenizerError(f"{merges_file}:{lineno}: expected two tokens, got {line!r}")
            a, b = parts
            for operand in (a, b, a + b):
                if operand not in vocab:
                    raise TokenizerError(
                        f"{merges_file}:{lineno}: dangling merge operand {operand!r}"
                    )
            merges.append((a, b))
    return Tokenizer([by_id[i] for i in range(len(by_id))], merges, special_tokens)


def _count_words(corpus: Iterable[str]) -> Counter:
    words: Counter = Counter()
    for line in corpus:
        words.update(pretokenize(line))
    return words


def train_bpe(
    corpus: Iterable[str],
    target_size: int,
    special_tokens: Sequence[str] = (),
) -> Tokenizer:
    """Learn merges on ``corpus`` lines until the vocab holds ``target_size`` entries.

    Pairs are counted over pre-tokens weighted by frequency; ties go to the
    pair whose (left, right) raw bytes sort first.
    """
    n_merges = target_size - 256 - len(special_tokens)
    if n_merges < 0:
        raise ValueError(
            f"target_size {target_size} < 256 byte tokens + {len(special_tokens)} specials"
        )
    byte_map = bytes_to_unicode()
    word_counts = _count_words(corpus)
    if not word_counts:
        raise ValueError("empty corpus")

    tokens: list[bytes] = [bytes([b]) for b in range(256)]
    token_index: dict[bytes, int] = {t: i for i, t in enumerate(tokens)}
    words: list[list[int]] = [list(w.encode("utf-8")) for w in word_counts]
    freqs: list[int] = list(word_counts.values())

    pair_counts: dict[tuple[int, int], int] = defaultdict(int)
    where: dict[tuple[int, int], set[int]] = defaultdict(set)
    for wi, w in enumerate(words):
        for pair in zip(w, w[1:]):
            pair_counts[pair] += freqs[wi]
            where[pair].add(wi)

    merges: list[tuple[int, int]] = []
    while len(tokens) < 256 + n_merges:
        live = [(p, c) for p, c in pair_counts.items() if c > 0]
        if not live:
            achievable = len(tokens) + len(special_tokens)
            raise BPETrainingError(
                f"corpus supports only {len(tokens) - 256} new tokens; "
                f"achievable size is {achievable}",
                achievable,
            )
        best, _ = min(live, key=lambda pc: (-pc[1], tokens[pc[0][0]], tokens[pc[0][1]]))
        a, b = best
        new_token = tokens[a] + tokens[b]
        if new_token in token_index:
            # Same byte string reachable through a different split; reuse its ID.
            new_id = token_index[new_token]
        else:
            new_id = len(tokens)
            tokens.append(new_token)
            token_index[new_token] = new_id
        merges.append(best)
        for wi in list(where[best]):
            w = words[wi]
            f = freqs[wi]
            for pair in zip(w, w[1:]):
                pair_counts[pair] -= f
            merged, i = [], 0
            while i < len(w):
                if i < len(w) - 1 and w[i] == a and w[i + 1] == b:
                    merged.append(new_id)
                    i += 2
                else:
                    merged.append(w[i])
                    i += 1
            for pair in zip(w, w[1:]):
                where[pair].discard(wi)
            words[wi] = merged
            for pair in zip(merged, merged[1:]):
                pair_counts[pair] += f
                where[pair].add(wi)
        del pair_counts[best]

    def as_str(t: bytes) -> str:
        return "".join(byte_map[x] for x in t)

    id_to_token = [as_str(t) for t in tokens] + list(special_tokens)
    merge_strs = [(as_str(tokens[a]), as_str(tokens[b])) for a, b in merges]
    return Tokenizer(id_to_token, merge_strs, special_tokens)


def compression_rate(tok: Tokenizer, corpus: str | Iterable[str]) -> float:
    """UTF-8 bytes per token. A string is encoded whole; an iterable line by line."""
    if isinstance(corpus, str):
        n_bytes = len(corpus.encode("utf-8"))
        n_tokens = len(tok.encode_ids(corpus))
    else:
        n_bytes = n_tokens = 0
        for line in corpus:
            n_bytes += len(line.encode("utf-8"))
            n_tokens += len(tok.encode_ids(line))
    if n_tokens == 0:
        raise ValueError("corpus produced no tokens")
    return n_bytes / n_tokens
