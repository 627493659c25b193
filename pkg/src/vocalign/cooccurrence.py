"""Distance-weighted symmetric co-occurrence tables."""
from __future__ import annotations

import math
import struct
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from functools import reduce
from pathlib import Path

import numpy as np

from . import kernels
from .tokenizer import TokenStream

COOC_MAGIC = b"COC1"
DEFAULT_WINDOW = 15
# Above this many cells the dense accumulator is replaced by a sort-and-reduce path.
DENSE_CELL_LIMIT = 1 << 24
# Integer accumulation stays exact (and converts to float64 exactly) below this.
_EXACT_UNITS = 1 << 53


@dataclass
class CoocTable:
    """Sparse X[i, j] in coordinate form, sorted by (i, j), zero entries absent."""

    rows: np.ndarray
    cols: np.ndarray
    vals: np.ndarray
    vocab_size: int
    total_tokens: int = 0

    def __post_init__(self):
        self.rows = np.ascontiguousarray(self.rows, dtype=np.int64)
        self.cols = np.ascontiguousarray(self.cols, dtype=np.int64)
        self.vals = np.ascontiguousarray(self.vals, dtype=np.float64)

    @classmethod
    def empty(cls, vocab_size: int) -> "CoocTable":
        z = np.zeros(0, dtype=np.int64)
        return cls(z, z.copy(), np.zeros(0), vocab_size, 0)

    @classmethod
    def from_dense(cls, dense: np.ndarray, total_tokens: int = 0) -> "CoocTable":
        i, j = np.nonzero(dense)
        return cls(i, j, dense[i, j], dense.shape[0], total_tokens)

    @classmethod
    def from_keys(cls, keys: np.ndarray, weights: np.ndarray, vocab_size: int,
                  total_tokens: int = 0) -> "CoocTable":
        uniq, inv = np.unique(keys, return_inverse=True)
        vals = np.bincount(inv, weights=weights, minlength=len(uniq))
        keep = vals > 0
        uniq, vals = uniq[keep], vals[keep]
        return cls(uniq // vocab_size, uniq % vocab_size, vals, vocab_size, total_tokens)

    def __len__(self) -> int:
        return len(self.vals)

    def to_dense(self) -> np.ndarray:
        out = np.zeros((self.vocab_size, self.vocab_size))
        out[self.rows, self.cols] = self.vals
        return out

    def to_dict(self) -> dict[tuple[int, int], float]:
        return {
            (int(i), int(j)): float(v) for i, j, v in zip(self.rows, self.cols, self.vals)
        }

    def get(self, i: int, j: int) -> float:
        key = i * self.vocab_size + j
        keys = self.rows * self.vocab_size + self.cols
        pos = np.searchsorted(keys, key)
        if pos < len(keys) and keys[pos] == key:
            return float(self.vals[pos])
        return 0.0

    def token_mass(self) -> np.ndarray:
        """Row sums: total co-occurrence weight of each token."""
        return np.bincount(self.rows, weights=self.vals, minlength=self.vocab_size)

    def __eq__(self, other):
        if not isinstance(other, CoocTable):
            return NotImplemented
        return (
            self.vocab_size == other.vocab_size
            and self.total_tokens == other.total_tokens
            and np.array_equal(self.rows, other.rows)
            and np.array_equal(self.cols, other.cols)
            and self.vals.tobytes() == other.vals.tobytes()
        )

    def save(self, path: str | Path) -> None:
        rec = np.empty(len(self), dtype=[("i", "<u4"), ("j", "<u4"), ("w", "<f8")])
        rec["i"], rec["j"], rec["w"] = self.rows, self.cols, self.vals
        with open(path, "wb") as f:
            f.write(COOC_MAGIC)
            f.write(struct.pack("<IQ", self.vocab_size, len(self)))
            f.write(rec.tobytes())
        # total_tokens is not part of the binary layout; keep it beside the table.
        Path(str(path) + ".meta").write_text(f"{self.total_tokens}\n")

    @classmethod
    def load(cls, path: str | Path) -> "CoocTable":
        data = Path(path).read_bytes()
        if data[:4] != COOC_MAGIC:
            raise ValueError(f"{path}: bad magic {data[:4]!r}")
        vocab_size, count = struct.unpack_from("<IQ", data, 4)
        rec = np.frombuffer(
            data, dtype=[("i", "<u4"), ("j", "<u4"), ("w", "<f8")], count=count, offset=16
        )
        meta = Path(str(path) + ".meta")
        total = int(meta.read_text()) if meta.exists() else 0
        return cls(rec["i"], rec["j"], rec["w"].copy(), vocab_size, total)


def _weight_units(window: int, n: int) -> int | None:
    """lcm(1..window), so that every 1/d weight is a whole number of 1/L units,
    or None when the worst-case cell total could leave the exact integer range."""
    window = max(1, min(window, n - 1))
    scale = math.lcm(*range(1, window + 1))
    worst = 2 * n * sum(scale // d for d in range(1, window + 1))
    return scale if worst < _EXACT_UNITS else None


def _sparse_count(ids: np.ndarray, seg: np.ndarray, window: int, vocab_size: int,
                  scale: int | None):
    keys, weights = [], []
    n = len(ids)
    for d in range(1, min(window, n - 1) + 1):
        same = seg[:-d] == seg[d:]
        a, b = ids[:-d][same], ids[d:][same]
        keys += [a * vocab_size + b, b * vocab_size + a]
        if scale is None:
            weights += [np.full(2 * len(a), 1.0 / d)]
        else:
            weights += [np.full(2 * len(a), scale // d, dtype=np.int64)]
    if not keys:
        return np.zeros(0, dtype=np.int64), np.zeros(0)
    keys, weights = np.concatenate(keys), np.concatenate(weights)
    if scale is None:
        return keys, weights
    order = np.argsort(keys, kind="stable")
    keys = keys[order]
    starts = np.flatnonzero(np.r_[True, keys[1:] != keys[:-1]])
    return keys[starts], np.add.reduceat(weights[order], starts) / scale


def count_cooc(stream: TokenStream, window: int = DEFAULT_WINDOW, vocab_size: int | None = None,
               *, backend: str | None = None) -> CoocTable:
    """Add 1/d to X[a, b] and X[b, a] for every pair of tokens d <= window apart
    inside one segment."""
    if window < 1:
        raise ValueError(f"window must be >= 1, got {window}")
    ids = stream.ids
    if vocab_size is None:
        vocab_size = int(ids.max()) + 1 if len(ids) else 0
    bad = np.flatnonzero((ids < 0) | (ids >= vocab_size))
    if len(bad):
        p = int(bad[0])
        raise ValueError(f"token id {int(ids[p])} at position {p} >= vocab_size {vocab_size}")
    if len(ids) == 0:
        return CoocTable.empty(vocab_size)
    seg = stream.segment_ids()
    # Weights are summed as exact integers in units of 1/lcm(1..window) and divided
    # once, so each cell is the correctly rounded total whatever the summation order.
    scale = _weight_units(window, len(ids))
    if scale is not None and vocab_size * vocab_size <= DENSE_CELL_LIMIT:
        units = np.zeros((vocab_size, vocab_size), dtype=np.int64)
        steps = np.array([0] + [scale // d for d in range(1, window + 1)], dtype=np.int64)
        kernels.get(backend).cooc_dense(ids, seg, steps, units)
        return CoocTable.from_dense(units / scale, len(ids))
    keys, weights = _sparse_count(ids, seg, window, vocab_size, scale)
    return CoocTable.from_keys(keys, weights, vocab_size, len(ids))


def merge_tables(a: CoocTable, b: CoocTable) -> CoocTable:
    """Pointwise sum of two tables over the same vocabulary."""
    if a.vocab_size != b.vocab_size:
        raise ValueError(f"vocab_size mismatch: {a.vocab_size} vs {b.vocab_size}")
    keys = np.concatenate([a.rows * a.vocab_size + a.cols, b.rows * b.vocab_size + b.cols])
    return CoocTable.from_keys(
        keys, np.concatenate([a.vals, b.vals]), a.vocab_size, a.total_tokens + b.total_tokens
    )


def count_cooc_sharded(stream: TokenStream, window: int = DEFAULT_WINDOW,
                       vocab_size: int | None = None, n_shards: int = 1,
                       max_workers: int | None = None) -> CoocTable:
    """Count shards (split at segment boundaries) concurrently, then merge."""
    if vocab_size is None:
        vocab_size = int(stream.ids.max()) + 1 if len(stream) else 0
    shards = stream.split(n_shards)
    with ThreadPoolExecutor(max_workers=max_workers) as pool:
        tables = list(pool.map(lambda s: count_cooc(s, window, vocab_size), shards))
    return reduce(merge_tables, tables)
