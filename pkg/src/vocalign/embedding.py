"""Dense token-vector matrices and their on-disk formats."""
from __future__ import annotations

import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

EMB_MAGIC = b"EMB1"
MASK_MAGIC = b"UNT1"


@dataclass
class EmbeddingMatrix:
    """|V| x d float32 vectors plus a mask of rows that were never trained."""

    vectors: np.ndarray
    untrained: np.ndarray = field(default=None)  # type: ignore[assignment]

    def __post_init__(self):
        self.vectors = np.ascontiguousarray(self.vectors, dtype=np.float32)
        if self.vectors.ndim != 2:
            raise ValueError(f"expected a 2-d matrix, got shape {self.vectors.shape}")
        if self.untrained is None:
            self.untrained = np.zeros(len(self.vectors), dtype=bool)
        self.untrained = np.asarray(self.untrained, dtype=bool)
        if self.untrained.shape != (len(self.vectors),):
            raise ValueError("untrained mask length must equal row count")

    @property
    def rows(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    @property
    def trained(self) -> np.ndarray:
        return ~self.untrained

    def __eq__(self, other):
        if not isinstance(other, EmbeddingMatrix):
            return NotImplemented
        return (
            self.vectors.shape == other.vectors.shape
            and self.vectors.tobytes() == other.vectors.tobytes()
            and np.array_equal(self.untrained, other.untrained)
        )

    def save(self, path: str | Path) -> None:
        """Write ``EMB1`` header, little-endian f32 rows, and the untrained-row sidecar."""
        path = Path(path)
        with open(path, "wb") as f:
            f.write(EMB_MAGIC)
            f.write(struct.pack("<II", self.rows, self.dim))
            f.write(self.vectors.astype("<f4").tobytes())
        with open(mask_sidecar(path), "wb") as f:
            f.write(MASK_MAGIC)
            f.write(struct.pack("<I", self.rows))
            f.write(np.packbits(self.untrained, bitorder="little").tobytes())

    @classmethod
    def load(cls, path: str | Path) -> "EmbeddingMatrix":
        path = Path(path)
        data = path.read_bytes()
        if data[:4] != EMB_MAGIC:
            raise ValueError(f"{path}: bad magic {data[:4]!r}")
        rows, dim = struct.unpack_from("<II", data, 4)
        expected = 12 + 4 * rows * dim
        if len(data) != expected:
            raise ValueError(f"{path}: expected {expected} bytes, found {len(data)}")
        vectors = np.frombuffer(data, dtype="<f4", offset=12).reshape(rows, dim)
        untrained = None
        sidecar = mask_sidecar(path)
        if sidecar.exists():
            sdata = sidecar.read_bytes()
            if sdata[:4] != MASK_MAGIC:
                raise ValueError(f"{sidecar}: bad magic {sdata[:4]!r}")
            (n,) = struct.unpack_from("<I", sdata, 4)
            bits = np.frombuffer(sdata, dtype=np.uint8, offset=8)
            untrained = np.unpackbits(bits, bitorder="little", count=n).astype(bool)
        return cls(vectors.astype(np.float32), untrained)

    def save_text(self, path: str | Path, tokens: Sequence[str] | None = None) -> None:
        """``token<TAB>v1 v2 ...`` per row, for inspection. Untrained rows are skipped."""
        with open(path, "w", encoding="utf-8") as f:
            for i, row in enumerate(self.vectors):
                if self.untrained[i]:
                    continue
                name = tokens[i] if tokens is not None else str(i)
                f.write(name + "\t" + " ".join(repr(float(v)) for v in row) + "\n")


def mask_sidecar(path: Path) -> Path:
    return path.with_name(path.name + ".untrained")


def unit_rows(vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Row-normalize in float64; zero rows stay zero. Returns (unit rows, norms)."""
    v = np.asarray(vectors, dtype=np.float64)
    norms = np.linalg.norm(v, axis=1)
    safe = np.where(norms > 0, norms, 1.0)
    return v / safe[:, None], norms
