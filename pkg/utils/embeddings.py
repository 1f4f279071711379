"""
Sentence embedding tables read from sidecar files.

Binary layout: magic ``EMB1``, u32 dim, u64 row count (little-endian, 16 bytes),
then row-major little-endian float32 values. A text file with one
space-separated vector per line is accepted too.
"""
import logging
import struct
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import Optional

import numpy as np

from utils.errors import EmbeddingError

logger = logging.getLogger(__name__)

MAGIC = b"EMB1"
HEADER = struct.Struct("<4sIQ")


@dataclass(frozen=True, eq=False)
class EmbeddingTable:
    """One row per sentence id; rows are read-only once loaded."""

    vectors: np.ndarray
    lang: Optional[str] = None

    def __post_init__(self):
        vectors = np.array(self.vectors, dtype=np.float64)
        if vectors.ndim != 2 or vectors.shape[1] == 0:
            raise EmbeddingError(f"embedding table must be a non-empty 2-D matrix, got shape {vectors.shape}")
        norms = np.linalg.norm(vectors, axis=1)
        zero_rows = np.flatnonzero(norms == 0)
        if zero_rows.size:
            raise EmbeddingError(f"row {int(zero_rows[0])} is the zero vector")
        vectors.setflags(write=False)
        object.__setattr__(self, "vectors", vectors)

    @property
    def dim(self) -> int:
        return int(self.vectors.shape[1])

    def __len__(self) -> int:
        return int(self.vectors.shape[0])

    @cached_property
    def normalized(self) -> np.ndarray:
        unit = self.vectors / np.linalg.norm(self.vectors, axis=1, keepdims=True)
        unit.setflags(write=False)
        return unit

    def row(self, sentence_id: int) -> np.ndarray:
        if not 0 <= sentence_id < len(self):
            raise EmbeddingError(f"no embedding row for sentence {sentence_id} (table has {len(self)} rows)")
        return self.vectors[sentence_id]


def load_embeddings(path, lang: Optional[str] = None) -> EmbeddingTable:
    path = Path(path)
    data = path.read_bytes()
    if data[:4] == MAGIC:
        if len(data) < HEADER.size:
            raise EmbeddingError(f"{path}: truncated header")
        _, dim, rows = HEADER.unpack_from(data)
        expected = HEADER.size + rows * dim * 4
        if len(data) != expected:
            raise EmbeddingError(f"{path}: expected {expected} bytes for {rows}x{dim}, got {len(data)}")
        vectors = np.frombuffer(data, dtype="<f4", offset=HEADER.size).reshape(rows, dim)
    else:
        try:
            vectors = np.loadtxt(path, dtype=np.float64, ndmin=2)
        except ValueError as e:
            raise EmbeddingError(f"{path}: malformed text embeddings: {e}") from e
    table = EmbeddingTable(vectors, lang=lang)
    logger.info(f"[embeddings] Loaded {len(table)}x{table.dim} table from {path}")
    return table


def write_embeddings(vectors, path, binary: bool = True) -> None:
    vectors = np.asarray(vectors.vectors if isinstance(vectors, EmbeddingTable) else vectors)
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    if binary:
        rows, dim = vectors.shape
        with open(path, "wb") as f:
            f.write(HEADER.pack(MAGIC, dim, rows))
            f.write(np.ascontiguousarray(vectors, dtype="<f4").tobytes())
    else:
        np.savetxt(path, vectors, fmt="%.9g")
