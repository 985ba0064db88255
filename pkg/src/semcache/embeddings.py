"""Embedding fixtures, L2 normalization and non-parametric fusion.

Embeddings move between tools as binary fixture files so every experiment
sees bit-identical vectors.  File layout (all integers little-endian):

    magic   4 bytes  b"SEMB"
    version u32      currently 1
    dim     u32      vector dimension
    count   u64      number of vectors
    model   u16 length + UTF-8 bytes (model name)
    ids     count entries, each u16 length + UTF-8 bytes
    payload count * dim float32, row-major

Pairs files are plain text: one `id_a<TAB>id_b<TAB>label` per line with
label in {0, 1}; lines starting with `#` are ignored.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .errors import (
    CorruptionError,
    DegenerateVectorError,
    FormatError,
    UnknownIdError,
    ValidationError,
)

MAGIC = b"SEMB"
FORMAT_VERSION = 1

# Norms at or below this are treated as zero vectors.
DEGENERATE_NORM = 1e-12


def as_vector(values) -> np.ndarray:
    """Coerce to a 1-D float32 embedding vector."""
    v = np.asarray(values, dtype=np.float32)
    if v.ndim != 1 or v.size == 0:
        raise ValidationError(f"expected a non-empty 1-D vector, got shape {v.shape}")
    return v


def normalize(v) -> np.ndarray:
    """Scale a vector to unit L2 norm.

    Raises DegenerateVectorError when the norm is at or below
    DEGENERATE_NORM, which signals an unusable embedding.
    """
    v = as_vector(v)
    norm = float(np.linalg.norm(v.astype(np.float64)))
    if norm <= DEGENERATE_NORM:
        raise DegenerateVectorError(f"vector norm {norm:g} is degenerate")
    return (v.astype(np.float64) / norm).astype(np.float32)


def normalize_rows(matrix) -> np.ndarray:
    """Row-wise unit normalization of an n x d float32 matrix."""
    m = np.asarray(matrix, dtype=np.float32)
    if m.ndim != 2:
        raise ValidationError(f"expected a 2-D matrix, got shape {m.shape}")
    norms = np.linalg.norm(m.astype(np.float64), axis=1)
    if np.any(norms <= DEGENERATE_NORM):
        bad = int(np.argmax(norms <= DEGENERATE_NORM))
        raise DegenerateVectorError(f"row {bad} has degenerate norm {norms[bad]:g}")
    return (m.astype(np.float64) / norms[:, None]).astype(np.float32)


def cosine(u, v) -> float:
    """Cosine similarity of two vectors, recomputing both norms."""
    u = np.asarray(u, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    nu = np.linalg.norm(u)
    nv = np.linalg.norm(v)
    if nu <= DEGENERATE_NORM or nv <= DEGENERATE_NORM:
        raise DegenerateVectorError("cosine of a degenerate vector is undefined")
    return float(np.dot(u, v) / (nu * nv))


def fuse_average(vectors: Sequence) -> np.ndarray:
    """Element-wise mean of same-dimension vectors."""
    if len(vectors) == 0:
        raise ValidationError("cannot average an empty sequence of vectors")
    vs = [as_vector(v) for v in vectors]
    dim = vs[0].shape[0]
    for i, v in enumerate(vs[1:], start=1):
        if v.shape[0] != dim:
            raise ValidationError(f"vector {i} has dim {v.shape[0]}, expected {dim}")
    return (np.sum(np.stack(vs).astype(np.float64), axis=0) / len(vs)).astype(np.float32)


def fuse_concat(vectors: Sequence) -> np.ndarray:
    """Order-preserving concatenation of vectors."""
    if len(vectors) == 0:
        raise ValidationError("cannot concatenate an empty sequence of vectors")
    return np.concatenate([as_vector(v) for v in vectors])


@dataclass(frozen=True)
class LabeledPair:
    """Two record ids plus a binary duplicate label (1 = semantically equivalent)."""

    id_a: str
    id_b: str
    label: int

    def __post_init__(self):
        if self.label not in (0, 1):
            raise ValidationError(f"pair label must be 0 or 1, got {self.label!r}")


class EmbeddingSet:
    """Immutable container for one model's embeddings of a record corpus."""

    def __init__(self, model_name: str, ids: Sequence[str], vectors) -> None:
        vectors = np.asarray(vectors, dtype=np.float32)
        if vectors.ndim != 2:
            raise ValidationError(f"vectors must be 2-D, got shape {vectors.shape}")
        ids = list(ids)
        if len(ids) != vectors.shape[0]:
            raise ValidationError(
                f"{len(ids)} ids for {vectors.shape[0]} vectors"
            )
        if len(set(ids)) != len(ids):
            raise ValidationError("duplicate ids in embedding set")
        self.model_name = str(model_name)
        self.ids = ids
        self.vectors = vectors
        self.vectors.setflags(write=False)
        self._row_of = {record_id: i for i, record_id in enumerate(ids)}

    @property
    def count(self) -> int:
        return self.vectors.shape[0]

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def vector(self, record_id: str) -> np.ndarray:
        try:
            return self.vectors[self._row_of[record_id]]
        except KeyError:
            raise UnknownIdError(record_id) from None

    def __contains__(self, record_id: str) -> bool:
        return record_id in self._row_of

    def join_compatible(self, other: "EmbeddingSet") -> bool:
        """Two sets can be fused record-by-record iff their id sequences match."""
        return self.ids == other.ids

    def __repr__(self) -> str:
        return (
            f"EmbeddingSet(model_name={self.model_name!r}, "
            f"count={self.count}, dim={self.dim})"
        )


def _write_string(out, text: str) -> None:
    raw = text.encode("utf-8")
    if len(raw) > 0xFFFF:
        raise ValidationError(f"string too long for u16 length prefix: {len(raw)} bytes")
    out.write(struct.pack("<H", len(raw)))
    out.write(raw)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(f"truncated file while reading {what}: "
                              f"wanted {n} bytes, got {len(data)}")
    return data


def _read_string(f, what: str) -> str:
    (length,) = struct.unpack("<H", _read_exact(f, 2, f"{what} length"))
    return _read_exact(f, length, what).decode("utf-8")


def save_embedding_set(emb: EmbeddingSet, path) -> None:
    """Write a fixture file; vectors are stored exactly as held in memory."""
    path = Path(path)
    with open(path, "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<IIQ", FORMAT_VERSION, emb.dim, emb.count))
        _write_string(out, emb.model_name)
        for record_id in emb.ids:
            _write_string(out, record_id)
        out.write(np.ascontiguousarray(emb.vectors, dtype="<f4").tobytes())


def load_embedding_set(path) -> EmbeddingSet:
    """Read a fixture file back, byte-exactly. No normalization is applied."""
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        header = f.read(16)
        if len(header) != 16:
            raise FormatError(f"{path}: truncated header")
        version, dim, count = struct.unpack("<IIQ", header)
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported format version {version}")
        if dim == 0:
            raise FormatError(f"{path}: dim must be positive")
        model_name = _read_string(f, "model name")
        ids = [_read_string(f, f"id {i}") for i in range(count)]
        payload = _read_exact(f, count * dim * 4, "vector payload")
        extra = f.read(1)
    if extra:
        raise CorruptionError(f"{path}: trailing bytes after payload")
    vectors = np.frombuffer(payload, dtype="<f4").reshape(count, dim)
    return EmbeddingSet(model_name, ids, vectors)


def save_pairs(pairs: Iterable[LabeledPair], path) -> None:
    with open(path, "w", encoding="utf-8") as out:
        for p in pairs:
            out.write(f"{p.id_a}\t{p.id_b}\t{p.label}\n")


def load_pairs(path) -> list[LabeledPair]:
    pairs = []
    with open(path, "r", encoding="utf-8") as f:
        for lineno, line in enumerate(f, start=1):
            line = line.rstrip("\n")
            if not line or line.startswith("#"):
                continue
            fields = line.split("\t")
            if len(fields) != 3:
                raise FormatError(f"{path}:{lineno}: expected 3 tab-separated fields")
            id_a, id_b, label = fields
            if label not in ("0", "1"):
                raise FormatError(f"{path}:{lineno}: label must be 0 or 1, got {label!r}")
            pairs.append(LabeledPair(id_a, id_b, int(label)))
    return pairs


def build_pair_inputs(
    sets: Sequence[EmbeddingSet], pairs: Sequence[LabeledPair]
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Assemble training inputs for a list of pairs.

    Each side of a pair is the concatenation of that record's vectors
    across all sets, L2-normalized as a whole.  Returns (a, b, labels)
    with a and b of shape (n_pairs, sum of set dims).
    """
    if len(sets) == 0:
        raise ValidationError("need at least one embedding set")
    if len(pairs) == 0:
        raise ValidationError("need at least one pair")
    first = sets[0]
    for s in sets[1:]:
        if not first.join_compatible(s):
            raise ValidationError(
                f"embedding sets {first.model_name!r} and {s.model_name!r} "
                "do not share the same id sequence"
            )
    row_of = first._row_of
    for p in pairs:
        if p.id_a not in row_of:
            raise UnknownIdError(p.id_a)
        if p.id_b not in row_of:
            raise UnknownIdError(p.id_b)
    stacked = np.concatenate([s.vectors for s in sets], axis=1)
    rows_a = np.array([row_of[p.id_a] for p in pairs])
    rows_b = np.array([row_of[p.id_b] for p in pairs])
    labels = np.array([p.label for p in pairs], dtype=np.int64)
    return normalize_rows(stacked[rows_a]), normalize_rows(stacked[rows_b]), labels


def fused_record_vector(
    sets: Sequence[EmbeddingSet], record_id: str, strategy: str
) -> np.ndarray:
    """Fuse one record's base vectors: 'avg', 'concat' or 'model:<name>'."""
    if strategy == "avg":
        return fuse_average([s.vector(record_id) for s in sets])
    if strategy == "concat":
        return fuse_concat([s.vector(record_id) for s in sets])
    if strategy.startswith("model:"):
        name = strategy[len("model:"):]
        for s in sets:
            if s.model_name == name:
                return s.vector(record_id)
        raise ValidationError(f"no embedding set named {name!r}")
    raise ValidationError(f"unknown fusion strategy {strategy!r}")
