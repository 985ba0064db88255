"""Exact flat cosine-similarity index.

Vectors are unit-normalized at insertion so cosine similarity reduces to a
dot product over the stored matrix; search is an exhaustive scan, never an
approximation.  Removals tombstone their slot and the store is compacted
once tombstones outnumber live rows.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .embeddings import (
    EmbeddingSet,
    as_vector,
    load_embedding_set,
    normalize,
    save_embedding_set,
)
from .errors import ValidationError


@dataclass(frozen=True)
class SearchResult:
    entry_id: int
    score: float


class FlatIndex:
    """Append-only store of unit vectors with exact top-k retrieval.

    Entry ids are monotonically increasing and never reused; ties in search
    scores are broken toward the smaller (older) entry id.
    """

    def __init__(self, dim: int | None = None):
        self._dim = dim
        self._rows = 0  # used slots, live or tombstoned
        self._buf = np.empty((0, dim or 0), dtype=np.float32)
        self._ids = np.empty(0, dtype=np.int64)
        self._live = np.empty(0, dtype=bool)
        self._next_id = 0

    @property
    def dim(self) -> int | None:
        return self._dim

    @property
    def size(self) -> int:
        return int(self._live[: self._rows].sum())

    def __len__(self) -> int:
        return self.size

    def _slot(self, entry_id: int) -> int | None:
        ids = self._ids[: self._rows]  # appended in increasing order
        pos = int(np.searchsorted(ids, entry_id))
        if pos < len(ids) and ids[pos] == entry_id:
            return pos
        return None

    def __contains__(self, entry_id: int) -> bool:
        pos = self._slot(entry_id)
        return pos is not None and bool(self._live[pos])

    def _grow(self) -> None:
        cap = max(16, 2 * len(self._ids))
        buf = np.empty((cap, self._dim), dtype=np.float32)
        buf[: self._rows] = self._buf[: self._rows]
        self._buf = buf
        self._ids = np.concatenate([self._ids, np.zeros(cap - len(self._ids), np.int64)])
        self._live = np.concatenate([self._live, np.zeros(cap - len(self._live), bool)])

    def add(self, vector) -> int:
        """Normalize and store a vector; returns its new entry id."""
        v = normalize(as_vector(vector))
        if self._dim is None:
            self._dim = v.shape[0]
            self._buf = np.empty((0, self._dim), dtype=np.float32)
        elif v.shape[0] != self._dim:
            raise ValidationError(
                f"vector dim {v.shape[0]} does not match index dim {self._dim}"
            )
        if self._rows == len(self._ids):
            self._grow()
        entry_id = self._next_id
        self._next_id += 1
        self._buf[self._rows] = v
        self._ids[self._rows] = entry_id
        self._live[self._rows] = True
        self._rows += 1
        return entry_id

    def remove(self, entry_id: int) -> bool:
        """Tombstone an entry; returns False when the id is absent."""
        pos = self._slot(entry_id)
        if pos is None or not self._live[pos]:
            return False
        self._live[pos] = False
        if self._rows - self.size > self._rows // 2:
            self._compact()
        return True

    def _compact(self) -> None:
        keep = self._live[: self._rows]
        n = int(keep.sum())
        self._buf[:n] = self._buf[: self._rows][keep]
        self._ids[:n] = self._ids[: self._rows][keep]
        self._live[:n] = True
        self._rows = n

    def search(self, query, k: int = 1) -> list[SearchResult]:
        """Exact top-k by cosine similarity; empty index yields an empty list."""
        if k < 1:
            raise ValidationError("k must be >= 1")
        q = normalize(as_vector(query)).astype(np.float64)
        if self.size == 0:
            return []
        if q.shape[0] != self._dim:
            raise ValidationError(
                f"query dim {q.shape[0]} does not match index dim {self._dim}"
            )
        live = self._live[: self._rows]
        scores = self._buf[: self._rows][live].astype(np.float64) @ q
        ids = self._ids[: self._rows][live]
        # descending score, ascending id on ties
        order = np.lexsort((ids, -scores))[:k]
        return [SearchResult(int(ids[i]), float(scores[i])) for i in order]

    def save(self, path) -> None:
        """Snapshot live vectors in the embedding fixture format; entry ids
        become the record ids."""
        if self._dim is None:
            raise ValidationError("cannot snapshot an index before its dim is fixed")
        live = self._live[: self._rows]
        emb = EmbeddingSet(
            model_name=f"flat-index:{self._next_id}",
            ids=[str(i) for i in self._ids[: self._rows][live]],
            vectors=self._buf[: self._rows][live],
        )
        save_embedding_set(emb, path)

    @classmethod
    def load(cls, path) -> "FlatIndex":
        emb = load_embedding_set(path)
        index = cls(dim=emb.dim)
        index._buf = emb.vectors.copy()
        index._ids = np.array([int(i) for i in emb.ids], dtype=np.int64)
        index._live = np.ones(len(emb.ids), dtype=bool)
        index._rows = len(emb.ids)
        tag = emb.model_name.rsplit(":", 1)
        next_from_tag = int(tag[1]) if len(tag) == 2 and tag[1].isdigit() else 0
        index._next_id = max([next_from_tag, *(int(i) + 1 for i in index._ids)], default=0)
        return index
