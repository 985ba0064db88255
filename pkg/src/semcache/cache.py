"""The semantic cache: query/response records plus a vector index.

A lookup embeds nothing itself; it takes a query embedding, runs a top-1
exact search and declares a hit when the best cosine score is at or above
the threshold.  Time is a logical counter ticked once per cache operation,
so eviction order is fully deterministic and replayable.
"""

from __future__ import annotations

import threading
from dataclasses import dataclass, field
from typing import Optional

from .errors import StateError, ValidationError
from .index import FlatIndex

POLICIES = ("lru", "lfu")


@dataclass(frozen=True)
class CacheConfig:
    similarity_threshold: float = 0.80
    capacity: Optional[int] = None  # None = unbounded
    eviction_policy: str = "lru"

    def __post_init__(self):
        if not -1.0 <= self.similarity_threshold <= 1.0:
            raise ValidationError("similarity_threshold must be within [-1, 1]")
        if self.capacity is not None and self.capacity < 1:
            raise ValidationError("capacity must be positive (or None for unbounded)")
        if self.eviction_policy not in POLICIES:
            raise ValidationError(f"eviction_policy must be one of {POLICIES}")


@dataclass
class CacheEntry:
    entry_id: int
    query_text: str
    response_text: str
    prompt_tokens: int
    completion_tokens: int
    inserted_at: int
    last_access: int
    access_count: int = 1


@dataclass(frozen=True)
class LookupOutcome:
    kind: str  # "hit" or "miss"
    matched_entry: Optional[CacheEntry]
    score: Optional[float]

    @property
    def is_hit(self) -> bool:
        return self.kind == "hit"


@dataclass
class CacheStats:
    size: int
    hits: int
    misses: int
    evictions: int
    tokens_served_by_cache: int


class SemanticCache:
    """Threshold-gated cache over (query, response) records.

    Mutating operations (lookup's recency update, insert, evict) are
    serialized behind one lock; stats reads are lock-free and may lag
    in-flight operations.
    """

    def __init__(self, config: CacheConfig | None = None):
        self.config = config or CacheConfig()
        self._index = FlatIndex()
        self._entries: dict[int, CacheEntry] = {}
        self._clock = 0
        self._hits = 0
        self._misses = 0
        self._evictions = 0
        self._tokens_served = 0
        self._lock = threading.RLock()

    @property
    def size(self) -> int:
        return len(self._entries)

    def __len__(self) -> int:
        return len(self._entries)

    def lookup(self, query_embedding) -> LookupOutcome:
        """Top-1 search; a hit needs score >= threshold and refreshes the
        matched entry's recency and frequency. A miss changes no entry."""
        with self._lock:
            self._clock += 1
            results = self._index.search(query_embedding, k=1)
            if not results:
                self._misses += 1
                return LookupOutcome("miss", None, None)
            best = results[0]
            if best.score >= self.config.similarity_threshold:
                entry = self._entries[best.entry_id]
                entry.last_access = self._clock
                entry.access_count += 1
                self._hits += 1
                self._tokens_served += entry.prompt_tokens + entry.completion_tokens
                return LookupOutcome("hit", entry, best.score)
            self._misses += 1
            return LookupOutcome("miss", None, best.score)

    def insert(
        self,
        query_text: str,
        query_embedding,
        response_text: str,
        prompt_tokens: int,
        completion_tokens: int,
    ) -> int:
        """Store a new record, evicting exactly one victim first if full."""
        if prompt_tokens < 0 or completion_tokens < 0:
            raise ValidationError("token counts must only be non-negative")
        with self._lock:
            self._clock += 1
            cap = self.config.capacity
            if cap is not None and len(self._entries) >= cap:
                self._evict_locked(self.config.eviction_policy)
            entry_id = self._index.add(query_embedding)
            self._entries[entry_id] = CacheEntry(
                entry_id=entry_id,
                query_text=query_text,
                response_text=response_text,
                prompt_tokens=prompt_tokens,
                completion_tokens=completion_tokens,
                inserted_at=self._clock,
                last_access=self._clock,
                access_count=1,  # insertion counts as the first access
            )
            return entry_id

    def evict_one(self, policy: str | None = None) -> int:
        """Evict one victim per the policy; returns the evicted entry id."""
        with self._lock:
            return self._evict_locked(policy or self.config.eviction_policy)

    def _evict_locked(self, policy: str) -> int:
        if policy not in POLICIES:
            raise ValidationError(f"eviction_policy must be one of {POLICIES}")
        if not self._entries:
            raise StateError("cannot evict from an empty cache")
        if policy == "lru":
            victim = min(self._entries.values(), key=lambda e: e.last_access)
        else:  # lfu; ties resolved by least recent use
            victim = min(
                self._entries.values(), key=lambda e: (e.access_count, e.last_access)
            )
        del self._entries[victim.entry_id]
        self._index.remove(victim.entry_id)
        self._evictions += 1
        return victim.entry_id

    def entry(self, entry_id: int) -> CacheEntry | None:
        return self._entries.get(entry_id)

    def stats(self) -> CacheStats:
        return CacheStats(
            size=len(self._entries),
            hits=self._hits,
            misses=self._misses,
            evictions=self._evictions,
            tokens_served_by_cache=self._tokens_served,
        )
