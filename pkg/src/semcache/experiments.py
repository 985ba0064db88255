"""Cache experiments against a mock LLM backend.

Experiments replay pair corpora or request traces through a SemanticCache
and report the caching metrics.  The mock backend answers deterministically
from the query text; its latency is an accounting value charged on every
miss, so reports are reproducible run to run.
"""

from __future__ import annotations

import hashlib
import json
import time
from dataclasses import dataclass, asdict
from typing import Callable, Optional, Sequence

import numpy as np

from .cache import CacheConfig, SemanticCache
from .checkpoint import Checkpoint, encode
from .embeddings import (
    EmbeddingSet,
    LabeledPair,
    build_pair_inputs,
    fused_record_vector,
    normalize,
)
from .errors import ValidationError
from .metrics import hit_ratio as _hit_ratio
from .metrics import mean_response_time as _mean_rt
from .metrics import token_saving_ratio as _token_ratio

_WORDS = (
    "the a of to and in is for on with as by from at this that it be are was "
    "answer result system model query cache token response time data value "
    "question similar stored new request service output method"
).split()


class MockBackend:
    """Deterministic stand-in for an LLM.

    The response is a pure function of the query text; token counts come
    from whitespace tokenization.  `latency` is the simulated seconds one
    generation costs; `complete` never sleeps (callers charge the latency
    arithmetically), `generate` sleeps for it, for live serving.
    """

    def __init__(self, latency: float = 0.005, seed: int = 0):
        if latency < 0:
            raise ValidationError("latency must be non-negative")
        self.latency = latency
        self.seed = seed

    def complete(self, query_text: str) -> tuple[str, int, int]:
        digest = hashlib.sha256(f"{self.seed}:{query_text}".encode("utf-8")).digest()
        rng = np.random.default_rng(int.from_bytes(digest[:8], "little"))
        n_words = int(rng.integers(8, 25))
        words = [_WORDS[int(i)] for i in rng.integers(0, len(_WORDS), n_words)]
        response = " ".join(words)
        return response, len(query_text.split()), n_words

    def generate(self, query_text: str) -> tuple[str, int, int]:
        if self.latency > 0:
            time.sleep(self.latency)
        return self.complete(query_text)


Embedder = Callable[[str], np.ndarray]


def make_embedder(
    sets: Sequence[EmbeddingSet],
    fusion: str | None = None,
    checkpoint: Checkpoint | None = None,
) -> Embedder:
    """Map record ids to the representation under test.

    Exactly one of `fusion` ('avg', 'concat', 'model:<name>') or
    `checkpoint` selects the representation.  The trained path concatenates
    each record's base vectors, normalizes, and runs the encoder.
    """
    if (fusion is None) == (checkpoint is None):
        raise ValidationError("pass exactly one of fusion or checkpoint")
    if not sets:
        raise ValidationError("need at least one embedding set")
    first = sets[0]
    for s in sets[1:]:
        if not first.join_compatible(s):
            raise ValidationError("embedding sets do not share the same id sequence")
    if checkpoint is not None:
        stacked = np.concatenate([s.vectors for s in sets], axis=1)
        norms = np.linalg.norm(stacked.astype(np.float64), axis=1, keepdims=True)
        encoded = encode(checkpoint, (stacked / norms).astype(np.float32))
        table = {record_id: encoded[i] for i, record_id in enumerate(first.ids)}
        return lambda record_id: table[record_id]
    return lambda record_id: normalize(fused_record_vector(sets, record_id, fusion))


def pair_scores_for(embedder: Embedder, pairs: Sequence[LabeledPair]) -> np.ndarray:
    """Cosine similarity per pair under an embedder (vectors re-normalized)."""
    scores = np.empty(len(pairs))
    for i, p in enumerate(pairs):
        a = normalize(embedder(p.id_a)).astype(np.float64)
        b = normalize(embedder(p.id_b)).astype(np.float64)
        scores[i] = float(a @ b)
    return scores


@dataclass(frozen=True)
class MetricsReport:
    hit_ratio: float
    miss_accuracy: Optional[float]
    token_saving_ratio: float
    mean_response_time: float
    total_requests: int
    hits: int
    misses: int
    duplicate_hit_ratio: Optional[float]
    tokens_served_by_cache: int
    total_tokens: int
    total_time: float

    def format_table(self) -> str:
        rows = [
            ("total requests", f"{self.total_requests}"),
            ("hit ratio", f"{self.hit_ratio:.2f} %"),
            ("miss accuracy", "n/a" if self.miss_accuracy is None
             else f"{self.miss_accuracy:.2f} %"),
            ("duplicate hit ratio", "n/a" if self.duplicate_hit_ratio is None
             else f"{self.duplicate_hit_ratio:.2f} %"),
            ("token saving ratio", f"{self.token_saving_ratio:.2f} %"),
            ("mean response time", f"{self.mean_response_time * 1e3:.3f} ms"),
            ("tokens served by cache", f"{self.tokens_served_by_cache}"),
            ("total tokens", f"{self.total_tokens}"),
        ]
        width = max(len(r[0]) for r in rows)
        return "\n".join(f"{name:<{width}}  {value}" for name, value in rows)


MODES = ("duplicates-hit", "nonduplicates-miss", "mixed")


def run_cache_experiment(
    pairs: Sequence[LabeledPair],
    embedder: Embedder,
    cache_config: CacheConfig,
    backend: MockBackend,
    mode: str,
    texts: Optional[dict[str, str]] = None,
    timer: Callable[[], float] = time.perf_counter,
) -> MetricsReport:
    """Replay a pair corpus through a fresh cache and measure the outcome.

    duplicates-hit inserts every first question then looks up the second
    questions of duplicate pairs; nonduplicates-miss does the same for
    non-duplicate pairs, where a miss is the correct answer; mixed
    interleaves insert/lookup per pair over all labels.  Lookup misses are
    charged the backend latency but nothing is auto-inserted; tokens spent
    populating the cache count toward the total.  Pass `timer=lambda: 0.0`
    for fully deterministic reports.
    """
    if mode not in MODES:
        raise ValidationError(f"mode must be one of {MODES}")
    if mode == "duplicates-hit":
        pairs = [p for p in pairs if p.label == 1]
    elif mode == "nonduplicates-miss":
        pairs = [p for p in pairs if p.label == 0]
    if not pairs:
        raise ValidationError(f"no pairs to replay in mode {mode!r}")

    text_of = (lambda rid: texts[rid]) if texts is not None else (lambda rid: rid)
    cache = SemanticCache(cache_config)
    total_tokens = 0
    total_time = 0.0
    lookups = 0
    hits = 0
    dup_lookups = dup_hits = 0
    nondup_lookups = nondup_misses = 0

    inserted: set[str] = set()

    def populate(record_id: str) -> None:
        nonlocal total_tokens
        if record_id in inserted:
            return
        inserted.add(record_id)
        text = text_of(record_id)
        response, p_tok, c_tok = backend.complete(text)
        total_tokens += p_tok + c_tok
        cache.insert(text, embedder(record_id), response, p_tok, c_tok)

    def probe(record_id: str, label: int) -> None:
        nonlocal total_time, total_tokens, lookups, hits
        nonlocal dup_lookups, dup_hits, nondup_lookups, nondup_misses
        t0 = timer()
        outcome = cache.lookup(embedder(record_id))
        elapsed = timer() - t0
        lookups += 1
        if outcome.is_hit:
            hits += 1
            entry = outcome.matched_entry
            total_tokens += entry.prompt_tokens + entry.completion_tokens
        else:
            elapsed += backend.latency
            _, p_tok, c_tok = backend.complete(text_of(record_id))
            total_tokens += p_tok + c_tok
        total_time += elapsed
        if label == 1:
            dup_lookups += 1
            dup_hits += 1 if outcome.is_hit else 0
        else:
            nondup_lookups += 1
            nondup_misses += 0 if outcome.is_hit else 1

    if mode == "mixed":
        for p in pairs:
            populate(p.id_a)
            probe(p.id_b, p.label)
    else:
        for p in pairs:
            populate(p.id_a)
        for p in pairs:
            probe(p.id_b, p.label)

    served = cache.stats().tokens_served_by_cache
    return MetricsReport(
        hit_ratio=_hit_ratio(hits, lookups),
        miss_accuracy=(
            _hit_ratio(nondup_misses, nondup_lookups) if nondup_lookups else None
        ),
        token_saving_ratio=_token_ratio(served, total_tokens),
        mean_response_time=_mean_rt(total_time, lookups),
        total_requests=lookups,
        hits=hits,
        misses=lookups - hits,
        duplicate_hit_ratio=(
            _hit_ratio(dup_hits, dup_lookups) if dup_lookups else None
        ),
        tokens_served_by_cache=served,
        total_tokens=total_tokens,
        total_time=total_time,
    )


@dataclass(frozen=True)
class SweepRow:
    policy: str
    capacity_pct: float
    capacity: int
    hit_ratio: float
    requests: int


def eviction_sweep(
    trace: Sequence[str],
    vectors: dict[str, np.ndarray],
    capacities_pct: Sequence[float],
    policies: Sequence[str] = ("lru", "lfu"),
    threshold: float = 0.80,
    backend: MockBackend | None = None,
) -> list[SweepRow]:
    """Replay one request trace per (policy, capacity) cell.

    Capacity percentages are taken of the number of distinct queries in the
    trace.  This replay auto-inserts on miss, which is the usual serving
    flow.  Hit-ratio monotonicity in capacity is reported, not asserted.
    """
    if not trace:
        raise ValidationError("trace must be non-empty")
    backend = backend or MockBackend(latency=0.0)
    n_distinct = len(set(trace))
    rows = []
    for policy in policies:
        for pct in capacities_pct:
            capacity = max(1, round(pct / 100.0 * n_distinct))
            cache = SemanticCache(CacheConfig(threshold, capacity, policy))
            hits = 0
            for key in trace:
                outcome = cache.lookup(vectors[key])
                if outcome.is_hit:
                    hits += 1
                else:
                    response, p_tok, c_tok = backend.complete(key)
                    cache.insert(key, vectors[key], response, p_tok, c_tok)
            rows.append(SweepRow(policy, pct, capacity, _hit_ratio(hits, len(trace)),
                                 len(trace)))
    return rows


def format_sweep_table(rows: Sequence[SweepRow]) -> str:
    lines = [f"{'policy':<8} {'capacity%':>10} {'capacity':>10} {'hit_ratio':>10}"]
    for r in rows:
        lines.append(f"{r.policy:<8} {r.capacity_pct:>10.1f} {r.capacity:>10} "
                     f"{r.hit_ratio:>10.2f}")
    return "\n".join(lines)


def config_hash(obj) -> str:
    """Stable short hash of any config-like object for report provenance."""
    if hasattr(obj, "__dataclass_fields__"):
        obj = asdict(obj)
    canonical = json.dumps(obj, sort_keys=True, default=str)
    return hashlib.sha256(canonical.encode("utf-8")).hexdigest()[:16]


def report_records(report: MetricsReport, cfg_hash: str, seed: int) -> list[dict]:
    """One machine-readable record per metric."""
    records = []
    for metric, value in asdict(report).items():
        records.append(
            {"metric": metric, "value": value, "config_hash": cfg_hash, "seed": seed}
        )
    return records


def write_report_jsonl(report: MetricsReport, path, cfg_hash: str, seed: int) -> None:
    with open(path, "w", encoding="utf-8") as out:
        for record in report_records(report, cfg_hash, seed):
            out.write(json.dumps(record, sort_keys=True) + "\n")
