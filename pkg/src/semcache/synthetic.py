"""Synthetic corpora and traces for experiments and tests.

The clustered generator emulates several base embedding models observing
the same questions: questions live in latent clusters, duplicates are two
noisy views from one cluster, non-duplicates come from two different
clusters.  Each model is reliable on one half of the clusters and noisy on
the other half, so models carry complementary signal and a trained fusion
has something real to learn over element-wise averaging or concatenation.
"""

from __future__ import annotations

from typing import Sequence

import numpy as np

from .embeddings import EmbeddingSet, LabeledPair
from .errors import ValidationError


def _unit_rows(rng: np.random.Generator, n: int, dim: int) -> np.ndarray:
    m = rng.normal(size=(n, dim))
    return m / np.linalg.norm(m, axis=1, keepdims=True)


def make_clustered_corpus(
    n_pairs: int,
    model_dims: Sequence[int] = (24, 24),
    n_clusters: int = 16,
    noise_low: float = 0.35,
    noise_high: float = 1.1,
    positive_fraction: float = 0.5,
    seed: int = 0,
) -> tuple[list[EmbeddingSet], list[LabeledPair]]:
    """Build join-compatible embedding sets plus labeled pairs.

    Model m is "good" (noise_low) on clusters where (cluster + m) is even
    and "bad" (noise_high) elsewhere, alternating across models.
    """
    if n_pairs < 2 or n_clusters < 2:
        raise ValidationError("need at least 2 pairs and 2 clusters")
    rng = np.random.default_rng(seed)
    n_pos = round(n_pairs * positive_fraction)

    # latent cluster of each pair's two questions
    questions: list[tuple[str, int]] = []  # (record id, cluster)
    pairs: list[LabeledPair] = []
    for i in range(n_pairs):
        positive = i < n_pos
        c1 = int(rng.integers(n_clusters))
        c2 = c1 if positive else int((c1 + 1 + rng.integers(n_clusters - 1)) % n_clusters)
        id_a, id_b = f"q{2 * i:06d}", f"q{2 * i + 1:06d}"
        questions.append((id_a, c1))
        questions.append((id_b, c2))
        pairs.append(LabeledPair(id_a, id_b, 1 if positive else 0))

    ids = [q[0] for q in questions]
    clusters = np.array([q[1] for q in questions])
    sets = []
    for m, dim in enumerate(model_dims):
        centers = _unit_rows(rng, n_clusters, dim)
        sigma = np.where((clusters + m) % 2 == 0, noise_low, noise_high)
        vecs = centers[clusters] + sigma[:, None] * rng.normal(size=(len(ids), dim))
        vecs = vecs / np.linalg.norm(vecs, axis=1, keepdims=True)
        sets.append(EmbeddingSet(f"synthetic-m{m}", ids, vecs.astype(np.float32)))
    return sets, pairs


def zipf_trace(
    n_requests: int, n_distinct: int, s: float = 1.0, seed: int = 0
) -> list[str]:
    """Zipf(s)-distributed request stream over keys 'q0'..'q{n-1}'."""
    if n_requests < 1 or n_distinct < 1:
        raise ValidationError("trace needs at least one request and one key")
    rng = np.random.default_rng(seed)
    ranks = np.arange(1, n_distinct + 1, dtype=np.float64)
    probs = ranks ** -s
    probs /= probs.sum()
    draws = rng.choice(n_distinct, size=n_requests, p=probs)
    return [f"q{int(i)}" for i in draws]


def trace_embeddings(keys: Sequence[str], dim: int = 64, seed: int = 0) -> dict[str, np.ndarray]:
    """Random unit embeddings per distinct key; unrelated keys score far
    below any realistic hit threshold at this dimension."""
    distinct = sorted(set(keys))
    rng = np.random.default_rng(seed)
    vecs = _unit_rows(rng, len(distinct), dim).astype(np.float32)
    return {k: vecs[i] for i, k in enumerate(distinct)}
