"""Evaluation metrics: cache ratios, classification report, threshold
optimization and the base-model correlation study."""

from __future__ import annotations

from dataclasses import dataclass
from typing import Sequence

import numpy as np

from .embeddings import EmbeddingSet, LabeledPair
from .errors import ValidationError


def hit_ratio(hits: int, total: int) -> float:
    """Percentage of requests served from cache."""
    if total < 1:
        raise ValidationError("total requests must be >= 1")
    if not 0 <= hits <= total:
        raise ValidationError(f"hits {hits} outside [0, {total}]")
    return 100.0 * hits / total


def token_saving_ratio(tokens_served_by_cache: int, total_tokens: int) -> float:
    """Percentage of processed tokens that the cache served."""
    if total_tokens < 1:
        raise ValidationError("total tokens must be >= 1")
    if not 0 <= tokens_served_by_cache <= total_tokens:
        raise ValidationError(
            f"served tokens {tokens_served_by_cache} outside [0, {total_tokens}]"
        )
    return 100.0 * tokens_served_by_cache / total_tokens


def mean_response_time(total_time: float, total_requests: int) -> float:
    """Average seconds per request."""
    if total_requests < 1:
        raise ValidationError("total requests must be >= 1")
    if total_time < 0:
        raise ValidationError("total time must be non-negative")
    return total_time / total_requests


@dataclass(frozen=True)
class ClassMetrics:
    precision: float
    recall: float
    f1: float
    support: int


@dataclass(frozen=True)
class ClassificationReport:
    per_class: dict[int, ClassMetrics]
    accuracy: float
    macro: ClassMetrics
    weighted: ClassMetrics

    def format_table(self) -> str:
        lines = [f"{'class':>10} {'precision':>10} {'recall':>10} {'f1':>10} {'support':>10}"]
        for label in sorted(self.per_class):
            m = self.per_class[label]
            lines.append(
                f"{label:>10} {m.precision:>10.4f} {m.recall:>10.4f} "
                f"{m.f1:>10.4f} {m.support:>10}"
            )
        lines.append(f"{'accuracy':>10} {'':>10} {'':>10} {self.accuracy:>10.4f} "
                     f"{self.macro.support:>10}")
        for name, m in (("macro", self.macro), ("weighted", self.weighted)):
            lines.append(
                f"{name:>10} {m.precision:>10.4f} {m.recall:>10.4f} "
                f"{m.f1:>10.4f} {m.support:>10}"
            )
        return "\n".join(lines)


def _f1(precision: float, recall: float) -> float:
    return 2 * precision * recall / (precision + recall) if precision + recall > 0 else 0.0


def classification_report(predictions, labels) -> ClassificationReport:
    """Per-class precision/recall/F1 with accuracy, macro and
    support-weighted averages, for binary {0, 1} outcomes."""
    predictions = np.asarray(predictions).astype(np.int64)
    labels = np.asarray(labels).astype(np.int64)
    if predictions.shape != labels.shape or predictions.ndim != 1:
        raise ValidationError("predictions and labels must be equal-length vectors")
    if predictions.size == 0:
        raise ValidationError("need at least one sample")
    per_class: dict[int, ClassMetrics] = {}
    for cls in (0, 1):
        tp = int(np.sum((predictions == cls) & (labels == cls)))
        fp = int(np.sum((predictions == cls) & (labels != cls)))
        fn = int(np.sum((predictions != cls) & (labels == cls)))
        support = int(np.sum(labels == cls))
        precision = tp / (tp + fp) if tp + fp > 0 else 0.0
        recall = tp / (tp + fn) if tp + fn > 0 else 0.0
        per_class[cls] = ClassMetrics(precision, recall, _f1(precision, recall), support)
    accuracy = float(np.mean(predictions == labels))
    total = labels.size
    macro = ClassMetrics(
        precision=sum(m.precision for m in per_class.values()) / 2,
        recall=sum(m.recall for m in per_class.values()) / 2,
        f1=sum(m.f1 for m in per_class.values()) / 2,
        support=total,
    )
    weighted = ClassMetrics(
        precision=sum(m.precision * m.support for m in per_class.values()) / total,
        recall=sum(m.recall * m.support for m in per_class.values()) / total,
        f1=sum(m.f1 * m.support for m in per_class.values()) / total,
        support=total,
    )
    return ClassificationReport(per_class, accuracy, macro, weighted)


def optimize_threshold(
    scores, labels, grid_step: float = 0.01
) -> tuple[float, float]:
    """Grid-scan thresholds over [min(scores), max(scores)] and return the
    one maximizing F1 of class 1 (prediction = score >= t).

    Equal F1 resolves to the larger threshold, favoring precision.
    """
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    if scores.shape != labels.shape or scores.ndim != 1 or scores.size == 0:
        raise ValidationError("scores and labels must be equal-length vectors")
    if np.any(scores < -1.0 - 1e-9) or np.any(scores > 1.0 + 1e-9):
        raise ValidationError("scores must lie within the cosine range [-1, 1]")
    if len(set(labels.tolist())) < 2:
        raise ValidationError("both labels must be present to optimize a threshold")
    if grid_step <= 0:
        raise ValidationError("grid_step must be positive")

    lo, hi = float(scores.min()), float(scores.max())
    n_steps = int(np.floor((hi - lo) / grid_step + 1e-9))
    grid = [lo + i * grid_step for i in range(n_steps + 1)]
    if grid[-1] < hi:
        grid.append(hi)

    positives = int(np.sum(labels == 1))
    best_t, best_f1 = grid[0], -1.0
    for t in grid:
        predicted = scores >= t
        tp = int(np.sum(predicted & (labels == 1)))
        fp = int(np.sum(predicted & (labels == 0)))
        fn = positives - tp
        f1 = 2 * tp / (2 * tp + fp + fn) if tp + fp + fn > 0 else 0.0
        if f1 > best_f1 or (f1 == best_f1 and t > best_t):
            best_t, best_f1 = t, f1
    return best_t, best_f1


@dataclass(frozen=True)
class CorrelationMatrix:
    model_names: tuple[str, ...]
    matrix: np.ndarray  # m x m, symmetric, unit diagonal; NaN where undefined

    def format_table(self) -> str:
        width = max(12, max(len(n) for n in self.model_names) + 2)
        header = " " * width + "".join(f"{n:>{width}}" for n in self.model_names)
        lines = [header]
        for name, row in zip(self.model_names, self.matrix):
            cells = "".join(f"{v:>{width}.4f}" for v in row)
            lines.append(f"{name:>{width}}" + cells)
        return "\n".join(lines)


def pair_scores(embedding_set: EmbeddingSet, pairs: Sequence[LabeledPair]) -> np.ndarray:
    """Cosine similarity of each pair's two vectors under one model."""
    a = np.stack([embedding_set.vector(p.id_a) for p in pairs]).astype(np.float64)
    b = np.stack([embedding_set.vector(p.id_b) for p in pairs]).astype(np.float64)
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    return np.sum(a * b, axis=1) / (na * nb)


def correlation_study(
    sets: Sequence[EmbeddingSet], pairs: Sequence[LabeledPair]
) -> CorrelationMatrix:
    """Pearson correlation between the models' per-pair similarity scores.

    A model whose scores have zero variance gets NaN against every other
    model (undefined correlation); the diagonal stays 1 by convention.
    """
    if len(sets) < 2:
        raise ValidationError("need at least two embedding sets")
    if len(pairs) < 2:
        raise ValidationError("need at least two pairs")
    score_rows = np.stack([pair_scores(s, pairs) for s in sets])
    centered = score_rows - score_rows.mean(axis=1, keepdims=True)
    stds = np.sqrt(np.mean(centered ** 2, axis=1))
    m = len(sets)
    matrix = np.full((m, m), np.nan)
    for i in range(m):
        for j in range(m):
            if i == j:
                matrix[i, j] = 1.0
            elif stds[i] > 0 and stds[j] > 0:
                matrix[i, j] = float(
                    np.mean(centered[i] * centered[j]) / (stds[i] * stds[j])
                )
    return CorrelationMatrix(tuple(s.model_name for s in sets), matrix)


def select_base_pair(matrix: CorrelationMatrix) -> tuple[str, str]:
    """The two models with the lowest pairwise correlation; ties break
    lexicographically by the (sorted) name pair."""
    names = matrix.model_names
    if len(names) < 2:
        raise ValidationError("need at least two models")
    best: tuple[str, str] | None = None
    best_val = np.inf
    for i in range(len(names)):
        for j in range(i + 1, len(names)):
            v = matrix.matrix[i, j]
            if np.isnan(v):
                continue
            key = tuple(sorted((names[i], names[j])))
            if v < best_val or (v == best_val and (best is None or key < best)):
                best, best_val = key, v
    if best is None:
        raise ValidationError("all pairwise correlations are undefined")
    return best


def similarity_histogram(
    scores, labels, bins: int = 40, lo: float = -1.0, hi: float = 1.0
) -> list[tuple[float, int, int]]:
    """Per-class score histogram rows (bin_center, count_class0, count_class1)."""
    scores = np.asarray(scores, dtype=np.float64)
    labels = np.asarray(labels).astype(np.int64)
    edges = np.linspace(lo, hi, bins + 1)
    centers = (edges[:-1] + edges[1:]) / 2
    c0, _ = np.histogram(scores[labels == 0], bins=edges)
    c1, _ = np.histogram(scores[labels == 1], bins=edges)
    return [(float(c), int(n0), int(n1)) for c, n0, n1 in zip(centers, c0, c1)]


def format_histogram(rows: list[tuple[float, int, int]]) -> str:
    """Two-column `bin_center<TAB>count` tables, one section per class."""
    lines = ["# class 0"]
    lines += [f"{c:.6f}\t{n0}" for c, n0, _ in rows]
    lines.append("# class 1")
    lines += [f"{c:.6f}\t{n1}" for c, _, n1 in rows]
    return "\n".join(lines) + "\n"
