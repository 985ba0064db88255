"""Supervised contrastive training of the fusion encoder.

Adam with decoupled weight decay, a step learning-rate scheduler, early
stopping on validation loss, and a stratified 70/15/15 split.  Everything is
seeded; two runs with the same seeds produce bit-identical checkpoints.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .checkpoint import AdamMoments, Checkpoint
from .embeddings import LabeledPair
from .encoder import (
    ADAM_BETA1,
    ADAM_BETA2,
    ADAM_EPS,
    EncoderConfig,
    MetaEncoder,
    contrastive_loss,
    init_state,
)
from .errors import StateError, ValidationError


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 1e-4
    weight_decay: float = 1e-5
    scheduler_step: int = 5
    scheduler_gamma: float = 0.5
    early_stop_patience: int = 3
    max_epochs: int = 30
    batch_size: int = 256
    split_fractions: tuple[float, float, float] = (0.70, 0.15, 0.15)
    seed: int = 0

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ValidationError("learning_rate must be positive")
        if self.weight_decay < 0:
            raise ValidationError("weight_decay must be non-negative")
        if self.scheduler_step < 1 or self.max_epochs < 1:
            raise ValidationError("scheduler_step and max_epochs must be >= 1")
        if self.early_stop_patience < 1:
            raise ValidationError("early_stop_patience must be >= 1")
        if self.batch_size < 2:
            raise ValidationError("batch_size must be >= 2 (batch norm needs >1 row)")
        if abs(sum(self.split_fractions) - 1.0) > 1e-9:
            raise ValidationError("split_fractions must sum to 1.0")
        if any(f < 0 for f in self.split_fractions):
            raise ValidationError("split_fractions must be non-negative")


@dataclass(frozen=True)
class EpochStats:
    epoch: int
    train_loss: float
    val_loss: float
    learning_rate: float


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    history: list[EpochStats]
    # index triples into the pair arrays the model was trained on
    train_indices: np.ndarray
    val_indices: np.ndarray
    test_indices: np.ndarray


def _apportion(n: int, fractions: Sequence[float], deficits: Sequence[float]) -> list[int]:
    """Largest-remainder allocation of n items; remainder ties go to the
    partition that is furthest behind its global target."""
    exact = [f * n for f in fractions]
    counts = [math.floor(e) for e in exact]
    leftover = n - sum(counts)
    order = sorted(
        range(len(fractions)),
        key=lambda i: (-(exact[i] - counts[i]), -deficits[i], i),
    )
    for i in order[:leftover]:
        counts[i] += 1
    return counts


def split_indices(
    labels, fractions: Sequence[float] = (0.70, 0.15, 0.15), seed: int = 0
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Stratified index split: per-label proportions match fractions within
    one item, partitions are disjoint and exhaustive, order is shuffled
    deterministically by seed."""
    labels = np.asarray(labels)
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise ValidationError("split fractions must sum to 1.0")
    classes = sorted(set(labels.tolist()))
    if len(classes) < 2:
        raise ValidationError("both labels must be present to stratify")
    rng = np.random.default_rng(seed)
    parts: list[list[np.ndarray]] = [[] for _ in fractions]
    allocated = [0] * len(fractions)
    processed = 0
    for label in classes:
        idx = np.flatnonzero(labels == label)
        if len(idx) < 3:
            raise ValidationError(
                f"label {label} has only {len(idx)} items; need at least 3 to split"
            )
        idx = rng.permutation(idx)
        processed += len(idx)
        deficits = [f * processed - a for f, a in zip(fractions, allocated)]
        counts = _apportion(len(idx), fractions, deficits)
        start = 0
        for i, c in enumerate(counts):
            parts[i].append(idx[start:start + c])
            allocated[i] += c
            start += c
    return tuple(np.concatenate(p) for p in parts)  # type: ignore[return-value]


def stratified_split(
    pairs: Sequence[LabeledPair],
    fractions: Sequence[float] = (0.70, 0.15, 0.15),
    seed: int = 0,
) -> tuple[list[LabeledPair], list[LabeledPair], list[LabeledPair]]:
    """Stratified split of labeled pairs into (train, val, test)."""
    labels = [p.label for p in pairs]
    tr, va, te = split_indices(labels, fractions, seed)
    pick = lambda idx: [pairs[i] for i in idx]
    return pick(tr), pick(va), pick(te)


def learning_rate_at(epoch: int, config: TrainConfig) -> float:
    """Step schedule: the rate is multiplied by gamma every scheduler_step
    epochs (epochs are 1-based, so epochs 1..step use the initial rate)."""
    return config.learning_rate * config.scheduler_gamma ** (
        (epoch - 1) // config.scheduler_step
    )


def _adam_step(params, moments: AdamMoments, grads, lr: float, weight_decay: float):
    moments.step += 1
    t = moments.step
    bias1 = 1.0 - ADAM_BETA1 ** t
    bias2 = 1.0 - ADAM_BETA2 ** t
    for k, p in params.items():
        g = grads[k]
        m = ADAM_BETA1 * moments.m[k].astype(np.float64) + (1 - ADAM_BETA1) * g
        v = ADAM_BETA2 * moments.v[k].astype(np.float64) + (1 - ADAM_BETA2) * g * g
        moments.m[k] = m.astype(np.float32)
        moments.v[k] = v.astype(np.float32)
        step = m / bias1 / (np.sqrt(v / bias2) + ADAM_EPS)
        # decay is decoupled: it shrinks the parameter, not the gradient
        p64 = p.astype(np.float64)
        params[k] = (p64 - lr * (step + weight_decay * p64)).astype(np.float32)


def train(
    encoder_config: EncoderConfig,
    train_config: TrainConfig,
    pair_inputs: tuple[np.ndarray, np.ndarray, np.ndarray],
) -> TrainResult:
    """Full training run; returns the minimum-validation-loss checkpoint.

    `pair_inputs` is the (a, b, labels) triple from build_pair_inputs.
    """
    a, b, labels = pair_inputs
    a = np.asarray(a)
    b = np.asarray(b)
    labels = np.asarray(labels)
    if a.shape != b.shape or a.shape[0] != labels.shape[0]:
        raise ValidationError("pair input arrays are misaligned")

    tr_idx, va_idx, te_idx = split_indices(
        labels, train_config.split_fractions, train_config.seed
    )
    if len(tr_idx) < 2:
        raise ValidationError("training split is empty (need at least 2 pairs)")

    encoder = MetaEncoder(encoder_config, init_state(encoder_config))
    moments = AdamMoments.zeros_like(encoder.state.params)
    rng = np.random.default_rng((train_config.seed, 1))

    a_tr, b_tr, y_tr = a[tr_idx], b[tr_idx], labels[tr_idx]
    a_va, b_va, y_va = a[va_idx], b[va_idx], labels[va_idx]

    batch = min(train_config.batch_size, len(tr_idx))
    history: list[EpochStats] = []
    best: Checkpoint | None = None
    stale_epochs = 0

    for epoch in range(1, train_config.max_epochs + 1):
        lr = learning_rate_at(epoch, train_config)
        encoder.train_mode()
        perm = rng.permutation(len(tr_idx))
        losses = []
        for start in range(0, len(perm) - batch + 1, batch):
            sel = perm[start:start + batch]
            loss, grads = encoder.backward(a_tr[sel], b_tr[sel], y_tr[sel], rng)
            _adam_step(encoder.state.params, moments, grads, lr, train_config.weight_decay)
            losses.append(loss)
        train_loss = float(np.mean(losses))

        encoder.eval_mode()
        out_a = encoder.forward(a_va)
        out_b = encoder.forward(b_va)
        val_loss, _, _ = contrastive_loss(out_a, out_b, y_va, encoder_config.margin)

        if not (math.isfinite(train_loss) and math.isfinite(val_loss)):
            raise StateError(
                f"training diverged at epoch {epoch}: "
                f"train_loss={train_loss}, val_loss={val_loss}"
            )
        history.append(EpochStats(epoch, train_loss, val_loss, lr))

        if best is None or val_loss < best.validation_loss:
            best = Checkpoint(
                config=encoder_config,
                state=encoder.state.copy(),
                epoch=epoch,
                validation_loss=val_loss,
                moments=moments.copy(),
            )
            stale_epochs = 0
        else:
            stale_epochs += 1
            if stale_epochs >= train_config.early_stop_patience:
                break

    assert best is not None
    return TrainResult(
        checkpoint=best,
        history=history,
        train_indices=tr_idx,
        val_indices=va_idx,
        test_indices=te_idx,
    )


HISTORY_HEADER = "# epoch\ttrain_loss\tval_loss\tlr"


def format_history(history: Sequence[EpochStats]) -> str:
    lines = [HISTORY_HEADER]
    for h in history:
        lines.append(f"{h.epoch}\t{h.train_loss:.8f}\t{h.val_loss:.8f}\t{h.learning_rate:.8g}")
    return "\n".join(lines) + "\n"
