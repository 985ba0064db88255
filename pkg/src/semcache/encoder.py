"""Trainable fusion encoder: forward pass, contrastive loss, exact gradients.

The network maps a fused base-model embedding to a unit-length vector:

    layer 1     linear(input -> hidden)   + batch norm + LeakyReLU + dropout
    layer 2     linear(hidden -> hidden)  + batch norm + LeakyReLU + dropout,
                then the layer-1 output is added back in (residual skip)
    layer 3     linear(hidden -> reduced) + batch norm + LeakyReLU + dropout
    projection  linear(reduced -> output) + row-wise L2 normalization

All learnable tensors and batch-norm running statistics are held as float32
(the checkpoint storage type); arithmetic is done in float64 so analytic
gradients survive a finite-difference check.  Gradients are hand-derived for
this fixed architecture; there is no general autograd.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from .errors import StateError, ValidationError

ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8


@dataclass(frozen=True)
class EncoderConfig:
    input_dim: int = 768
    hidden_dim: int = 1024
    reduced_dim: int = 512  # hidden_dim / 2 by default
    output_dim: int = 384
    dropout_rate: float = 0.1
    leaky_slope: float = 0.01
    bn_eps: float = 1e-5
    bn_momentum: float = 0.1
    margin: float = 0.5
    seed: int = 0

    def __post_init__(self):
        for name in ("input_dim", "hidden_dim", "reduced_dim", "output_dim"):
            if getattr(self, name) < 1:
                raise ValidationError(f"{name} must be positive")
        if not 0.0 <= self.dropout_rate < 1.0:
            raise ValidationError("dropout_rate must be in [0, 1)")
        if self.leaky_slope <= 0:
            raise ValidationError("leaky_slope must be positive")
        if self.bn_eps <= 0:
            raise ValidationError("bn_eps must be positive")
        if not 0.0 < self.bn_momentum <= 1.0:
            raise ValidationError("bn_momentum must be in (0, 1]")
        if self.margin <= 0:
            raise ValidationError("margin must be positive")


def param_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Learnable tensors in their fixed serialization order."""
    i, h, r, o = (config.input_dim, config.hidden_dim,
                  config.reduced_dim, config.output_dim)
    return {
        "w1": (i, h), "b1": (h,), "gamma1": (h,), "beta1": (h,),
        "w2": (h, h), "b2": (h,), "gamma2": (h,), "beta2": (h,),
        "w3": (h, r), "b3": (r,), "gamma3": (r,), "beta3": (r,),
        "w4": (r, o), "b4": (o,),
    }


def buffer_shapes(config: EncoderConfig) -> dict[str, tuple[int, ...]]:
    """Batch-norm running statistics, in serialization order."""
    h, r = config.hidden_dim, config.reduced_dim
    return {
        "rmean1": (h,), "rvar1": (h,),
        "rmean2": (h,), "rvar2": (h,),
        "rmean3": (r,), "rvar3": (r,),
    }


@dataclass
class EncoderState:
    """Parameters plus batch-norm running statistics; float32 throughout."""

    params: dict[str, np.ndarray]
    buffers: dict[str, np.ndarray]
    mode: str = "eval"  # "train" or "eval"

    def copy(self) -> "EncoderState":
        return EncoderState(
            params={k: v.copy() for k, v in self.params.items()},
            buffers={k: v.copy() for k, v in self.buffers.items()},
            mode=self.mode,
        )


def init_state(config: EncoderConfig, rng: Optional[np.random.Generator] = None) -> EncoderState:
    """Kaiming fan-in initialization scaled for LeakyReLU; BN at identity."""
    if rng is None:
        rng = np.random.default_rng(config.seed)
    gain_sq = 2.0 / (1.0 + config.leaky_slope ** 2)
    params: dict[str, np.ndarray] = {}
    for name, shape in param_shapes(config).items():
        if name.startswith("w"):
            std = np.sqrt(gain_sq / shape[0])
            params[name] = rng.normal(0.0, std, size=shape).astype(np.float32)
        elif name.startswith("gamma"):
            params[name] = np.ones(shape, dtype=np.float32)
        else:  # biases and beta
            params[name] = np.zeros(shape, dtype=np.float32)
    buffers = {}
    for name, shape in buffer_shapes(config).items():
        fill = 1.0 if name.startswith("rvar") else 0.0
        buffers[name] = np.full(shape, fill, dtype=np.float32)
    return EncoderState(params=params, buffers=buffers, mode="eval")


def _leaky(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, x, slope * x)


def _leaky_grad(x: np.ndarray, slope: float) -> np.ndarray:
    return np.where(x >= 0, 1.0, slope)


class MetaEncoder:
    """Couples an EncoderConfig with an EncoderState and runs the pipeline."""

    def __init__(self, config: EncoderConfig, state: Optional[EncoderState] = None):
        self.config = config
        self.state = state if state is not None else init_state(config)

    @property
    def mode(self) -> str:
        return self.state.mode

    def train_mode(self) -> "MetaEncoder":
        self.state.mode = "train"
        return self

    def eval_mode(self) -> "MetaEncoder":
        self.state.mode = "eval"
        return self

    def forward(self, batch, rng: Optional[np.random.Generator] = None) -> np.ndarray:
        """Run the pipeline; returns float64 rows of unit L2 norm.

        In train mode batch norm uses batch statistics (and folds them into
        the running averages) and dropout is active, so `rng` is required
        when dropout_rate > 0.  Eval mode is deterministic.
        """
        out, _ = self._forward_cached(np.asarray(batch), rng)
        return out

    def _forward_cached(self, x: np.ndarray, rng: Optional[np.random.Generator]):
        cfg = self.config
        train = self.state.mode == "train"
        if x.ndim != 2 or x.shape[1] != cfg.input_dim:
            raise ValidationError(
                f"batch shape {x.shape} incompatible with input_dim {cfg.input_dim}"
            )
        if train and x.shape[0] < 2:
            raise ValidationError("train-mode batches need at least 2 rows for batch norm")
        if train and cfg.dropout_rate > 0 and rng is None:
            raise ValidationError("train-mode forward with dropout needs an rng")

        p64 = {k: v.astype(np.float64) for k, v in self.state.params.items()}
        x = x.astype(np.float64)
        cache: dict = {"x": x}

        def block(idx: int, inp: np.ndarray) -> np.ndarray:
            z = inp @ p64[f"w{idx}"] + p64[f"b{idx}"]
            if train:
                mu = z.mean(axis=0)
                var = z.var(axis=0)  # biased, as used for the batch itself
                n = z.shape[0]
                mom = cfg.bn_momentum
                unbiased = var * n / (n - 1)
                rm = self.state.buffers[f"rmean{idx}"].astype(np.float64)
                rv = self.state.buffers[f"rvar{idx}"].astype(np.float64)
                self.state.buffers[f"rmean{idx}"] = ((1 - mom) * rm + mom * mu).astype(np.float32)
                self.state.buffers[f"rvar{idx}"] = ((1 - mom) * rv + mom * unbiased).astype(np.float32)
            else:
                mu = self.state.buffers[f"rmean{idx}"].astype(np.float64)
                var = self.state.buffers[f"rvar{idx}"].astype(np.float64)
            inv_std = 1.0 / np.sqrt(var + cfg.bn_eps)
            xhat = (z - mu) * inv_std
            a = p64[f"gamma{idx}"] * xhat + p64[f"beta{idx}"]
            r = _leaky(a, cfg.leaky_slope)
            if train and cfg.dropout_rate > 0:
                keep = rng.random(r.shape) >= cfg.dropout_rate
                mask = keep / (1.0 - cfg.dropout_rate)
            else:
                mask = None
            d = r * mask if mask is not None else r
            cache[f"in{idx}"] = inp
            cache[f"xhat{idx}"] = xhat
            cache[f"inv_std{idx}"] = inv_std
            cache[f"a{idx}"] = a
            cache[f"mask{idx}"] = mask
            return d

        h1 = block(1, x)
        h2 = block(2, h1) + h1  # residual skip around layer 2
        h3 = block(3, h2)
        z4 = h3 @ p64["w4"] + p64["b4"]
        norms = np.linalg.norm(z4, axis=1, keepdims=True)
        if np.any(norms == 0):
            raise ValidationError("projection produced a zero row; cannot normalize")
        out = z4 / norms

        cache.update(h1=h1, h2=h2, h3=h3, z4=z4, norms=norms, out=out, p64=p64)
        return out, cache

    def backward(self, batch_a, batch_b, labels, rng: Optional[np.random.Generator] = None):
        """One contrastive training step without the parameter update.

        Runs both arms forward in train mode (sharing weights, each arm with
        its own dropout masks and batch statistics), evaluates the loss and
        returns (loss, grads) where grads maps every learnable tensor name
        to the gradient of the mean loss.
        """
        if self.state.mode != "train":
            raise StateError("backward requires train mode")
        labels = np.asarray(labels)
        out_a, cache_a = self._forward_cached(np.asarray(batch_a), rng)
        out_b, cache_b = self._forward_cached(np.asarray(batch_b), rng)
        loss, d_out_a, d_out_b = contrastive_loss(
            out_a, out_b, labels, self.config.margin
        )
        grads = self._backprop(cache_a, d_out_a)
        grads_b = self._backprop(cache_b, d_out_b)
        for k in grads:
            grads[k] += grads_b[k]
        return loss, grads

    def _backprop(self, cache: dict, d_out: np.ndarray) -> dict[str, np.ndarray]:
        cfg = self.config
        p64 = cache["p64"]
        grads: dict[str, np.ndarray] = {}

        # through the row-wise L2 normalization: out = z4 / |z4|
        out, norms = cache["out"], cache["norms"]
        dz4 = (d_out - out * np.sum(d_out * out, axis=1, keepdims=True)) / norms

        grads["w4"] = cache["h3"].T @ dz4
        grads["b4"] = dz4.sum(axis=0)
        dh = dz4 @ p64["w4"].T

        def block_back(idx: int, dh: np.ndarray) -> np.ndarray:
            mask = cache[f"mask{idx}"]
            dr = dh * mask if mask is not None else dh
            da = dr * _leaky_grad(cache[f"a{idx}"], cfg.leaky_slope)
            xhat = cache[f"xhat{idx}"]
            grads[f"gamma{idx}"] = (da * xhat).sum(axis=0)
            grads[f"beta{idx}"] = da.sum(axis=0)
            dxhat = da * p64[f"gamma{idx}"]
            n = dxhat.shape[0]
            # batch statistics depend on z, hence the centering terms
            dz = (cache[f"inv_std{idx}"] / n) * (
                n * dxhat
                - dxhat.sum(axis=0)
                - xhat * (dxhat * xhat).sum(axis=0)
            )
            grads[f"w{idx}"] = cache[f"in{idx}"].T @ dz
            grads[f"b{idx}"] = dz.sum(axis=0)
            return dz @ p64[f"w{idx}"].T

        dh3 = dh
        dh2 = block_back(3, dh3)
        dh1 = block_back(2, dh2) + dh2  # residual: skip path adds straight through
        block_back(1, dh1)
        return grads


def contrastive_loss(out_a, out_b, labels, margin: float):
    """Mean contrastive loss over pairs, plus exact partials w.r.t. the outputs.

    Per pair: d = 1 - cosine(a, b); duplicates contribute d^2, non-duplicates
    max(0, margin - d)^2.  Norms are recomputed rather than assumed to be 1.
    """
    a = np.asarray(out_a, dtype=np.float64)
    b = np.asarray(out_b, dtype=np.float64)
    labels = np.asarray(labels)
    if a.shape != b.shape or a.ndim != 2 or a.shape[0] != labels.shape[0]:
        raise ValidationError(
            f"misaligned shapes: {a.shape} vs {b.shape} with {labels.shape[0]} labels"
        )
    na = np.linalg.norm(a, axis=1)
    nb = np.linalg.norm(b, axis=1)
    s = np.sum(a * b, axis=1) / (na * nb)
    d = 1.0 - s
    pos = labels == 1
    hinge = np.maximum(0.0, margin - d)
    terms = np.where(pos, d ** 2, hinge ** 2)
    loss = float(terms.mean())

    n = a.shape[0]
    # d(term)/dd, already divided by n for the batch mean
    dd = np.where(pos, 2.0 * d, -2.0 * hinge) / n
    ds = -dd
    d_a = ds[:, None] * (b / (na * nb)[:, None] - a * (s / na ** 2)[:, None])
    d_b = ds[:, None] * (a / (na * nb)[:, None] - b * (s / nb ** 2)[:, None])
    return loss, d_a, d_b
