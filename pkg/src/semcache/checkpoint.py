"""Checkpoint persistence and eval-mode encoding.

Checkpoint file layout (little-endian):

    magic    4 bytes b"SENC"
    version  u32 = 1
    config   u32 input_dim, hidden_dim, reduced_dim, output_dim;
             f64 dropout_rate, leaky_slope, bn_eps, bn_momentum, margin;
             u64 seed
    epoch    u32
    val_loss f64
    adam_t   u64 optimizer step counter
    tensors  learnable parameters, then batch-norm running statistics, then
             Adam first moments, then second moments, each as
             u8 ndim | u32 dims... | float32 data
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .encoder import (
    EncoderConfig,
    EncoderState,
    MetaEncoder,
    buffer_shapes,
    param_shapes,
)
from .errors import CorruptionError, FormatError, ValidationError

MAGIC = b"SENC"
FORMAT_VERSION = 1


@dataclass
class AdamMoments:
    m: dict[str, np.ndarray]
    v: dict[str, np.ndarray]
    step: int = 0

    @classmethod
    def zeros_like(cls, params: dict[str, np.ndarray]) -> "AdamMoments":
        return cls(
            m={k: np.zeros_like(p, dtype=np.float32) for k, p in params.items()},
            v={k: np.zeros_like(p, dtype=np.float32) for k, p in params.items()},
            step=0,
        )

    def copy(self) -> "AdamMoments":
        return AdamMoments(
            m={k: t.copy() for k, t in self.m.items()},
            v={k: t.copy() for k, t in self.v.items()},
            step=self.step,
        )


@dataclass
class Checkpoint:
    config: EncoderConfig
    state: EncoderState  # eval-mode snapshot
    epoch: int
    validation_loss: float
    moments: AdamMoments


def encode(checkpoint: Checkpoint, inputs) -> np.ndarray:
    """Deterministic eval-mode forward; returns float32 unit-norm rows."""
    inputs = np.asarray(inputs, dtype=np.float32)
    if inputs.ndim != 2 or inputs.shape[1] != checkpoint.config.input_dim:
        raise ValidationError(
            f"inputs of shape {inputs.shape} do not match checkpoint "
            f"input_dim {checkpoint.config.input_dim}"
        )
    state = checkpoint.state.copy()
    state.mode = "eval"
    out = MetaEncoder(checkpoint.config, state).forward(inputs)
    return out.astype(np.float32)


def _write_tensor(out, tensor: np.ndarray) -> None:
    out.write(struct.pack("<B", tensor.ndim))
    for d in tensor.shape:
        out.write(struct.pack("<I", d))
    out.write(np.ascontiguousarray(tensor, dtype="<f4").tobytes())


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(f"truncated checkpoint while reading {what}")
    return data


def _read_tensor(f, expected_shape: tuple[int, ...], what: str) -> np.ndarray:
    (ndim,) = struct.unpack("<B", _read_exact(f, 1, f"{what} ndim"))
    shape = tuple(
        struct.unpack("<I", _read_exact(f, 4, f"{what} dim"))[0] for _ in range(ndim)
    )
    if shape != expected_shape:
        raise CorruptionError(f"{what} has shape {shape}, expected {expected_shape}")
    count = int(np.prod(shape)) if shape else 1
    data = _read_exact(f, count * 4, f"{what} data")
    return np.frombuffer(data, dtype="<f4").reshape(shape).copy()


def save_checkpoint(checkpoint: Checkpoint, path) -> None:
    cfg = checkpoint.config
    with open(Path(path), "wb") as out:
        out.write(MAGIC)
        out.write(struct.pack("<I", FORMAT_VERSION))
        out.write(struct.pack("<IIII", cfg.input_dim, cfg.hidden_dim,
                              cfg.reduced_dim, cfg.output_dim))
        out.write(struct.pack("<ddddd", cfg.dropout_rate, cfg.leaky_slope,
                              cfg.bn_eps, cfg.bn_momentum, cfg.margin))
        out.write(struct.pack("<Q", cfg.seed))
        out.write(struct.pack("<I", checkpoint.epoch))
        out.write(struct.pack("<d", checkpoint.validation_loss))
        out.write(struct.pack("<Q", checkpoint.moments.step))
        for name in param_shapes(cfg):
            _write_tensor(out, checkpoint.state.params[name])
        for name in buffer_shapes(cfg):
            _write_tensor(out, checkpoint.state.buffers[name])
        for name in param_shapes(cfg):
            _write_tensor(out, checkpoint.moments.m[name])
        for name in param_shapes(cfg):
            _write_tensor(out, checkpoint.moments.v[name])


def load_checkpoint(path) -> Checkpoint:
    path = Path(path)
    with open(path, "rb") as f:
        magic = f.read(4)
        if magic != MAGIC:
            raise FormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != FORMAT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        dims = struct.unpack("<IIII", _read_exact(f, 16, "config dims"))
        floats = struct.unpack("<ddddd", _read_exact(f, 40, "config floats"))
        (seed,) = struct.unpack("<Q", _read_exact(f, 8, "config seed"))
        config = EncoderConfig(
            input_dim=dims[0], hidden_dim=dims[1], reduced_dim=dims[2],
            output_dim=dims[3], dropout_rate=floats[0], leaky_slope=floats[1],
            bn_eps=floats[2], bn_momentum=floats[3], margin=floats[4], seed=seed,
        )
        (epoch,) = struct.unpack("<I", _read_exact(f, 4, "epoch"))
        (val_loss,) = struct.unpack("<d", _read_exact(f, 8, "validation loss"))
        (step,) = struct.unpack("<Q", _read_exact(f, 8, "adam step"))
        params = {
            name: _read_tensor(f, shape, f"parameter {name}")
            for name, shape in param_shapes(config).items()
        }
        buffers = {
            name: _read_tensor(f, shape, f"buffer {name}")
            for name, shape in buffer_shapes(config).items()
        }
        m = {
            name: _read_tensor(f, shape, f"adam m {name}")
            for name, shape in param_shapes(config).items()
        }
        v = {
            name: _read_tensor(f, shape, f"adam v {name}")
            for name, shape in param_shapes(config).items()
        }
        if f.read(1):
            raise CorruptionError(f"{path}: trailing bytes after tensors")
    return Checkpoint(
        config=config,
        state=EncoderState(params=params, buffers=buffers, mode="eval"),
        epoch=epoch,
        validation_loss=val_loss,
        moments=AdamMoments(m=m, v=v, step=step),
    )
