"""Capture-condition encoding and condition-adaptive normalization.

A capture condition is the triple (sensor id, illuminance in lux, frame
rate). Each factor is one-hot encoded against a closed vocabulary,
embedded through its own trainable table, and the three embeddings are
fused by a linear layer into one condition vector. That vector modulates
feature maps through adaptive layer normalization: statistics are
computed per sample over the joint channel and spatial axes, and a
per-layer projection of the condition vector provides the scale and
shift.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import ops
from .module import Module, Parameter
from .tensor import Tensor

ADALN_EPS = 1e-5
FACTOR_DIM = 32


@dataclass(frozen=True)
class CaptureCondition:
    """One burst's capture metadata."""

    sensor_id: int
    illuminance_lx: float
    fps: float

    def __post_init__(self):
        if self.illuminance_lx <= 0:
            raise ValueError(f"illuminance must be positive, got {self.illuminance_lx}")
        if self.fps <= 0:
            raise ValueError(f"fps must be positive, got {self.fps}")

    def to_json(self) -> dict:
        return {
            "sensor_id": int(self.sensor_id),
            "illuminance_lx": float(self.illuminance_lx),
            "fps": float(self.fps),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "CaptureCondition":
        return cls(
            sensor_id=int(obj["sensor_id"]),
            illuminance_lx=float(obj["illuminance_lx"]),
            fps=float(obj["fps"]),
        )


@dataclass(frozen=True)
class ConditionVocabulary:
    """Closed value sets for the three condition factors."""

    sensors: int
    illuminance_lx: tuple[float, ...]
    fps: tuple[float, ...]

    def __post_init__(self):
        object.__setattr__(self, "illuminance_lx", tuple(float(v) for v in self.illuminance_lx))
        object.__setattr__(self, "fps", tuple(float(v) for v in self.fps))
        if self.sensors < 1:
            raise ValueError(f"vocabulary needs at least one sensor, got {self.sensors}")
        for name, values in (("illuminance_lx", self.illuminance_lx), ("fps", self.fps)):
            if not values:
                raise ValueError(f"vocabulary factor {name} is empty")
            if len(set(values)) != len(values):
                raise ValueError(f"vocabulary factor {name} has duplicate entries: {values}")

    def indices(self, cond: CaptureCondition) -> tuple[int, int, int]:
        """Exact-match lookup of each factor; unknown values are errors."""
        if not 0 <= cond.sensor_id < self.sensors:
            raise ValueError(
                f"sensor_id {cond.sensor_id} not in vocabulary ({self.sensors} sensors)"
            )
        if cond.illuminance_lx not in self.illuminance_lx:
            raise ValueError(
                f"illuminance {cond.illuminance_lx} lx not in vocabulary levels "
                f"{list(self.illuminance_lx)}"
            )
        if cond.fps not in self.fps:
            raise ValueError(f"fps {cond.fps} not in vocabulary levels {list(self.fps)}")
        return (
            cond.sensor_id,
            self.illuminance_lx.index(cond.illuminance_lx),
            self.fps.index(cond.fps),
        )

    def to_json(self) -> dict:
        return {
            "sensors": self.sensors,
            "illuminance_lx": list(self.illuminance_lx),
            "fps": list(self.fps),
        }

    @classmethod
    def from_json(cls, obj: dict) -> "ConditionVocabulary":
        return cls(
            sensors=int(obj["sensors"]),
            illuminance_lx=tuple(obj["illuminance_lx"]),
            fps=tuple(obj["fps"]),
        )

    def save(self, path: str | Path) -> None:
        Path(path).write_text(json.dumps(self.to_json(), sort_keys=True) + "\n")

    @classmethod
    def load(cls, path: str | Path) -> "ConditionVocabulary":
        try:
            obj = json.loads(Path(path).read_text())
        except json.JSONDecodeError as exc:
            raise ValueError(f"malformed vocabulary file {path}: {exc}") from exc
        return cls.from_json(obj)


def default_vocabulary() -> ConditionVocabulary:
    """Desk-scale vocabulary: 4 sensors, 3 light levels, 3 frame rates."""
    return ConditionVocabulary(sensors=4, illuminance_lx=(1.0, 5.0, 10.0), fps=(24.0, 60.0, 120.0))


def one_hot(cond: CaptureCondition, vocab: ConditionVocabulary):
    """Three one-hot vectors, one per factor."""
    si, li, fi = vocab.indices(cond)
    hs = np.zeros(vocab.sensors, dtype=np.float32)
    hl = np.zeros(len(vocab.illuminance_lx), dtype=np.float32)
    hf = np.zeros(len(vocab.fps), dtype=np.float32)
    hs[si] = 1.0
    hl[li] = 1.0
    hf[fi] = 1.0
    return hs, hl, hf


class ConditionEmbedding(Module):
    """Per-factor embedding tables fused into one condition vector."""

    def __init__(self, vocab: ConditionVocabulary, cond_dim: int = 64,
                 factor_dim: int = FACTOR_DIM, dtype=np.float32):
        self.vocab = vocab
        self.cond_dim = cond_dim
        self.factor_dim = factor_dim
        self.sensor_table = Parameter((vocab.sensors, factor_dim), ("normal", 1.0), dtype)
        self.illuminance_table = Parameter(
            (len(vocab.illuminance_lx), factor_dim), ("normal", 1.0), dtype
        )
        self.fps_table = Parameter((len(vocab.fps), factor_dim), ("normal", 1.0), dtype)
        self.fuse_w = Parameter((cond_dim, 3 * factor_dim), ("fan_in", 3 * factor_dim), dtype)
        self.fuse_b = Parameter((cond_dim,), ("zeros",), dtype)

    def __call__(self, cond: CaptureCondition) -> Tensor:
        """Embed a condition into a [1, cond_dim] vector."""
        hs, hl, hf = one_hot(cond, self.vocab)
        dtype = self.sensor_table.dtype
        rows = [
            ops.linear(Tensor(h[None, :], dtype=dtype), ops.transpose(table, (1, 0)))
            for h, table in (
                (hs, self.sensor_table),
                (hl, self.illuminance_table),
                (hf, self.fps_table),
            )
        ]
        fused = ops.concat(rows, axis=1)
        return ops.linear(fused, self.fuse_w, self.fuse_b)


def _joint_normalize(x: Tensor, eps: float) -> Tensor:
    """Standardize each sample over its joint (C, H, W) axes."""
    if x.ndim != 4:
        raise ValueError(f"adaptive layer norm expects [B, C, H, W], got shape {x.shape}")
    mu = ops.mean(x, axis=(1, 2, 3), keepdims=True)
    centered = ops.sub(x, mu)
    var = ops.mean(ops.mul(centered, centered), axis=(1, 2, 3), keepdims=True)
    inv = ops.power(ops.add(var, eps), -0.5)
    return ops.mul(centered, inv)


class AdaptiveLayerNorm(Module):
    """Joint-axis normalization with condition-projected scale and shift.

    The projection starts at identity: zero weight, bias equal to
    (ones for scale, zeros for shift), so an untrained layer is a plain
    normalization regardless of the condition vector.
    """

    def __init__(self, channels: int, cond_dim: int, eps: float = ADALN_EPS, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        bias0 = np.concatenate([np.ones(channels), np.zeros(channels)])
        self.proj_w = Parameter((2 * channels, cond_dim), ("zeros",), dtype)
        self.proj_b = Parameter((2 * channels,), ("const", bias0), dtype)

    def __call__(self, x: Tensor, v_cc: Tensor) -> Tensor:
        if v_cc is None:
            raise ValueError("adaptive layer norm requires a condition vector")
        normalized = _joint_normalize(x, self.eps)
        gamma_beta = ops.linear(v_cc, self.proj_w, self.proj_b)  # [B, 2C]
        c = self.channels
        gamma = ops.reshape(ops.narrow(gamma_beta, 1, 0, c), (gamma_beta.shape[0], c, 1, 1))
        beta = ops.reshape(ops.narrow(gamma_beta, 1, c, c), (gamma_beta.shape[0], c, 1, 1))
        return ops.add(ops.mul(normalized, gamma), beta)


class StaticLayerNorm(Module):
    """Same joint-axis normalization with plain per-channel affine."""

    def __init__(self, channels: int, eps: float = ADALN_EPS, dtype=np.float32):
        self.channels = channels
        self.eps = eps
        self.gamma = Parameter((channels,), ("ones",), dtype)
        self.beta = Parameter((channels,), ("zeros",), dtype)

    def __call__(self, x: Tensor, v_cc: Tensor = None) -> Tensor:
        normalized = _joint_normalize(x, self.eps)
        return ops.add(ops.mul(normalized, self.gamma), self.beta)


def ada_ln(x: Tensor, v_cc: Tensor, layer: AdaptiveLayerNorm) -> Tensor:
    """Functional form of :class:`AdaptiveLayerNorm`."""
    return layer(x, v_cc)
