"""The two-stage burst denoiser: conditioned alignment, then a U-shaped
conditioned restoration network.

The model consumes T consecutive noisy mosaicked frames and restores the
final (base) frame. Frames are packed to four half-resolution planes,
aligned toward the base frame by offset-predicting warp blocks
interleaved with burst-scan mixing, fused across time by a 1x1 conv, and
denoised by an encoder/bottleneck/decoder of gated conv blocks with
additive skip connections. The output conv starts at zero and the packed
base frame is added back globally, so a freshly initialized model is an
exact identity on the base frame.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from . import ops
from .blocks import AlignBlock, BurstScanBlock, ConvBlock, NafBlock
from .conditioning import (
    CaptureCondition,
    ConditionEmbedding,
    ConditionVocabulary,
    default_vocabulary,
)
from .module import Module, Parameter
from .scan import DEFAULT_CHUNK
from .tensor import Tensor, no_grad, read_array, write_array

CHECKPOINT_MANIFEST = "checkpoint.json"


@dataclass(frozen=True)
class ModelConfig:
    """Architecture hyperparameters.

    Defaults are full scale (48 channels, 10-frame bursts, 4 resolution
    scales, 4/8/4 encoder/bottleneck/decoder blocks); :meth:`desk` shrinks
    everything to laptop size. ``use_conditioning`` and ``use_burst_scan``
    carve out the ablation variants while keeping shared parameter names
    (and therefore shared initialization) intact.
    """

    channels: int = 48
    frames: int = 10
    num_scales: int = 4
    enc_blocks: int = 4
    bottleneck_blocks: int = 8
    dec_blocks: int = 4
    align_levels: int = 2
    cond_dim: int = 64
    factor_dim: int = 32
    state_dim: int = 8
    attn_reduction: int = 4
    scan_kernel: str = "parallel"
    scan_chunk: int = DEFAULT_CHUNK
    scan_threads: int = 1
    use_conditioning: bool = True
    use_burst_scan: bool = True
    vocab: ConditionVocabulary = field(default_factory=default_vocabulary)

    @classmethod
    def desk(cls, **overrides) -> "ModelConfig":
        base = dict(
            channels=8, frames=4, num_scales=2,
            enc_blocks=4, bottleneck_blocks=8, dec_blocks=4,
            align_levels=2, cond_dim=16, factor_dim=8, state_dim=8,
        )
        base.update(overrides)
        return cls(**base)

    def validate(self) -> None:
        if self.frames < 2:
            raise ValueError(f"bursts need at least 2 frames, got {self.frames}")
        if self.channels < self.attn_reduction or self.channels % self.attn_reduction:
            raise ValueError(
                f"channels {self.channels} must be a positive multiple of the attention "
                f"reduction {self.attn_reduction}"
            )
        if self.num_scales < 1:
            raise ValueError(f"need at least one resolution scale, got {self.num_scales}")
        if self.enc_blocks % self.num_scales or self.dec_blocks % self.num_scales:
            raise ValueError(
                f"encoder/decoder blocks ({self.enc_blocks}/{self.dec_blocks}) must divide "
                f"evenly across {self.num_scales} scales"
            )
        if self.bottleneck_blocks < 1 or self.align_levels < 1:
            raise ValueError("bottleneck and alignment need at least one block each")
        if self.cond_dim < 1 or self.factor_dim < 1 or self.state_dim < 1:
            raise ValueError("embedding and state widths must be positive")

    def min_input_size(self) -> int:
        # Packing halves resolution once; each encoder scale halves again.
        return 2 ** (self.num_scales + 1)

    def to_json(self) -> dict:
        obj = {
            "channels": self.channels,
            "frames": self.frames,
            "num_scales": self.num_scales,
            "enc_blocks": self.enc_blocks,
            "bottleneck_blocks": self.bottleneck_blocks,
            "dec_blocks": self.dec_blocks,
            "align_levels": self.align_levels,
            "cond_dim": self.cond_dim,
            "factor_dim": self.factor_dim,
            "state_dim": self.state_dim,
            "attn_reduction": self.attn_reduction,
            "scan_kernel": self.scan_kernel,
            "scan_chunk": self.scan_chunk,
            "scan_threads": self.scan_threads,
            "use_conditioning": self.use_conditioning,
            "use_burst_scan": self.use_burst_scan,
            "vocabulary": self.vocab.to_json(),
        }
        return obj

    @classmethod
    def from_json(cls, obj: dict) -> "ModelConfig":
        obj = dict(obj)
        raw = obj.pop("vocabulary", None)
        vocab = default_vocabulary() if raw is None else ConditionVocabulary.from_json(raw)
        return cls(vocab=vocab, **obj)


def bayer_pack_t(frames: Tensor) -> Tensor:
    """Differentiable [T, H, W] -> [T, 4, H/2, W/2] packing."""
    t, h, w = frames.shape
    x = ops.reshape(frames, (t, h // 2, 2, w // 2, 2))
    x = ops.transpose(x, (0, 2, 4, 1, 3))
    return ops.reshape(x, (t, 4, h // 2, w // 2))


def bayer_unpack_t(planes: Tensor) -> Tensor:
    """Differentiable [4, h, w] -> [2h, 2w] unpacking."""
    _, h, w = planes.shape
    x = ops.reshape(planes, (2, 2, h, w))
    x = ops.transpose(x, (2, 0, 3, 1))
    return ops.reshape(x, (2 * h, 2 * w))


class AlignmentStage(Module):
    """Shallow features, then per-level mixing and warping toward the base."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        c = cfg.channels
        cond = cfg.cond_dim if cfg.use_conditioning else None
        self.shallow_w = Parameter((c, 4, 3, 3), ("fan_in", 4 * 9), dtype)
        self.shallow_b = Parameter((c,), ("zeros",), dtype)
        self.conv_blocks = [ConvBlock(c, cond, dtype=dtype) for _ in range(cfg.align_levels)]
        self.align_blocks = [AlignBlock(c, dtype=dtype) for _ in range(cfg.align_levels)]
        if cfg.use_burst_scan:
            self.mix_pre = [
                BurstScanBlock(
                    c, cfg.state_dim, cfg.attn_reduction,
                    kernel=cfg.scan_kernel, chunk=cfg.scan_chunk, threads=cfg.scan_threads,
                    dtype=dtype,
                )
                for _ in range(cfg.align_levels)
            ]
            self.mix_post = [
                BurstScanBlock(
                    c, cfg.state_dim, cfg.attn_reduction,
                    kernel=cfg.scan_kernel, chunk=cfg.scan_chunk, threads=cfg.scan_threads,
                    dtype=dtype,
                )
                for _ in range(cfg.align_levels)
            ]
        else:
            self.mix_pre = []
            self.mix_post = []
        self.levels = cfg.align_levels

    def __call__(self, packed: Tensor, v_cc: Tensor | None) -> Tensor:
        x = ops.conv2d(packed, self.shallow_w, self.shallow_b, padding=1)
        for i in range(self.levels):
            if self.mix_pre:
                x = self.mix_pre[i](x, v_cc)
            x = self.conv_blocks[i](x, v_cc)
            if self.mix_post:
                x = self.mix_post[i](x, v_cc)
            x = self.align_blocks[i](x)
        return x


class DenoiseStage(Module):
    """Temporal fusion plus a U-shaped encoder/bottleneck/decoder."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        c = cfg.channels
        cond = cfg.cond_dim if cfg.use_conditioning else None
        scales = cfg.num_scales
        self.num_scales = scales
        self.fuse_w = Parameter((c, cfg.frames * c, 1, 1), ("fan_in", cfg.frames * c), dtype)
        self.fuse_b = Parameter((c,), ("zeros",), dtype)
        per_enc = cfg.enc_blocks // scales
        per_dec = cfg.dec_blocks // scales
        self.enc = [
            [NafBlock(c * 2**s, cond, dtype=dtype) for _ in range(per_enc)]
            for s in range(scales)
        ]
        self.down_w = []
        self.down_b = []
        for s in range(scales):
            w = Parameter((c * 2 ** (s + 1), c * 2**s, 2, 2), ("fan_in", c * 2**s * 4), dtype)
            b = Parameter((c * 2 ** (s + 1),), ("zeros",), dtype)
            self.down_w.append(w)
            self.down_b.append(b)
        self.mid = [NafBlock(c * 2**scales, cond, dtype=dtype) for _ in range(cfg.bottleneck_blocks)]
        self.up_w = []
        self.up_b = []
        for s in range(scales - 1, -1, -1):
            w = Parameter((c * 2**s, c * 2 ** (s + 1), 1, 1), ("fan_in", c * 2 ** (s + 1)), dtype)
            b = Parameter((c * 2**s,), ("zeros",), dtype)
            self.up_w.append(w)
            self.up_b.append(b)
        self.dec = [
            [NafBlock(c * 2**s, cond, dtype=dtype) for _ in range(per_dec)]
            for s in range(scales - 1, -1, -1)
        ]
        self.out_w = Parameter((4, c, 3, 3), ("zeros",), dtype)
        self.out_b = Parameter((4,), ("zeros",), dtype)

    def __call__(self, aligned: Tensor, base_packed: Tensor, v_cc: Tensor | None) -> Tensor:
        t, c, h, w = aligned.shape
        x = ops.reshape(aligned, (1, t * c, h, w))
        x = ops.conv2d(x, self.fuse_w, self.fuse_b)
        skips = []
        for s in range(self.num_scales):
            for block in self.enc[s]:
                x = block(x, v_cc)
            skips.append(x)
            x = ops.conv2d(x, self.down_w[s], self.down_b[s], stride=2)
        for block in self.mid:
            x = block(x, v_cc)
        for i, s in enumerate(range(self.num_scales - 1, -1, -1)):
            _, _, hh, ww = x.shape
            x = ops.bilinear_resize(x, hh * 2, ww * 2)
            x = ops.conv2d(x, self.up_w[i], self.up_b[i])
            x = ops.add(x, skips[s])
            for block in self.dec[i]:
                x = block(x, v_cc)
        residual = ops.conv2d(x, self.out_w, self.out_b, padding=1)
        return ops.add(residual, ops.reshape(base_packed, (1, 4) + base_packed.shape[1:]))


class BurstDenoiser(Module):
    """End-to-end restoration of the base frame of a noisy burst."""

    def __init__(self, cfg: ModelConfig, dtype=np.float32):
        cfg.validate()
        self.cfg = cfg
        self.dtype = np.dtype(dtype)
        if cfg.use_conditioning:
            self.embedding = ConditionEmbedding(cfg.vocab, cfg.cond_dim, cfg.factor_dim, dtype)
        else:
            self.embedding = None
        self.align = AlignmentStage(cfg, dtype)
        self.denoise = DenoiseStage(cfg, dtype)

    def _check_input(self, frames: np.ndarray) -> np.ndarray:
        frames = np.asarray(frames)
        if frames.ndim == 4 and frames.shape[1] == 1:
            frames = frames[:, 0]
        if frames.ndim != 3:
            raise ValueError(f"burst input must be [T, H, W], got shape {frames.shape}")
        t, h, w = frames.shape
        if t != self.cfg.frames:
            raise ValueError(f"model expects {self.cfg.frames} frames per burst, got {t}")
        if h % 2 or w % 2:
            raise ValueError(f"frame dimensions must be even, got {(h, w)}")
        need = self.cfg.min_input_size()
        if h < need or w < need:
            raise ValueError(
                f"frames of size {(h, w)} are too small for {self.cfg.num_scales} scales; "
                f"need at least {need} pixels per side"
            )
        return frames

    def embed(self, cond: CaptureCondition) -> Tensor | None:
        # Vocabulary membership is enforced even for the unconditioned
        # variant, so all variants accept exactly the same data.
        self.cfg.vocab.indices(cond)
        if self.embedding is None:
            return None
        return self.embedding(cond)

    def __call__(self, frames, cond: CaptureCondition) -> Tensor:
        """Restore the base frame; returns an unclamped [H, W] tensor."""
        if isinstance(frames, Tensor):
            data = self._check_input(frames.data)
            frames_t = frames if data.shape == frames.shape else Tensor(data)
        else:
            frames_t = Tensor(self._check_input(frames), dtype=self.dtype)
        v_cc = self.embed(cond)
        packed = bayer_pack_t(frames_t)
        features = self.align(packed, v_cc)
        t = packed.shape[0]
        base_packed = ops.reshape(ops.narrow(packed, 0, t - 1, 1), packed.shape[1:])
        out = self.denoise(features, base_packed, v_cc)
        return bayer_unpack_t(ops.reshape(out, out.shape[1:]))

    def restore(self, frames: np.ndarray, cond: CaptureCondition) -> np.ndarray:
        """Inference entry point: no tape, output clamped to [0, 1]."""
        with no_grad():
            out = self(frames, cond)
        return np.clip(out.data, 0.0, 1.0)


def build_model(cfg: ModelConfig, seed: int = 0, dtype=np.float32) -> BurstDenoiser:
    """Construct and deterministically initialize a model."""
    model = BurstDenoiser(cfg, dtype)
    model.initialize(seed)
    return model


def count_parameters(cfg: ModelConfig) -> int:
    """Total trainable scalars for a config; deterministic in the config."""
    return BurstDenoiser(cfg).count_parameters()


def config_hash(cfg: ModelConfig) -> str:
    blob = json.dumps(cfg.to_json(), sort_keys=True).encode("utf-8")
    return hashlib.sha256(blob).hexdigest()


def save_checkpoint(
    directory: str | Path,
    model: BurstDenoiser,
    iteration: int,
    optimizer_state: dict | None = None,
    extra: dict | None = None,
) -> None:
    """Write a checkpoint: JSON manifest plus one float32 blob per tensor."""
    directory = Path(directory)
    (directory / "params").mkdir(parents=True, exist_ok=True)
    params = model.named_parameters()
    index = {}
    for i, (name, p) in enumerate(sorted(params.items())):
        fname = f"params/p{i:04d}.f32"
        write_array(directory / fname, p.data)
        index[name] = {"file": fname, "shape": list(p.shape)}
    manifest = {
        "format": "rawburst-checkpoint-v1",
        "config": model.cfg.to_json(),
        "config_hash": config_hash(model.cfg),
        "iteration": int(iteration),
        "parameters": index,
    }
    if optimizer_state is not None:
        (directory / "optim").mkdir(exist_ok=True)
        opt_index = {}
        for i, (name, arrays) in enumerate(sorted(optimizer_state["moments"].items())):
            m_file = f"optim/m{i:04d}.f32"
            v_file = f"optim/v{i:04d}.f32"
            write_array(directory / m_file, arrays[0])
            write_array(directory / v_file, arrays[1])
            opt_index[name] = {"m": m_file, "v": v_file}
        manifest["optimizer"] = {"step": optimizer_state["step"], "moments": opt_index}
    if extra:
        manifest["extra"] = extra
    (directory / CHECKPOINT_MANIFEST).write_text(
        json.dumps(manifest, sort_keys=True, indent=1) + "\n"
    )


def load_checkpoint(directory: str | Path) -> tuple[BurstDenoiser, dict]:
    """Rebuild a model from a checkpoint; returns (model, manifest)."""
    directory = Path(directory)
    path = directory / CHECKPOINT_MANIFEST
    if not path.exists():
        raise FileNotFoundError(f"missing checkpoint manifest {path}")
    try:
        manifest = json.loads(path.read_text())
    except json.JSONDecodeError as exc:
        raise ValueError(f"malformed checkpoint manifest {path}: {exc}") from exc
    if manifest.get("format") != "rawburst-checkpoint-v1":
        raise ValueError(f"unrecognized checkpoint format in {path}")
    cfg = ModelConfig.from_json(manifest["config"])
    model = BurstDenoiser(cfg)
    params = model.named_parameters()
    index = manifest["parameters"]
    missing = sorted(set(params) - set(index))
    surplus = sorted(set(index) - set(params))
    if missing or surplus:
        raise ValueError(
            f"checkpoint parameters do not match the model: missing {missing[:3]}..., "
            f"unexpected {surplus[:3]}..."
            if len(missing) + len(surplus) > 6
            else f"checkpoint parameters do not match the model: missing {missing}, "
            f"unexpected {surplus}"
        )
    for name, entry in index.items():
        arr = read_array(directory / entry["file"])
        if tuple(arr.shape) != tuple(params[name].shape):
            raise ValueError(
                f"checkpoint tensor {name} has shape {arr.shape}, model expects "
                f"{tuple(params[name].shape)}"
            )
        params[name].data[...] = arr
    return model, manifest


def load_optimizer_state(directory: str | Path, manifest: dict) -> dict | None:
    """Restore Adam moments saved next to a checkpoint, if present."""
    if "optimizer" not in manifest:
        return None
    directory = Path(directory)
    opt = manifest["optimizer"]
    moments = {}
    for name, entry in opt["moments"].items():
        moments[name] = (
            read_array(directory / entry["m"]),
            read_array(directory / entry["v"]),
        )
    return {"step": int(opt["step"]), "moments": moments}
