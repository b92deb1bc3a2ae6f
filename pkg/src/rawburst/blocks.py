"""Network building blocks.

All blocks map [B, C, H, W] feature tensors to the same shape. Residual
branches are scaled by learnable per-channel factors initialized to zero,
so freshly built blocks are exact identities and training opens them up
gradually. Normalization sites take the fused condition vector when the
model is conditioned and fall back to a static affine otherwise.
"""

from __future__ import annotations

import numpy as np

from . import ops
from .conditioning import AdaptiveLayerNorm, StaticLayerNorm
from .module import Module, Parameter
from .scan import DEFAULT_CHUNK, selective_scan
from .tensor import Tensor


def _make_norm(channels: int, cond_dim: int | None, dtype):
    if cond_dim is None:
        return StaticLayerNorm(channels, dtype=dtype)
    return AdaptiveLayerNorm(channels, cond_dim, dtype=dtype)


def _conv_params(c_out: int, c_in: int, k: int, dtype, init: str = "fan_in"):
    fan = c_in * k * k
    if init == "zeros":
        w = Parameter((c_out, c_in, k, k), ("zeros",), dtype)
    else:
        w = Parameter((c_out, c_in, k, k), ("fan_in", fan), dtype)
    b = Parameter((c_out,), ("zeros",), dtype)
    return w, b


class ChannelAttention(Module):
    """Gate channels by pooled context (average and max paths, shared MLP)."""

    def __init__(self, channels: int, reduction: int = 4, dtype=np.float32):
        if channels % reduction:
            raise ValueError(f"channels {channels} not divisible by reduction {reduction}")
        hidden = channels // reduction
        self.w1 = Parameter((hidden, channels), ("fan_in", channels), dtype)
        self.b1 = Parameter((hidden,), ("zeros",), dtype)
        self.w2 = Parameter((channels, hidden), ("fan_in", hidden), dtype)
        self.b2 = Parameter((channels,), ("zeros",), dtype)

    def _mlp(self, pooled: Tensor) -> Tensor:
        return ops.linear(ops.relu(ops.linear(pooled, self.w1, self.b1)), self.w2, self.b2)

    def __call__(self, x: Tensor) -> Tensor:
        avg = self._mlp(ops.global_avg_pool(x))
        mx = self._mlp(ops.global_max_pool(x))
        gate = ops.sigmoid(ops.add(avg, mx))  # [B, C]
        b, c = gate.shape
        return ops.mul(x, ops.reshape(gate, (b, c, 1, 1)))


class ChannelLayerNorm(Module):
    """Per-position normalization over the channel axis with affine."""

    def __init__(self, channels: int, eps: float = 1e-5, dtype=np.float32):
        self.eps = eps
        self.gamma = Parameter((channels,), ("ones",), dtype)
        self.beta = Parameter((channels,), ("zeros",), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        mu = ops.mean(x, axis=1, keepdims=True)
        centered = ops.sub(x, mu)
        var = ops.mean(ops.mul(centered, centered), axis=1, keepdims=True)
        normalized = ops.mul(centered, ops.power(ops.add(var, self.eps), -0.5))
        return ops.add(ops.mul(normalized, self.gamma), self.beta)


class BurstScanModule(Module):
    """Gated token-mixing over the flattened burst.

    The input map is linearly expanded into a scanned branch and a gate
    branch. The scanned branch goes through a depthwise conv and SiLU,
    is flattened to the burst token order, run through the selective
    scan, folded back, and normalized; the gate branch modulates it
    multiplicatively before the output projection.
    """

    def __init__(
        self,
        channels: int,
        state_dim: int = 8,
        kernel: str = "parallel",
        chunk: int = DEFAULT_CHUNK,
        threads: int = 1,
        dtype=np.float32,
    ):
        d = channels
        self.channels = d
        self.state_dim = state_dim
        self.kernel = kernel
        self.chunk = chunk
        self.threads = threads
        self.in_w, self.in_b = _conv_params(2 * d, d, 1, dtype)
        self.dw_w, self.dw_b = _conv_params(d, 1, 3, dtype)
        log_a0 = np.log(np.tile(np.arange(1, state_dim + 1, dtype=np.float64), (d, 1)))
        self.log_a = Parameter((d, state_dim), ("const", log_a0), dtype)
        self.skip = Parameter((d,), ("ones",), dtype)
        self.delta_w = Parameter((d, d), ("fan_in", d), dtype)
        self.delta_b = Parameter((d,), ("step_bias", 1e-3, 1e-1), dtype)
        self.b_w = Parameter((state_dim, d), ("fan_in", d), dtype)
        self.b_b = Parameter((state_dim,), ("zeros",), dtype)
        self.c_w = Parameter((state_dim, d), ("fan_in", d), dtype)
        self.c_b = Parameter((state_dim,), ("zeros",), dtype)
        self.norm = ChannelLayerNorm(d, dtype=dtype)
        self.out_w, self.out_b = _conv_params(d, d, 1, dtype)

    def __call__(self, x: Tensor, v_cc: Tensor | None = None) -> Tensor:
        # The condition vector is accepted for interface uniformity; the
        # internal norm is a plain channel LayerNorm, so it goes unused.
        t, d, h, w = x.shape
        xz = ops.conv2d(x, self.in_w, self.in_b)
        branch, gate = ops.split(xz, 1, 2)
        branch = ops.silu(ops.conv2d(branch, self.dw_w, self.dw_b, padding=1, groups=d))
        # Flatten to tokens: frame index outermost, then rows, then columns.
        tokens = ops.reshape(ops.transpose(branch, (0, 2, 3, 1)), (t * h * w, d))
        delta = ops.softplus(ops.linear(tokens, self.delta_w, self.delta_b))
        b_coef = ops.linear(tokens, self.b_w, self.b_b)
        c_coef = ops.linear(tokens, self.c_w, self.c_b)
        a = ops.neg(ops.exp(self.log_a))
        y = selective_scan(
            tokens, delta, a, b_coef, c_coef, self.skip,
            kernel=self.kernel, chunk=self.chunk, threads=self.threads,
        )
        y = ops.transpose(ops.reshape(y, (t, h, w, d)), (0, 3, 1, 2))
        y = self.norm(y)
        gated = ops.mul(y, ops.silu(gate))
        return ops.conv2d(gated, self.out_w, self.out_b)


class BurstScanBlock(Module):
    """Scan module plus channel attention, each residual with zero scales."""

    def __init__(
        self,
        channels: int,
        state_dim: int = 8,
        reduction: int = 4,
        kernel: str = "parallel",
        chunk: int = DEFAULT_CHUNK,
        threads: int = 1,
        dtype=np.float32,
    ):
        self.mixer = BurstScanModule(
            channels, state_dim, kernel=kernel, chunk=chunk, threads=threads, dtype=dtype
        )
        self.attention = ChannelAttention(channels, reduction, dtype=dtype)
        self.scale1 = Parameter((channels,), ("zeros",), dtype)
        self.scale2 = Parameter((channels,), ("zeros",), dtype)

    def __call__(self, x: Tensor, v_cc: Tensor | None = None) -> Tensor:
        x = ops.add(x, ops.mul(self.mixer(x, v_cc), self.scale1))
        x = ops.add(x, ops.mul(self.attention(x), self.scale2))
        return x


def simple_gate(x: Tensor) -> Tensor:
    """Split channels in half and multiply the halves."""
    a, b = ops.split(x, 1, 2)
    return ops.mul(a, b)


class SimplifiedChannelAttention(Module):
    """Scale channels by a linear map of their spatial mean (no squashing)."""

    def __init__(self, channels: int, dtype=np.float32):
        self.w = Parameter((channels, channels), ("fan_in", channels), dtype)
        self.b = Parameter((channels,), ("zeros",), dtype)

    def __call__(self, x: Tensor) -> Tensor:
        pooled = ops.linear(ops.global_avg_pool(x), self.w, self.b)
        b, c = pooled.shape
        return ops.mul(x, ops.reshape(pooled, (b, c, 1, 1)))


class NafBlock(Module):
    """Gated convolutional block: conv sub-block plus channel MLP sub-block.

    Sub-block one: norm, 1x1 expand (x2), 3x3 depthwise, simple gate,
    simplified channel attention, 1x1 project. Sub-block two: norm,
    1x1 expand, simple gate, 1x1 project. Both residuals carry
    zero-initialized per-channel scales.
    """

    def __init__(self, channels: int, cond_dim: int | None, expand: int = 2, dtype=np.float32):
        c = channels
        wide = expand * c
        self.norm1 = _make_norm(c, cond_dim, dtype)
        self.conv1_w, self.conv1_b = _conv_params(wide, c, 1, dtype)
        self.dw_w, self.dw_b = _conv_params(wide, 1, 3, dtype)
        self.sca = SimplifiedChannelAttention(wide // 2, dtype=dtype)
        self.conv2_w, self.conv2_b = _conv_params(c, wide // 2, 1, dtype)
        self.norm2 = _make_norm(c, cond_dim, dtype)
        self.conv3_w, self.conv3_b = _conv_params(wide, c, 1, dtype)
        self.conv4_w, self.conv4_b = _conv_params(c, wide // 2, 1, dtype)
        self.scale1 = Parameter((c,), ("zeros",), dtype)
        self.scale2 = Parameter((c,), ("zeros",), dtype)

    def __call__(self, x: Tensor, v_cc: Tensor | None) -> Tensor:
        wide = self.dw_w.shape[0]
        h = self.norm1(x, v_cc)
        h = ops.conv2d(h, self.conv1_w, self.conv1_b)
        h = ops.conv2d(h, self.dw_w, self.dw_b, padding=1, groups=wide)
        h = simple_gate(h)
        h = self.sca(h)
        h = ops.conv2d(h, self.conv2_w, self.conv2_b)
        x = ops.add(x, ops.mul(h, self.scale1))
        h = self.norm2(x, v_cc)
        h = ops.conv2d(h, self.conv3_w, self.conv3_b)
        h = simple_gate(h)
        h = ops.conv2d(h, self.conv4_w, self.conv4_b)
        return ops.add(x, ops.mul(h, self.scale2))


class ConvBlock(Module):
    """Norm, two 3x3 convs with SiLU between, residual add."""

    def __init__(self, channels: int, cond_dim: int | None, dtype=np.float32):
        self.norm = _make_norm(channels, cond_dim, dtype)
        self.conv1_w, self.conv1_b = _conv_params(channels, channels, 3, dtype)
        self.conv2_w, self.conv2_b = _conv_params(channels, channels, 3, dtype)
        self.scale = Parameter((channels,), ("zeros",), dtype)

    def __call__(self, x: Tensor, v_cc: Tensor | None) -> Tensor:
        h = self.norm(x, v_cc)
        h = ops.silu(ops.conv2d(h, self.conv1_w, self.conv1_b, padding=1))
        h = ops.conv2d(h, self.conv2_w, self.conv2_b, padding=1)
        return ops.add(x, ops.mul(h, self.scale))


class AlignBlock(Module):
    """Warp every frame's features toward the final (base) frame.

    A small conv head predicts per-pixel (row, column) offsets from the
    concatenation of each frame's features with the base frame's; the
    predictor's last conv starts at zero, so the initial warp is the
    identity. The base frame bypasses warping entirely.
    """

    def __init__(self, channels: int, dtype=np.float32):
        c = channels
        self.head_w, self.head_b = _conv_params(c, 2 * c, 3, dtype)
        self.off_w, self.off_b = _conv_params(2, c, 3, dtype, init="zeros")

    def __call__(self, x: Tensor) -> Tensor:
        t = x.shape[0]
        if t == 1:
            return x
        others = ops.narrow(x, 0, 0, t - 1)
        base = ops.narrow(x, 0, t - 1, 1)
        base_rep = ops.concat([base] * (t - 1), axis=0)
        paired = ops.concat([others, base_rep], axis=1)
        h = ops.silu(ops.conv2d(paired, self.head_w, self.head_b, padding=1))
        offsets = ops.conv2d(h, self.off_w, self.off_b, padding=1)
        warped = ops.bilinear_warp(others, offsets)
        return ops.concat([warped, base], axis=0)
