"""Image quality metrics and the training loss.

All metrics operate on single-channel mosaicked frames in linear space.
SSIM uses the standard 11x11 Gaussian window (sigma 1.5) with stability
constants K1 = 0.01 and K2 = 0.03 over the configured data range. The
multi-scale variant averages the contrast-structure term per scale,
downsampling by 2x2 mean pooling between scales, and uses the full SSIM
map at the final scale, so a single scale reproduces plain SSIM exactly.

The differentiable forms take tensors and stay on the tape; the float
wrappers accept arrays. The training loss is L1 plus a weighted
multi-scale SSIM complement, evaluated on unclamped predictions.
"""

from __future__ import annotations

from typing import NamedTuple

import numpy as np

from . import ops
from .tensor import Tensor

SSIM_WINDOW = 11
SSIM_SIGMA = 1.5
SSIM_K1 = 0.01
SSIM_K2 = 0.03
# Standard five-scale weights; truncated and renormalized for fewer scales.
MS_SSIM_WEIGHTS = (0.0448, 0.2856, 0.3001, 0.2363, 0.1333)


class PsnrResult(NamedTuple):
    db: float
    capped: bool


def psnr(pred: np.ndarray, target: np.ndarray, data_range: float = 1.0,
         cap_db: float = 100.0) -> PsnrResult:
    """Peak signal-to-noise ratio in dB; exact matches report the cap."""
    pred = np.asarray(pred, dtype=np.float64)
    target = np.asarray(target, dtype=np.float64)
    if pred.shape != target.shape:
        raise ValueError(f"psnr shapes differ: {pred.shape} vs {target.shape}")
    mse = float(np.mean((pred - target) ** 2))
    if mse == 0.0:
        return PsnrResult(cap_db, True)
    value = 10.0 * np.log10(data_range**2 / mse)
    if value >= cap_db:
        return PsnrResult(cap_db, True)
    return PsnrResult(float(value), False)


def _gaussian_window(size: int, sigma: float, dtype) -> np.ndarray:
    half = (size - 1) / 2.0
    coords = np.arange(size, dtype=np.float64) - half
    g = np.exp(-(coords**2) / (2.0 * sigma**2))
    kernel = np.outer(g, g)
    kernel /= kernel.sum()
    return kernel.astype(dtype)[None, None]


def _as_image_tensor(x) -> Tensor:
    t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
    if t.ndim == 2:
        t = ops.reshape(t, (1, 1) + t.shape)
    elif t.ndim != 4 or t.shape[1] != 1:
        raise ValueError(f"metrics expect [H, W] or [B, 1, H, W] images, got {t.shape}")
    return t


def _ssim_maps(x: Tensor, y: Tensor, data_range: float, win_size: int):
    """Luminance and contrast-structure maps over valid window positions."""
    if x.shape != y.shape:
        raise ValueError(f"ssim shapes differ: {x.shape} vs {y.shape}")
    h, w = x.shape[2], x.shape[3]
    if win_size % 2 == 0 or win_size < 3:
        raise ValueError(f"ssim window must be odd and >= 3, got {win_size}")
    if h < win_size or w < win_size:
        raise ValueError(
            f"image {h}x{w} is smaller than the {win_size}x{win_size} ssim window"
        )
    window = Tensor(_gaussian_window(win_size, SSIM_SIGMA, x.dtype))
    c1 = (SSIM_K1 * data_range) ** 2
    c2 = (SSIM_K2 * data_range) ** 2

    mu_x = ops.conv2d(x, window)
    mu_y = ops.conv2d(y, window)
    xx = ops.conv2d(ops.mul(x, x), window)
    yy = ops.conv2d(ops.mul(y, y), window)
    xy = ops.conv2d(ops.mul(x, y), window)
    mu_xx = ops.mul(mu_x, mu_x)
    mu_yy = ops.mul(mu_y, mu_y)
    mu_xy = ops.mul(mu_x, mu_y)
    var_x = ops.sub(xx, mu_xx)
    var_y = ops.sub(yy, mu_yy)
    cov = ops.sub(xy, mu_xy)

    lum = ops.div(
        ops.add(ops.mul(mu_xy, 2.0), c1),
        ops.add(ops.add(mu_xx, mu_yy), c1),
    )
    cs = ops.div(
        ops.add(ops.mul(cov, 2.0), c2),
        ops.add(ops.add(var_x, var_y), c2),
    )
    return lum, cs


def ssim(pred, target, data_range: float = 1.0, win_size: int = SSIM_WINDOW):
    """Mean structural similarity; returns a Tensor for tensor inputs."""
    tensor_in = isinstance(pred, Tensor) or isinstance(target, Tensor)
    x = _as_image_tensor(pred)
    y = _as_image_tensor(target)
    lum, cs = _ssim_maps(x, y, data_range, win_size)
    value = ops.mean(ops.mul(lum, cs))
    return value if tensor_in else float(value.data)


def _downsample2(x: Tensor) -> Tensor:
    """2x2 mean pooling; odd trailing rows/columns are dropped."""
    b, c, h, w = x.shape
    h2, w2 = h // 2, w // 2
    if h % 2 or w % 2:
        x = ops.narrow(ops.narrow(x, 2, 0, h2 * 2), 3, 0, w2 * 2)
    x = ops.reshape(x, (b, c, h2, 2, w2, 2))
    return ops.mul(
        ops.reduce_sum(ops.reduce_sum(x, axis=5), axis=3), 0.25
    )


def ms_ssim_scales(height: int, width: int, win_size: int = SSIM_WINDOW,
                   max_scales: int = 5) -> int:
    """Largest usable scale count: every scale must still fit the window."""
    scales = 0
    h, w = height, width
    while scales < max_scales and min(h, w) >= win_size:
        scales += 1
        h, w = h // 2, w // 2
    return scales


def ms_ssim(pred, target, scales: int = 5, data_range: float = 1.0,
            win_size: int = SSIM_WINDOW):
    """Multi-scale SSIM; ``scales = 1`` equals :func:`ssim` exactly."""
    tensor_in = isinstance(pred, Tensor) or isinstance(target, Tensor)
    x = _as_image_tensor(pred)
    y = _as_image_tensor(target)
    if not 1 <= scales <= len(MS_SSIM_WEIGHTS):
        raise ValueError(f"scales must be in [1, {len(MS_SSIM_WEIGHTS)}], got {scales}")
    usable = ms_ssim_scales(x.shape[2], x.shape[3], win_size)
    if scales > usable:
        raise ValueError(
            f"image {x.shape[2]}x{x.shape[3]} supports at most {usable} scales with a "
            f"{win_size}px window; lower the requested scale count ({scales})"
        )
    weights = np.asarray(MS_SSIM_WEIGHTS[:scales], dtype=np.float64)
    weights = weights / weights.sum()

    log_terms = []
    for level in range(scales):
        lum, cs = _ssim_maps(x, y, data_range, win_size)
        if level < scales - 1:
            term = ops.mean(cs)
            x = _downsample2(x)
            y = _downsample2(y)
        else:
            term = ops.mean(ops.mul(lum, cs))
        # Terms are clamped away from zero so the geometric mean stays
        # finite even on pathological inputs.
        log_terms.append(ops.mul(ops.log(ops.clamp(term, 1e-8, np.inf)), float(weights[level])))
    total = log_terms[0]
    for term in log_terms[1:]:
        total = ops.add(total, term)
    value = ops.exp(total)
    return value if tensor_in else float(value.data)


def l1_loss(pred: Tensor, target: Tensor) -> Tensor:
    """Mean absolute error."""
    pred = pred if isinstance(pred, Tensor) else Tensor(np.asarray(pred))
    target = target if isinstance(target, Tensor) else Tensor(np.asarray(target))
    if pred.shape != target.shape:
        raise ValueError(f"l1 shapes differ: {pred.shape} vs {target.shape}")
    return ops.mean(ops.absolute(ops.sub(pred, target)))


def combined_loss(pred: Tensor, target: Tensor, ssim_weight: float = 1.0,
                  data_range: float = 1.0, scales: int | None = None) -> Tensor:
    """L1 + ssim_weight * (1 - ms_ssim), on unclamped predictions.

    The window shrinks and the scale count adapts for small patches so the
    loss is usable on any trainable patch size.
    """
    base = l1_loss(pred, target)
    if ssim_weight == 0.0:
        return base
    x = _as_image_tensor(pred)
    h, w = x.shape[2], x.shape[3]
    win = min(SSIM_WINDOW, min(h, w))
    if win % 2 == 0:
        win -= 1
    if win < 3:
        raise ValueError(f"patch {h}x{w} is too small for a structural term")
    if scales is None:
        # Auto scale count: one scale per halving of min(H, W) down to 8
        # pixels, capped at the standard 5; at least 1 so tiny patches
        # still carry a single-scale structural term.
        scales = max(1, min(len(MS_SSIM_WEIGHTS), int(np.log2(min(h, w) / 8))))
        scales = min(scales, ms_ssim_scales(h, w, win))
    structural = ms_ssim(_as_image_tensor(pred), _as_image_tensor(target),
                         scales=scales, data_range=data_range, win_size=win)
    return ops.add(base, ops.mul(ops.sub(1.0, structural), ssim_weight))
