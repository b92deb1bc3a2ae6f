"""Differentiable array operations over :class:`rawburst.tensor.Tensor`.

Broadcasting is deliberately restricted to the cases the model needs:
scalars against anything, same-rank shapes with size-1 axes, and 1-D
``[C]`` vectors against 4-D ``[B, C, H, W]`` maps (treated as
``[1, C, 1, 1]``). In float32 mode, reductions and the inner sums of
``linear`` and ``conv2d`` accumulate in float64 before casting back.
"""

from __future__ import annotations

import numpy as np

from .tensor import Tensor, make_op_output

_ACC_DTYPE = np.float64


def _as_tensor(x, like: Tensor | None = None) -> Tensor:
    if isinstance(x, Tensor):
        return x
    dtype = like.dtype if like is not None else None
    return Tensor(np.asarray(x), dtype=dtype)


def _acc(x: np.ndarray) -> np.dtype:
    """Accumulator dtype: float64 even when x is float32."""
    return _ACC_DTYPE if x.dtype == np.float32 else x.dtype


def _aligned_view(a: np.ndarray, other_ndim: int) -> np.ndarray:
    # [C] against a 4-D map is read as [1, C, 1, 1].
    if a.ndim == 1 and other_ndim == 4:
        return a.reshape(1, -1, 1, 1)
    return a


def _check_broadcast(a: np.ndarray, b: np.ndarray) -> None:
    if a.ndim == 0 or b.ndim == 0:
        return
    if a.ndim != b.ndim:
        raise ValueError(f"cannot broadcast shapes {a.shape} and {b.shape}")
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise ValueError(f"cannot broadcast shapes {a.shape} and {b.shape}")


def _unbroadcast(g: np.ndarray, orig_shape: tuple[int, ...]) -> np.ndarray:
    """Sum ``g`` down to ``orig_shape`` (inverse of broadcasting)."""
    if g.shape == orig_shape:
        return g
    dtype = g.dtype
    if orig_shape == ():
        return np.asarray(g.sum(dtype=_acc(g)), dtype=dtype)
    # Align as in the forward pass, then collapse expanded axes.
    aligned = orig_shape
    if len(orig_shape) == 1 and g.ndim == 4:
        aligned = (1, orig_shape[0], 1, 1)
    if len(aligned) != g.ndim:
        raise ValueError(f"cannot reduce gradient of shape {g.shape} to {orig_shape}")
    axes = tuple(i for i, (da, dg) in enumerate(zip(aligned, g.shape)) if da == 1 and dg != 1)
    if axes:
        g = g.sum(axis=axes, keepdims=True, dtype=_acc(g)).astype(dtype)
    return g.reshape(orig_shape)


def _binary(a, b, fwd, bwd_a, bwd_b) -> Tensor:
    a = _as_tensor(a)
    b = _as_tensor(b, like=a)
    av = _aligned_view(a.data, b.ndim)
    bv = _aligned_view(b.data, a.ndim)
    _check_broadcast(av, bv)
    out = fwd(av, bv)

    def backward(g):
        ga = _unbroadcast(bwd_a(g, av, bv), a.shape) if a.requires_grad else None
        gb = _unbroadcast(bwd_b(g, av, bv), b.shape) if b.requires_grad else None
        return ga, gb

    return make_op_output(out, (a, b), backward)


def add(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x + y, lambda g, x, y: g, lambda g, x, y: g)


def sub(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x - y, lambda g, x, y: g, lambda g, x, y: -g)


def mul(a, b) -> Tensor:
    return _binary(a, b, lambda x, y: x * y, lambda g, x, y: g * y, lambda g, x, y: g * x)


def div(a, b) -> Tensor:
    return _binary(
        a,
        b,
        lambda x, y: x / y,
        lambda g, x, y: g / y,
        lambda g, x, y: -g * x / (y * y),
    )


def neg(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    return make_op_output(-a.data, (a,), lambda g: (-g,))


def exp(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    out = np.exp(a.data)
    return make_op_output(out, (a,), lambda g: (g * out,))


def log(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    if np.any(a.data <= 0):
        raise ValueError("log requires strictly positive input")
    return make_op_output(np.log(a.data), (a,), lambda g: (g / a.data,))


def power(a: Tensor, exponent: float) -> Tensor:
    """Elementwise ``a ** exponent`` for a fixed scalar exponent."""
    a = _as_tensor(a)
    exponent = float(exponent)
    out = a.data**exponent

    def backward(g):
        return (g * exponent * a.data ** (exponent - 1.0),)

    return make_op_output(out, (a,), backward)


def sqrt(a: Tensor) -> Tensor:
    return power(a, 0.5)


def _sigmoid_np(x: np.ndarray) -> np.ndarray:
    # Stable in both tails.
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def sigmoid(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    s = _sigmoid_np(a.data)
    return make_op_output(s, (a,), lambda g: (g * s * (1.0 - s),))


def silu(a: Tensor) -> Tensor:
    """x * sigmoid(x)."""
    a = _as_tensor(a)
    s = _sigmoid_np(a.data)
    out = a.data * s

    def backward(g):
        return (g * (s + a.data * s * (1.0 - s)),)

    return make_op_output(out, (a,), backward)


def relu(a: Tensor) -> Tensor:
    a = _as_tensor(a)
    mask = a.data > 0
    return make_op_output(np.where(mask, a.data, 0.0), (a,), lambda g: (g * mask,))


def softplus(a: Tensor) -> Tensor:
    """log(1 + exp(x)), computed stably; derivative is sigmoid(x)."""
    a = _as_tensor(a)
    out = softplus_np(a.data)

    def backward(g):
        return (g * _sigmoid_np(a.data),)

    return make_op_output(out, (a,), backward)


def softplus_np(x: np.ndarray) -> np.ndarray:
    return np.maximum(x, 0.0) + np.log1p(np.exp(-np.abs(x)))


def absolute(a: Tensor) -> Tensor:
    """|x|; the subgradient at 0 is taken as 0."""
    a = _as_tensor(a)
    return make_op_output(np.abs(a.data), (a,), lambda g: (g * np.sign(a.data),))


def clamp(a: Tensor, lo: float, hi: float) -> Tensor:
    """Clamp to [lo, hi]; gradient passes only through the interior."""
    a = _as_tensor(a)
    if lo > hi:
        raise ValueError(f"clamp bounds out of order: {lo} > {hi}")
    mask = (a.data >= lo) & (a.data <= hi)
    return make_op_output(np.clip(a.data, lo, hi), (a,), lambda g: (g * mask,))


def reduce_sum(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    out = a.data.sum(axis=axis, keepdims=keepdims, dtype=_acc(a.data)).astype(a.dtype)

    def backward(g):
        if axis is None:
            return (np.broadcast_to(g, a.shape).astype(a.dtype, copy=True),)
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        gx = g
        if not keepdims:
            for ax in sorted(ax % a.ndim for ax in axes):
                gx = np.expand_dims(gx, ax)
        return (np.broadcast_to(gx, a.shape).astype(a.dtype, copy=True),)

    return make_op_output(out, (a,), backward)


def mean(a: Tensor, axis=None, keepdims: bool = False) -> Tensor:
    a = _as_tensor(a)
    if axis is None:
        count = a.size
    else:
        axes = (axis,) if isinstance(axis, int) else tuple(axis)
        count = 1
        for ax in axes:
            count *= a.shape[ax % a.ndim]
    total = reduce_sum(a, axis=axis, keepdims=keepdims)
    return mul(total, 1.0 / count)


def global_avg_pool(a: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, C] spatial mean."""
    if _as_tensor(a).ndim != 4:
        raise ValueError(f"global_avg_pool expects a 4-D map, got shape {_as_tensor(a).shape}")
    return mean(a, axis=(2, 3))


def global_max_pool(a: Tensor) -> Tensor:
    """[B, C, H, W] -> [B, C] spatial max; gradient routes to the first max."""
    a = _as_tensor(a)
    if a.ndim != 4:
        raise ValueError(f"global_max_pool expects a 4-D map, got shape {a.shape}")
    b, c, h, w = a.shape
    flat = a.data.reshape(b, c, h * w)
    idx = flat.argmax(axis=2)
    out = np.take_along_axis(flat, idx[:, :, None], axis=2)[:, :, 0]

    def backward(g):
        gx = np.zeros((b, c, h * w), dtype=a.dtype)
        np.put_along_axis(gx, idx[:, :, None], g[:, :, None].astype(a.dtype), axis=2)
        return (gx.reshape(a.shape),)

    return make_op_output(out, (a,), backward)


def reshape(a: Tensor, shape) -> Tensor:
    a = _as_tensor(a)
    shape = tuple(shape)
    out = a.data.reshape(shape)
    return make_op_output(out, (a,), lambda g: (g.reshape(a.shape),))


def transpose(a: Tensor, axes) -> Tensor:
    a = _as_tensor(a)
    axes = tuple(axes)
    inv = np.argsort(axes)
    out = np.ascontiguousarray(a.data.transpose(axes))
    return make_op_output(out, (a,), lambda g: (np.ascontiguousarray(g.transpose(inv)),))


def concat(tensors, axis: int) -> Tensor:
    tensors = [_as_tensor(t) for t in tensors]
    if not tensors:
        raise ValueError("concat requires at least one tensor")
    out = np.concatenate([t.data for t in tensors], axis=axis)
    sizes = [t.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def backward(g):
        pieces = []
        for i in range(len(tensors)):
            sl = [slice(None)] * g.ndim
            sl[axis] = slice(offsets[i], offsets[i + 1])
            pieces.append(np.ascontiguousarray(g[tuple(sl)]))
        return tuple(pieces)

    return make_op_output(out, tensors, backward)


def narrow(a: Tensor, axis: int, start: int, length: int) -> Tensor:
    """Contiguous slice of ``length`` entries along ``axis``."""
    a = _as_tensor(a)
    if start < 0 or length < 1 or start + length > a.shape[axis]:
        raise ValueError(
            f"narrow range [{start}, {start + length}) is outside axis {axis} "
            f"of shape {a.shape}"
        )
    sl = [slice(None)] * a.ndim
    sl[axis] = slice(start, start + length)
    sl = tuple(sl)
    out = np.ascontiguousarray(a.data[sl])

    def backward(g):
        gx = np.zeros(a.shape, dtype=a.dtype)
        gx[sl] = g
        return (gx,)

    return make_op_output(out, (a,), backward)


def split(a: Tensor, axis: int, sections: int) -> list[Tensor]:
    """Split into equal sections along ``axis``."""
    a = _as_tensor(a)
    if a.shape[axis] % sections:
        raise ValueError(f"axis {axis} of size {a.shape[axis]} not divisible into {sections}")
    step = a.shape[axis] // sections
    return [narrow(a, axis, i * step, step) for i in range(sections)]


def linear(x: Tensor, weight: Tensor, bias: Tensor | None = None) -> Tensor:
    """x @ weight.T + bias over the last axis; leading axes are preserved."""
    x = _as_tensor(x)
    d_out, d_in = weight.shape
    if x.shape[-1] != d_in:
        raise ValueError(f"linear input width {x.shape[-1]} does not match weight {weight.shape}")
    if bias is not None and bias.shape != (d_out,):
        raise ValueError(f"linear bias shape {bias.shape} does not match output width {d_out}")
    lead = x.shape[:-1]
    x2 = x.data.reshape(-1, d_in)
    acc = _acc(x.data)
    y2 = (x2.astype(acc) @ weight.data.astype(acc).T).astype(x.dtype)
    if bias is not None:
        y2 = y2 + bias.data
    out = y2.reshape(lead + (d_out,))

    def backward(g):
        g2 = g.reshape(-1, d_out)
        gx = (g2.astype(acc) @ weight.data.astype(acc)).astype(x.dtype).reshape(x.shape)
        gw = (g2.astype(acc).T @ x2.astype(acc)).astype(weight.dtype)
        if bias is None:
            return gx, gw
        gb = g2.sum(axis=0, dtype=acc).astype(bias.dtype)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op_output(out, inputs, backward)


def _conv_out_size(size: int, k: int, stride: int, padding: int) -> int:
    span = size + 2 * padding - k
    if span < 0:
        raise ValueError(
            f"kernel size {k} exceeds padded input extent {size + 2 * padding}"
        )
    return span // stride + 1


def _conv_patches(xp: np.ndarray, kh: int, kw: int, stride: int) -> np.ndarray:
    # [B, C, Hp, Wp] -> [B, H', W', C, kh, kw] strided view.
    win = np.lib.stride_tricks.sliding_window_view(xp, (kh, kw), axis=(2, 3))
    win = win[:, :, ::stride, ::stride]
    return win.transpose(0, 2, 3, 1, 4, 5)


def _conv2d_raw(
    x: np.ndarray, w: np.ndarray, b: np.ndarray | None, stride: int, padding: int, groups: int
) -> np.ndarray:
    bsz, c_in, h, wid = x.shape
    c_out, c_g, kh, kw = w.shape
    h_out = _conv_out_size(h, kh, stride, padding)
    w_out = _conv_out_size(wid, kw, stride, padding)
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = _conv_patches(xp, kh, kw, stride)
    acc = _acc(x)
    if groups == 1:
        lhs = win.reshape(bsz * h_out * w_out, c_in * kh * kw).astype(acc)
        rhs = w.reshape(c_out, c_in * kh * kw).astype(acc)
        y = (lhs @ rhs.T).astype(x.dtype).reshape(bsz, h_out, w_out, c_out)
        y = np.ascontiguousarray(y.transpose(0, 3, 1, 2))
    elif groups == c_in and c_g == 1:
        y = np.einsum("bhwckl,ckl->bchw", win.astype(acc), w[:, 0].astype(acc)).astype(x.dtype)
    else:
        cg_in = c_in // groups
        cg_out = c_out // groups
        parts = []
        for g in range(groups):
            lhs = win[:, :, :, g * cg_in : (g + 1) * cg_in].reshape(
                bsz * h_out * w_out, cg_in * kh * kw
            ).astype(acc)
            rhs = w[g * cg_out : (g + 1) * cg_out].reshape(cg_out, cg_in * kh * kw).astype(acc)
            part = (lhs @ rhs.T).astype(x.dtype).reshape(bsz, h_out, w_out, cg_out)
            parts.append(part.transpose(0, 3, 1, 2))
        y = np.ascontiguousarray(np.concatenate(parts, axis=1))
    if b is not None:
        y = y + b[None, :, None, None]
    return y


def _conv2d_grad_w(
    x: np.ndarray, g: np.ndarray, w_shape, stride: int, padding: int, groups: int
) -> np.ndarray:
    c_out, c_g, kh, kw = w_shape
    c_in = x.shape[1]
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding))) if padding else x
    win = _conv_patches(xp, kh, kw, stride)
    acc = _acc(x)
    if groups == 1:
        gw = np.einsum("bhwikl,bohw->oikl", win.astype(acc), g.astype(acc))
        return gw.astype(x.dtype)
    if groups == c_in and c_g == 1:
        gw = np.einsum("bhwckl,bchw->ckl", win.astype(acc), g.astype(acc))
        return gw[:, None].astype(x.dtype)
    cg_in = c_in // groups
    cg_out = c_out // groups
    parts = []
    for gi in range(groups):
        wing = win[:, :, :, gi * cg_in : (gi + 1) * cg_in]
        gg = g[:, gi * cg_out : (gi + 1) * cg_out]
        parts.append(np.einsum("bhwikl,bohw->oikl", wing.astype(acc), gg.astype(acc)))
    return np.concatenate(parts, axis=0).astype(x.dtype)


def _conv2d_grad_x(
    g: np.ndarray, w: np.ndarray, x_shape, stride: int, padding: int, groups: int
) -> np.ndarray:
    bsz, c_in, h, wid = x_shape
    c_out, c_g, kh, kw = w.shape
    h_out, w_out = g.shape[2], g.shape[3]
    # Scatter the output gradient onto the stride grid, then run a full
    # cross-correlation against the flipped, channel-transposed kernel.
    hd = (h_out - 1) * stride + 1
    wd = (w_out - 1) * stride + 1
    gd = np.zeros((bsz, c_out, hd, wd), dtype=g.dtype)
    gd[:, :, ::stride, ::stride] = g
    gdp = np.pad(gd, ((0, 0), (0, 0), (kh - 1, kh - 1), (kw - 1, kw - 1)))
    w_flip = w[:, :, ::-1, ::-1]
    if groups == 1:
        wt = np.ascontiguousarray(w_flip.transpose(1, 0, 2, 3))
        dx_full = _conv2d_raw(gdp, wt, None, 1, 0, 1)
    elif groups == c_in and c_g == 1:
        dx_full = _conv2d_raw(gdp, np.ascontiguousarray(w_flip), None, 1, 0, c_in)
    else:
        cg_in = c_in // groups
        cg_out = c_out // groups
        parts = []
        for gi in range(groups):
            wt = w_flip[gi * cg_out : (gi + 1) * cg_out].transpose(1, 0, 2, 3)
            parts.append(
                _conv2d_raw(
                    gdp[:, gi * cg_out : (gi + 1) * cg_out],
                    np.ascontiguousarray(wt),
                    None,
                    1,
                    0,
                    1,
                )
            )
        dx_full = np.concatenate(parts, axis=1)
    # dx_full covers [0, (H'-1)s + kh) of the padded canvas; crop the rest.
    canvas = np.zeros((bsz, c_in, h + 2 * padding, wid + 2 * padding), dtype=g.dtype)
    canvas[:, :, : dx_full.shape[2], : dx_full.shape[3]] = dx_full
    return np.ascontiguousarray(
        canvas[:, :, padding : padding + h, padding : padding + wid]
    )


def conv2d(
    x: Tensor,
    weight: Tensor,
    bias: Tensor | None = None,
    stride: int = 1,
    padding: int = 0,
    groups: int = 1,
) -> Tensor:
    """2-D cross-correlation over [B, C, H, W] maps."""
    x = _as_tensor(x)
    if x.ndim != 4 or weight.ndim != 4:
        raise ValueError(
            f"conv2d expects 4-D input and weight, got {x.shape} and {weight.shape}"
        )
    bsz, c_in, h, wid = x.shape
    c_out, c_g, kh, kw = weight.shape
    if stride < 1 or padding < 0 or groups < 1:
        raise ValueError(f"invalid conv2d arguments stride={stride} padding={padding} groups={groups}")
    if c_in % groups or c_out % groups:
        raise ValueError(f"channels ({c_in} in, {c_out} out) not divisible by groups={groups}")
    if c_g != c_in // groups:
        raise ValueError(
            f"weight expects {c_g} channels per group but input provides {c_in // groups}"
        )
    if bias is not None and bias.shape != (c_out,):
        raise ValueError(f"conv2d bias shape {bias.shape} does not match {c_out} outputs")
    out = _conv2d_raw(x.data, weight.data, None if bias is None else bias.data, stride, padding, groups)

    def backward(g):
        gx = _conv2d_grad_x(g, weight.data, x.shape, stride, padding, groups)
        gw = _conv2d_grad_w(x.data, g, weight.shape, stride, padding, groups)
        if bias is None:
            return gx, gw
        gb = g.sum(axis=(0, 2, 3), dtype=_acc(g)).astype(bias.dtype)
        return gx, gw, gb

    inputs = (x, weight) if bias is None else (x, weight, bias)
    return make_op_output(out, inputs, backward)


def _scatter_axis(target: np.ndarray, axis: int, idx: np.ndarray, vals: np.ndarray) -> None:
    moved = np.moveaxis(target, axis, 0)
    np.add.at(moved, idx, np.moveaxis(vals, axis, 0))


def _resize_coords(n_in: int, n_out: int):
    # Half-pixel-centre mapping, clamped to the valid range.
    pos = (np.arange(n_out, dtype=np.float64) + 0.5) * (n_in / n_out) - 0.5
    pos = np.clip(pos, 0.0, n_in - 1.0)
    i0 = np.floor(pos).astype(np.int64)
    i1 = np.minimum(i0 + 1, n_in - 1)
    frac = pos - i0
    return i0, i1, frac


def bilinear_resize(x: Tensor, out_h: int, out_w: int) -> Tensor:
    """Resize [B, C, H, W] to [B, C, out_h, out_w] with bilinear weights."""
    x = _as_tensor(x)
    if x.ndim != 4:
        raise ValueError(f"bilinear_resize expects a 4-D map, got shape {x.shape}")
    if out_h < 1 or out_w < 1:
        raise ValueError(f"invalid target size ({out_h}, {out_w})")
    _, _, h, w = x.shape
    i0, i1, fy = _resize_coords(h, out_h)
    j0, j1, fx = _resize_coords(w, out_w)
    fy_col = fy.astype(x.dtype.type)[:, None]
    fx_row = fx.astype(x.dtype.type)[None, :]

    rows0 = x.data[:, :, i0, :]
    rows1 = x.data[:, :, i1, :]
    rmix = rows0 * (1.0 - fy_col) + rows1 * fy_col
    out = rmix[:, :, :, j0] * (1.0 - fx_row) + rmix[:, :, :, j1] * fx_row

    def backward(g):
        gr = np.zeros_like(rmix)
        _scatter_axis(gr, 3, j0, g * (1.0 - fx_row))
        _scatter_axis(gr, 3, j1, g * fx_row)
        gx = np.zeros(x.shape, dtype=x.dtype)
        _scatter_axis(gx, 2, i0, gr * (1.0 - fy_col))
        _scatter_axis(gx, 2, i1, gr * fy_col)
        return (gx,)

    return make_op_output(np.ascontiguousarray(out), (x,), backward)


def bilinear_warp(x: Tensor, offsets: Tensor) -> Tensor:
    """Sample ``x`` at per-pixel displaced coordinates.

    ``offsets[:, 0]`` displaces rows, ``offsets[:, 1]`` columns, in pixels.
    Coordinates are clamped to the image border; gradients flow to both the
    source map and the offsets (zero where clamped).
    """
    x = _as_tensor(x)
    offsets = _as_tensor(offsets)
    if x.ndim != 4 or offsets.ndim != 4 or offsets.shape[1] != 2:
        raise ValueError(
            f"bilinear_warp expects [B,C,H,W] and [B,2,H,W], got {x.shape} and {offsets.shape}"
        )
    if offsets.shape[0] != x.shape[0] or offsets.shape[2:] != x.shape[2:]:
        raise ValueError(f"offset grid {offsets.shape} does not match map {x.shape}")
    bsz, c, h, w = x.shape
    grid_y = np.arange(h, dtype=np.float64)[:, None]
    grid_x = np.arange(w, dtype=np.float64)[None, :]
    yy = grid_y + offsets.data[:, 0].astype(np.float64)
    xx = grid_x + offsets.data[:, 1].astype(np.float64)
    in_y = (yy > 0.0) & (yy < h - 1.0)
    in_x = (xx > 0.0) & (xx < w - 1.0)
    yy = np.clip(yy, 0.0, h - 1.0)
    xx = np.clip(xx, 0.0, w - 1.0)
    i0 = np.floor(yy).astype(np.int64)
    j0 = np.floor(xx).astype(np.int64)
    i1 = np.minimum(i0 + 1, h - 1)
    j1 = np.minimum(j0 + 1, w - 1)
    fy = (yy - i0).astype(x.dtype.type)[:, None]
    fx = (xx - j0).astype(x.dtype.type)[:, None]

    flat = x.data.reshape(bsz, c, h * w)

    def gather(ii, jj):
        idx = (ii * w + jj).reshape(bsz, 1, h * w)
        idx = np.broadcast_to(idx, (bsz, c, h * w))
        return np.take_along_axis(flat, idx, axis=2)

    v00 = gather(i0, j0)
    v01 = gather(i0, j1)
    v10 = gather(i1, j0)
    v11 = gather(i1, j1)
    fyf = fy.reshape(bsz, 1, h * w)
    fxf = fx.reshape(bsz, 1, h * w)
    out = (
        v00 * (1.0 - fyf) * (1.0 - fxf)
        + v01 * (1.0 - fyf) * fxf
        + v10 * fyf * (1.0 - fxf)
        + v11 * fyf * fxf
    ).reshape(x.shape)

    def backward(g):
        gf = g.reshape(bsz, c, h * w)
        gx = None
        goff = None
        if x.requires_grad:
            gxf = np.zeros((bsz, c, h * w), dtype=x.dtype)
            bidx = np.arange(bsz)[:, None, None]
            cidx = np.arange(c)[None, :, None]
            for ii, jj, wgt in (
                (i0, j0, (1.0 - fyf) * (1.0 - fxf)),
                (i0, j1, (1.0 - fyf) * fxf),
                (i1, j0, fyf * (1.0 - fxf)),
                (i1, j1, fyf * fxf),
            ):
                idx = (ii * w + jj).reshape(bsz, 1, h * w)
                idx = np.broadcast_to(idx, (bsz, c, h * w))
                np.add.at(gxf, (bidx, cidx, idx), gf * wgt)
            gx = gxf.reshape(x.shape)
        if offsets.requires_grad:
            dvy = (v10 - v00) * (1.0 - fxf) + (v11 - v01) * fxf
            dvx = (v01 - v00) * (1.0 - fyf) + (v11 - v10) * fyf
            gy = (gf * dvy).sum(axis=1, dtype=_acc(g)).reshape(bsz, h, w)
            gxo = (gf * dvx).sum(axis=1, dtype=_acc(g)).reshape(bsz, h, w)
            goff = np.stack(
                [gy * in_y, gxo * in_x], axis=1
            ).astype(offsets.dtype)
        return gx, goff

    return make_op_output(out, (x, offsets), backward)


# Operator sugar on Tensor.
def _op_add(self, other):
    return add(self, other)


def _op_sub(self, other):
    return sub(self, other)


def _op_rsub(self, other):
    return sub(_as_tensor(other, like=self), self)


def _op_mul(self, other):
    return mul(self, other)


def _op_div(self, other):
    return div(self, other)


def _op_rdiv(self, other):
    return div(_as_tensor(other, like=self), self)


Tensor.__add__ = _op_add
Tensor.__radd__ = _op_add
Tensor.__sub__ = _op_sub
Tensor.__rsub__ = _op_rsub
Tensor.__mul__ = _op_mul
Tensor.__rmul__ = _op_mul
Tensor.__truediv__ = _op_div
Tensor.__rtruediv__ = _op_rdiv
Tensor.__neg__ = neg
