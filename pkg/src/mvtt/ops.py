"""Dense float64 tensor primitives with hand-written backward passes.

All operations accept single images shaped (C, H, W) or batched stacks
shaped (N, C, H, W); gradients are exact analytic expressions, verified
against central finite differences in the test suite. Convolution is
cross-correlation (no kernel flip).
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np


class ShapeError(ValueError):
    """Raised when operand shapes are inconsistent with an op's contract."""


@dataclass(frozen=True)
class ConvSpec:
    """Static description of a 2-D convolution layer."""

    in_channels: int
    out_channels: int
    kernel: tuple[int, int] = (3, 3)
    stride: int = 1
    dilation: int = 1
    padding: str = "same"  # "same" | "valid"

    def __post_init__(self):
        if self.in_channels < 1 or self.out_channels < 1:
            raise ShapeError("channel counts must be positive")
        if self.stride < 1:
            raise ShapeError(f"stride must be >= 1, got {self.stride}")
        if self.dilation < 1:
            raise ShapeError(f"dilation must be >= 1, got {self.dilation}")
        if self.padding not in ("same", "valid"):
            raise ShapeError(f"padding must be 'same' or 'valid', got {self.padding!r}")


@dataclass(frozen=True)
class LrnSpec:
    """Cross-channel local response normalization hyperparameters."""

    depth_radius: int = 2
    k: float = 2.0
    alpha: float = 1e-4
    beta: float = 0.75

    def __post_init__(self):
        if self.depth_radius < 0:
            raise ShapeError("depth_radius must be non-negative")
        if self.k <= 0:
            raise ShapeError("k must be > 0")
        if self.alpha < 0:
            raise ShapeError("alpha must be >= 0")
        if self.beta <= 0:
            raise ShapeError("beta must be > 0")


def _as_batched(x):
    x = np.asarray(x, dtype=np.float64)
    if x.ndim == 3:
        return x[None], True
    if x.ndim == 4:
        return x, False
    raise ShapeError(f"expected a (C,H,W) or (N,C,H,W) array, got shape {x.shape}")


def _unbatch(y, squeezed):
    return y[0] if squeezed else y


def _conv_geometry(h, w, spec):
    """Return (out_h, out_w, pad_top, pad_left, pad_bottom, pad_right)."""
    kh, kw = spec.kernel
    eff_h = (kh - 1) * spec.dilation + 1
    eff_w = (kw - 1) * spec.dilation + 1
    if spec.padding == "same":
        out_h = -(-h // spec.stride)
        out_w = -(-w // spec.stride)
        pad_h = max((out_h - 1) * spec.stride + eff_h - h, 0)
        pad_w = max((out_w - 1) * spec.stride + eff_w - w, 0)
        return out_h, out_w, pad_h // 2, pad_w // 2, pad_h - pad_h // 2, pad_w - pad_w // 2
    out_h = (h - eff_h) // spec.stride + 1
    out_w = (w - eff_w) // spec.stride + 1
    if out_h < 1 or out_w < 1:
        raise ShapeError(
            f"valid-padding output would be empty: input {h}x{w}, effective kernel {eff_h}x{eff_w}"
        )
    return out_h, out_w, 0, 0, 0, 0


def _im2col(xp, spec, out_h, out_w):
    """Gather sliding-window patches from a padded (N,C,Hp,Wp) array.

    Returns (N, C*kh*kw, out_h*out_w).
    """
    n, c, _, _ = xp.shape
    kh, kw = spec.kernel
    s, d = spec.stride, spec.dilation
    cols = np.empty((n, c, kh, kw, out_h, out_w), dtype=np.float64)
    for i in range(kh):
        for j in range(kw):
            cols[:, :, i, j] = xp[
                :, :, i * d : i * d + s * out_h : s, j * d : j * d + s * out_w : s
            ]
    return cols.reshape(n, c * kh * kw, out_h * out_w)


def _col2im(gcols, x_shape, spec, pads, out_h, out_w):
    """Scatter-add patch gradients back to the (unpadded) input layout."""
    n, c, h, w = x_shape
    kh, kw = spec.kernel
    pt, pl, pb, pr = pads
    gxp = np.zeros((n, c, h + pt + pb, w + pl + pr), dtype=np.float64)
    g6 = gcols.reshape(n, c, kh, kw, out_h, out_w)
    for i in range(kh):
        for j in range(kw):
            hi = i * spec.dilation
            wj = j * spec.dilation
            gxp[
                :, :, hi : hi + spec.stride * out_h : spec.stride,
                wj : wj + spec.stride * out_w : spec.stride,
            ] += g6[:, :, i, j]
    return gxp[:, :, pt : pt + h, pl : pl + w]


def _check_conv_operands(x, w, b, spec):
    kh, kw = spec.kernel
    if w.shape != (spec.out_channels, spec.in_channels, kh, kw):
        raise ShapeError(
            f"weight shape {w.shape} does not match spec "
            f"({spec.out_channels},{spec.in_channels},{kh},{kw})"
        )
    if x.shape[1] != spec.in_channels:
        raise ShapeError(
            f"input has {x.shape[1]} channels, spec expects {spec.in_channels}"
        )
    if b is not None and b.shape != (spec.out_channels,):
        raise ShapeError(f"bias shape {b.shape} != ({spec.out_channels},)")


def conv2d(x, w, b, spec: ConvSpec):
    """2-D cross-correlation with stride/dilation/padding per `spec`."""
    xb, squeezed = _as_batched(x)
    w = np.asarray(w, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64) if b is not None else None
    _check_conv_operands(xb, w, b, spec)
    n, c, h, wd = xb.shape
    out_h, out_w, pt, pl, pb, pr = _conv_geometry(h, wd, spec)
    xp = np.pad(xb, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pl or pb or pr) else xb
    cols = _im2col(xp, spec, out_h, out_w)
    y = np.matmul(w.reshape(spec.out_channels, -1), cols)
    if b is not None:
        y += b[:, None]
    y = y.reshape(n, spec.out_channels, out_h, out_w)
    return _unbatch(y, squeezed)


def conv2d_backward(grad_out, x, w, spec: ConvSpec):
    """Gradients of `conv2d` wrt input, weights and bias.

    Returns (grad_input, grad_weights, grad_bias); shapes match the
    forward operands.
    """
    xb, squeezed = _as_batched(x)
    gb4, gsq = _as_batched(grad_out)
    w = np.asarray(w, dtype=np.float64)
    _check_conv_operands(xb, w, None, spec)
    n, c, h, wd = xb.shape
    out_h, out_w, pt, pl, pb, pr = _conv_geometry(h, wd, spec)
    if gb4.shape != (n, spec.out_channels, out_h, out_w):
        raise ShapeError(
            f"grad_out shape {grad_out.shape} does not match forward output "
            f"({n},{spec.out_channels},{out_h},{out_w})"
        )
    xp = np.pad(xb, ((0, 0), (0, 0), (pt, pb), (pl, pr))) if (pt or pl or pb or pr) else xb
    cols = _im2col(xp, spec, out_h, out_w)
    g2 = gb4.reshape(n, spec.out_channels, out_h * out_w)
    grad_bias = g2.sum(axis=(0, 2))
    grad_w = np.einsum("nop,nkp->ok", g2, cols).reshape(w.shape)
    w2 = w.reshape(spec.out_channels, -1)
    gcols = np.matmul(w2.T, g2)
    grad_x = _col2im(gcols, xb.shape, spec, (pt, pl, pb, pr), out_h, out_w)
    return _unbatch(grad_x, squeezed), grad_w, grad_bias


def max_pool2(x):
    """2x2 non-overlapping max pooling; returns (pooled, argmax indices).

    Ties break to the first (row-major) maximal position inside each
    window; the returned indices route gradients in `max_pool2_backward`.
    """
    xb, squeezed = _as_batched(x)
    n, c, h, w = xb.shape
    if h % 2 or w % 2:
        raise ShapeError(f"max_pool2 requires even spatial extents, got {h}x{w}")
    win = xb.reshape(n, c, h // 2, 2, w // 2, 2).transpose(0, 1, 2, 4, 3, 5)
    flat = win.reshape(n, c, h // 2, w // 2, 4)
    idx = flat.argmax(axis=-1)
    pooled = np.take_along_axis(flat, idx[..., None], axis=-1)[..., 0]
    return _unbatch(pooled, squeezed), _unbatch(idx, squeezed)


def max_pool2_backward(grad_out, idx, input_shape):
    """Route each pooled gradient to its recorded argmax position."""
    gb, squeezed = _as_batched(grad_out)
    idxb = idx[None] if idx.ndim == 3 else idx
    n, c, oh, ow = gb.shape
    h, w = oh * 2, ow * 2
    flat = np.zeros((n, c, oh, ow, 4), dtype=np.float64)
    np.put_along_axis(flat, idxb[..., None], gb[..., None], axis=-1)
    gx = flat.reshape(n, c, oh, ow, 2, 2).transpose(0, 1, 2, 4, 3, 5).reshape(n, c, h, w)
    if input_shape is not None and gx.shape[-3:] != tuple(input_shape)[-3:]:
        raise ShapeError(f"pool backward produced {gx.shape}, expected {input_shape}")
    return _unbatch(gx, squeezed)


def _upsample_matrix(size):
    """(2*size, size) interpolation matrix, align-corners-false, edges clamped."""
    out = 2 * size
    m = np.zeros((out, size), dtype=np.float64)
    for i in range(out):
        src = (i + 0.5) / 2.0 - 0.5
        lo = math.floor(src)
        frac = src - lo
        lo_c = min(max(lo, 0), size - 1)
        hi_c = min(max(lo + 1, 0), size - 1)
        if src < 0 or src > size - 1:
            frac = 0.0
        m[i, lo_c] += 1.0 - frac
        m[i, hi_c] += frac
    return m


def bilinear_upsample2(x):
    """Double both spatial extents via bilinear interpolation.

    Uses the align-corners-false convention; constant inputs map to
    constant outputs (each interpolation weight row sums to 1).
    """
    xb, squeezed = _as_batched(x)
    n, c, h, w = xb.shape
    r = _upsample_matrix(h)
    cm = _upsample_matrix(w)
    y = np.einsum("ph,nchw,qw->ncpq", r, xb, cm, optimize=True)
    return _unbatch(y, squeezed)


def bilinear_upsample2_backward(grad_out, input_shape):
    """Adjoint of `bilinear_upsample2` for an input of `input_shape`."""
    gb, squeezed = _as_batched(grad_out)
    c, h, w = tuple(input_shape)[-3:]
    if gb.shape[-3:] != (c, 2 * h, 2 * w):
        raise ShapeError(f"grad_out {gb.shape} inconsistent with input {input_shape}")
    r = _upsample_matrix(h)
    cm = _upsample_matrix(w)
    gx = np.einsum("ph,ncpq,qw->nchw", r, gb, cm, optimize=True)
    return _unbatch(gx, squeezed)


def _lrn_denom(xb, spec):
    r = spec.depth_radius
    n_win = 2 * r + 1
    sq = xb * xb
    c = xb.shape[1]
    acc = np.zeros_like(xb)
    for off in range(-r, r + 1):
        lo = max(0, -off)
        hi = min(c, c - off)
        acc[:, lo:hi] += sq[:, lo + off : hi + off]
    return spec.k + (spec.alpha / n_win) * acc


def lrn(x, spec: LrnSpec):
    """Cross-channel local response normalization.

    b_c = a_c / (k + (alpha/n) * sum of a^2 over the clamped channel
    window [c-r, c+r])^beta, with n = 2r+1 the nominal window size.
    """
    xb, squeezed = _as_batched(x)
    d = _lrn_denom(xb, spec)
    return _unbatch(xb * d ** (-spec.beta), squeezed)


def lrn_backward(grad_out, x, spec: LrnSpec):
    """Analytic gradient of `lrn` wrt its input."""
    xb, squeezed = _as_batched(x)
    gb, _ = _as_batched(grad_out)
    if gb.shape != xb.shape:
        raise ShapeError(f"grad_out {gb.shape} != input {xb.shape}")
    r = spec.depth_radius
    n_win = 2 * r + 1
    d = _lrn_denom(xb, spec)
    t = gb * xb * d ** (-spec.beta - 1.0)
    c = xb.shape[1]
    tsum = np.zeros_like(xb)
    for off in range(-r, r + 1):
        lo = max(0, -off)
        hi = min(c, c - off)
        tsum[:, lo:hi] += t[:, lo + off : hi + off]
    return _unbatch(
        gb * d ** (-spec.beta) - 2.0 * spec.beta * (spec.alpha / n_win) * xb * tsum,
        squeezed,
    )


def relu(x):
    return np.maximum(np.asarray(x, dtype=np.float64), 0.0)


def relu_backward(grad_out, x):
    return np.asarray(grad_out, dtype=np.float64) * (np.asarray(x) > 0)


def sigmoid(x):
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    # keep the open-interval contract where rounding would hit 0.0 or 1.0
    return np.clip(out, np.nextafter(0.0, 1.0), np.nextafter(1.0, 0.0))


def sigmoid_backward(grad_out, y):
    """Gradient through sigmoid given the forward *output* y."""
    y = np.asarray(y, dtype=np.float64)
    return np.asarray(grad_out, dtype=np.float64) * y * (1.0 - y)


def hadamard(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"hadamard operands differ: {a.shape} vs {b.shape}")
    return a * b


def glorot_uniform(shape, fan_in, fan_out, rng):
    """Uniform init in [-s, s] with s = sqrt(6 / (fan_in + fan_out))."""
    s = math.sqrt(6.0 / (fan_in + fan_out))
    return rng.uniform(-s, s, size=shape)
