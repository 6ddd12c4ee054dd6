"""Soft attention over fused multiview features, and the scar head.

The mask branch maps fused features to a per-channel, per-position mask in
(0, 1) via a final 1x1 convolution and sigmoid. The mask modulates the
features residually, O = (1 + AM) * F, so a zero mask leaves the features
untouched; only the scar head consumes the attended output.
"""

from __future__ import annotations

import numpy as np

from .layers import Chain, Conv, Lrn, Relu, Sigmoid
from .ops import ConvSpec, ShapeError


class MaskBranch:
    """Three conv+ReLU+LRN stages, then a 1x1 conv + sigmoid mask."""

    def __init__(self, path, channels, lrn_spec, seed=0):
        stages = []
        for i in (1, 2, 3):
            stages += [
                Conv(f"{path}.c{i}", ConvSpec(channels, channels), seed=seed),
                Relu(),
                Lrn(lrn_spec),
            ]
        stages += [
            Conv(f"{path}.out", ConvSpec(channels, channels, kernel=(1, 1)), seed=seed),
            Sigmoid(),
        ]
        self.chain = Chain(stages)

    def named_params(self):
        return self.chain.named_params()

    def named_grads(self):
        return self.chain.named_grads()

    def zero_grads(self):
        self.chain.zero_grads()

    def forward(self, fused):
        return self.chain.forward(fused)

    def backward(self, grad_mask):
        return self.chain.backward(grad_mask)


def apply_attention(fused, mask):
    """Residual modulation O = (1 + AM) * F."""
    fused = np.asarray(fused, dtype=np.float64)
    mask = np.asarray(mask, dtype=np.float64)
    if fused.shape != mask.shape:
        raise ShapeError(f"mask shape {mask.shape} != feature shape {fused.shape}")
    return (1.0 + mask) * fused


def apply_attention_backward(grad_out, fused, mask):
    """Returns (grad wrt F, grad wrt AM)."""
    grad_out = np.asarray(grad_out, dtype=np.float64)
    if grad_out.shape != fused.shape:
        raise ShapeError(f"grad shape {grad_out.shape} != feature shape {fused.shape}")
    return (1.0 + mask) * grad_out, fused * grad_out


def mask_to_u8(mask):
    """8-bit grayscale export of a mask slice or stack (x255, round half-up)."""
    mask = np.asarray(mask, dtype=np.float64)
    if mask.min() < 0 or mask.max() > 1:
        raise ValueError("attention mask entries must lie in [0, 1]")
    return np.floor(mask * 255.0 + 0.5).astype(np.uint8)
