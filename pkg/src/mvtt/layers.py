"""Composable layer objects with explicit forward caches and hand-written
backward passes.

Each layer processes a stack of 2-D feature maps shaped (S, C, H, W) where
S indexes slices. `forward` caches whatever its `backward` needs; parameter
gradients accumulate on the layer until `zero_grads` is called. Parameters
are addressable by a stable dotted path for optimizers and checkpoints.
"""

from __future__ import annotations

import zlib

import numpy as np

from . import convlstm, ops
from .ops import ConvSpec, LrnSpec


def path_rng(seed, path):
    """Deterministic per-layer-path generator, stable across variants."""
    return np.random.default_rng(np.random.SeedSequence((seed, zlib.crc32(path.encode()))))


class Layer:
    def named_params(self):
        return iter(())

    def named_grads(self):
        return iter(())

    def zero_grads(self):
        for _, g in self.named_grads():
            g[...] = 0.0


class Conv(Layer):
    def __init__(self, path, spec: ConvSpec, seed=0, zero_init=False):
        self.path = path
        self.spec = spec
        kh, kw = spec.kernel
        if zero_init:
            self.w = np.zeros((spec.out_channels, spec.in_channels, kh, kw))
        else:
            rng = path_rng(seed, path)
            self.w = ops.glorot_uniform(
                (spec.out_channels, spec.in_channels, kh, kw),
                spec.in_channels * kh * kw, spec.out_channels * kh * kw, rng,
            )
        self.b = np.zeros(spec.out_channels)
        self.gw = np.zeros_like(self.w)
        self.gb = np.zeros_like(self.b)
        self._x = None

    def named_params(self):
        yield f"{self.path}.w", self.w
        yield f"{self.path}.b", self.b

    def named_grads(self):
        yield f"{self.path}.w", self.gw
        yield f"{self.path}.b", self.gb

    def forward(self, x):
        self._x = x
        return ops.conv2d(x, self.w, self.b, self.spec)

    def backward(self, gy):
        gx, gw, gb = ops.conv2d_backward(gy, self._x, self.w, self.spec)
        self.gw += gw
        self.gb += gb
        return gx


class Relu(Layer):
    def forward(self, x):
        self._x = x
        return ops.relu(x)

    def backward(self, gy):
        return ops.relu_backward(gy, self._x)


class Sigmoid(Layer):
    def forward(self, x):
        self._y = ops.sigmoid(x)
        return self._y

    def backward(self, gy):
        return ops.sigmoid_backward(gy, self._y)


class Lrn(Layer):
    def __init__(self, spec: LrnSpec):
        self.spec = spec

    def forward(self, x):
        self._x = x
        return ops.lrn(x, self.spec)

    def backward(self, gy):
        return ops.lrn_backward(gy, self._x, self.spec)


class MaxPool2(Layer):
    def forward(self, x):
        y, self._idx = ops.max_pool2(x)
        self._shape = x.shape
        return y

    def backward(self, gy):
        return ops.max_pool2_backward(gy, self._idx, self._shape)


class Upsample2(Layer):
    def forward(self, x):
        self._shape = x.shape
        return ops.bilinear_upsample2(x)

    def backward(self, gy):
        return ops.bilinear_upsample2_backward(gy, self._shape)


class Chain(Layer):
    def __init__(self, layers):
        self.layers = list(layers)

    def named_params(self):
        for lay in self.layers:
            yield from lay.named_params()

    def named_grads(self):
        for lay in self.layers:
            yield from lay.named_grads()

    def forward(self, x):
        for lay in self.layers:
            x = lay.forward(x)
        return x

    def backward(self, gy):
        for lay in reversed(self.layers):
            gy = lay.backward(gy)
        return gy


class ConvLstm(Layer):
    """Recurrent layer folding over the slice axis of an (S, C, H, W) stack."""

    def __init__(self, path, in_channels, hidden, spatial, seed=0, kernel=(3, 3)):
        self.path = path
        self.params = convlstm.init_params(
            in_channels, hidden, spatial, kernel=kernel, rng=path_rng(seed, path)
        )
        self.grads = convlstm.zero_grads(self.params)
        self._caches = None

    def named_params(self):
        for name, arr in self.params.named_arrays():
            yield f"{self.path}.{name}", arr

    def named_grads(self):
        for name, arr in self.grads.named_arrays():
            yield f"{self.path}.{name}", arr

    def forward(self, x):
        hs, self._caches = convlstm.run_sequence(list(x), self.params, return_caches=True)
        return np.stack(hs)

    def backward(self, gy):
        gxs, gp = convlstm.cell_backward(list(gy), self._caches, self.params)
        for name, arr in gp.named_arrays():
            acc = getattr(self.grads, name)
            acc += arr
        return np.stack(gxs)


class ResidualDilatedBlock(Layer):
    """x + LRN(ReLU(dilated conv(x))); identity when weights are zero."""

    def __init__(self, path, channels, dilation, lrn_spec, seed=0):
        spec = ConvSpec(channels, channels, dilation=dilation)
        self.inner = Chain([Conv(f"{path}.conv", spec, seed=seed), Relu(), Lrn(lrn_spec)])

    def named_params(self):
        return self.inner.named_params()

    def named_grads(self):
        return self.inner.named_grads()

    def forward(self, x):
        return x + self.inner.forward(x)

    def backward(self, gy):
        return gy + self.inner.backward(gy)
