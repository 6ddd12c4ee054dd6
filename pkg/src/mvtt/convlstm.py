"""Convolutional LSTM cell with peephole connections and ReLU state activation.

Gate equations (sigma = sigmoid, * = same-padding convolution, o = Hadamard):

    i_t = sigma(W_xi * x_t + W_hi * h_{t-1} + W_ct o c_{t-1} + b_i)
    f_t = sigma(W_xf * x_t + W_hf * h_{t-1} + W_cf o c_{t-1} + b_f)
    c_t = f_t o c_{t-1} + i_t o ReLU(W_xc * x_t + W_hc * h_{t-1} + b_c)
    o_t = sigma(W_xo * x_t + W_ho * h_{t-1} + W_cfo o c_t + b_o)
    h_t = o_t o ReLU(c_t)

Note the output-gate peephole reads the *updated* cell c_t, and ReLU is
used in place of tanh. Peephole weights are elementwise maps shaped like
the cell state; biases are per-channel vectors.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np

from . import ops
from .ops import ConvSpec, ShapeError

GATE_CONV_FIELDS = ("w_xi", "w_hi", "w_xf", "w_hf", "w_xc", "w_hc", "w_xo", "w_ho")
PEEPHOLE_FIELDS = ("w_ct", "w_cf", "w_cfo")
BIAS_FIELDS = ("b_i", "b_f", "b_c", "b_o")


@dataclass
class ConvLstmParams:
    w_xi: np.ndarray
    w_hi: np.ndarray
    w_xf: np.ndarray
    w_hf: np.ndarray
    w_xc: np.ndarray
    w_hc: np.ndarray
    w_xo: np.ndarray
    w_ho: np.ndarray
    w_ct: np.ndarray
    w_cf: np.ndarray
    w_cfo: np.ndarray
    b_i: np.ndarray
    b_f: np.ndarray
    b_c: np.ndarray
    b_o: np.ndarray

    @property
    def hidden(self):
        return self.w_xi.shape[0]

    @property
    def kernel(self):
        return self.w_xi.shape[2:]

    def x_spec(self):
        return ConvSpec(self.w_xi.shape[1], self.hidden, kernel=tuple(self.kernel))

    def h_spec(self):
        return ConvSpec(self.hidden, self.hidden, kernel=tuple(self.kernel))

    def named_arrays(self):
        for f in fields(self):
            yield f.name, getattr(self, f.name)


@dataclass
class ConvLstmState:
    h: np.ndarray
    c: np.ndarray
    t: int = 0


def init_params(in_channels, hidden, spatial, kernel=(3, 3), rng=None):
    """Glorot-uniform gate convolutions, zero peepholes and biases.

    `spatial` fixes the (H, W) extents of the elementwise peephole maps.
    """
    rng = rng or np.random.default_rng()
    kh, kw = kernel

    def conv_w(cin):
        return ops.glorot_uniform((hidden, cin, kh, kw), cin * kh * kw, hidden * kh * kw, rng)

    kw_args = {}
    for name in GATE_CONV_FIELDS:
        cin = in_channels if name[2] == "x" else hidden
        kw_args[name] = conv_w(cin)
    for name in PEEPHOLE_FIELDS:
        kw_args[name] = np.zeros((hidden, *spatial))
    for name in BIAS_FIELDS:
        kw_args[name] = np.zeros(hidden)
    return ConvLstmParams(**kw_args)


def zero_grads(params):
    return ConvLstmParams(**{n: np.zeros_like(a) for n, a in params.named_arrays()})


def zero_state(params, spatial):
    shape = (params.hidden, *spatial)
    return ConvLstmState(h=np.zeros(shape), c=np.zeros(shape), t=0)


def _gates(x_t, h_prev, params):
    """Stacked gate convolutions; returns pre-activations (a_i, a_f, a_c, a_o)."""
    wx = np.concatenate([params.w_xi, params.w_xf, params.w_xc, params.w_xo])
    wh = np.concatenate([params.w_hi, params.w_hf, params.w_hc, params.w_ho])
    b = np.concatenate([params.b_i, params.b_f, params.b_c, params.b_o])
    sx = ConvSpec(x_t.shape[0], 4 * params.hidden, kernel=tuple(params.kernel))
    sh = ConvSpec(params.hidden, 4 * params.hidden, kernel=tuple(params.kernel))
    pre = ops.conv2d(x_t, wx, b, sx) + ops.conv2d(h_prev, wh, None, sh)
    return np.split(pre, 4, axis=0)


def _step(x_t, state, params):
    x_t = np.asarray(x_t, dtype=np.float64)
    if x_t.shape[1:] != state.h.shape[1:]:
        raise ShapeError(
            f"input spatial extents {x_t.shape[1:]} != state extents {state.h.shape[1:]}"
        )
    a_i, a_f, a_c, a_o = _gates(x_t, state.h, params)
    i = ops.sigmoid(a_i + params.w_ct * state.c)
    f = ops.sigmoid(a_f + params.w_cf * state.c)
    g = ops.relu(a_c)
    c = f * state.c + i * g
    o = ops.sigmoid(a_o + params.w_cfo * c)
    h = o * ops.relu(c)
    cache = {
        "x": x_t, "h_prev": state.h, "c_prev": state.c,
        "i": i, "f": f, "g": g, "a_c": a_c, "c": c, "o": o,
    }
    return ConvLstmState(h=h, c=c, t=state.t + 1), cache


def cell_step(x_t, state, params):
    """Advance one slice through the cell; returns the new state."""
    new_state, _ = _step(x_t, state, params)
    return new_state


def run_sequence(xs, params, initial=None, return_caches=False):
    """Left fold of `cell_step` over a slice sequence; returns all h_t."""
    if len(xs) == 0:
        raise ShapeError("run_sequence requires a non-empty sequence")
    spatial = np.asarray(xs[0]).shape[1:]
    state = initial if initial is not None else zero_state(params, spatial)
    hs, caches = [], []
    for x_t in xs:
        state, cache = _step(x_t, state, params)
        hs.append(state.h)
        caches.append(cache)
    if return_caches:
        return hs, caches
    return hs


def cell_backward(grad_hs, caches, params):
    """Backpropagation through time over a cached `run_sequence` call.

    `grad_hs` holds the upstream gradient for every h_t. Returns
    (grad_xs, grad_params) where grad_params is a ConvLstmParams of
    accumulated gradients.
    """
    if len(grad_hs) != len(caches):
        raise ShapeError(f"{len(grad_hs)} upstream gradients for {len(caches)} steps")
    grads = zero_grads(params)
    xs_spec = params.x_spec()
    hs_spec = params.h_spec()
    grad_xs = [None] * len(caches)
    dh_next = np.zeros_like(caches[0]["h_prev"])
    dc_next = np.zeros_like(dh_next)
    for t in range(len(caches) - 1, -1, -1):
        cc = caches[t]
        i, f, g, c, o = cc["i"], cc["f"], cc["g"], cc["c"], cc["o"]
        dh = np.asarray(grad_hs[t], dtype=np.float64) + dh_next
        relu_c = np.maximum(c, 0.0)
        do = dh * relu_c
        da_o = do * o * (1.0 - o)
        dc = dc_next + dh * o * (c > 0) + da_o * params.w_cfo
        grads.w_cfo += da_o * c
        di = dc * g
        dg = dc * i
        df = dc * cc["c_prev"]
        da_i = di * i * (1.0 - i)
        da_f = df * f * (1.0 - f)
        da_c = dg * (cc["a_c"] > 0)
        grads.w_ct += da_i * cc["c_prev"]
        grads.w_cf += da_f * cc["c_prev"]
        dc_prev = dc * f + da_i * params.w_ct + da_f * params.w_cf
        # gate convolutions: accumulate weight/bias grads, collect input grads
        dx = np.zeros_like(cc["x"])
        dh_prev = np.zeros_like(cc["h_prev"])
        for da, wx_name, wh_name, b_name in (
            (da_i, "w_xi", "w_hi", "b_i"),
            (da_f, "w_xf", "w_hf", "b_f"),
            (da_c, "w_xc", "w_hc", "b_c"),
            (da_o, "w_xo", "w_ho", "b_o"),
        ):
            gx, gw, gb = ops.conv2d_backward(da, cc["x"], getattr(params, wx_name), xs_spec)
            dx += gx
            acc = getattr(grads, wx_name)
            acc += gw
            acc = getattr(grads, b_name)
            acc += gb
            gh, gw, _ = ops.conv2d_backward(da, cc["h_prev"], getattr(params, wh_name), hs_spec)
            dh_prev += gh
            acc = getattr(grads, wh_name)
            acc += gw
        grad_xs[t] = dx
        dh_next = dh_prev
        dc_next = dc_prev
    return grad_xs, grads
