"""ConvLSTM cell and BPTT tests against scalar and finite-difference oracles."""

import numpy as np
import pytest

from mvtt import convlstm, ops
from mvtt.gradcheck import rel_error
from mvtt.ops import ShapeError


def make_params(in_ch=2, hidden=2, spatial=(3, 3), seed=0, scale=0.5):
    rng = np.random.default_rng(seed)
    p = convlstm.init_params(in_ch, hidden, spatial, rng=rng)
    # randomize everything (init leaves peepholes/biases at zero)
    for name, arr in p.named_arrays():
        arr[...] = rng.uniform(-scale, scale, size=arr.shape)
    return p


def zero_params(in_ch=2, hidden=2, spatial=(3, 3)):
    p = convlstm.init_params(in_ch, hidden, spatial, rng=np.random.default_rng(0))
    for _, arr in p.named_arrays():
        arr[...] = 0.0
    return p


class TestCellStep:
    def test_all_zero_params(self):
        p = zero_params()
        state = convlstm.zero_state(p, (3, 3))
        x = np.random.default_rng(1).standard_normal((2, 3, 3))
        new = convlstm.cell_step(x, state, p)
        # sigma(0) = 0.5 gates, ReLU(0) = 0 candidate -> c = h = 0
        assert not new.c.any()
        assert not new.h.any()
        assert new.t == 1

    def test_gate_saturation_retains_memory(self):
        p = zero_params()
        p.b_f[...] = 50.0   # f ~= 1
        p.b_i[...] = -50.0  # i ~= 0
        c0 = np.random.default_rng(2).standard_normal((2, 3, 3))
        state = convlstm.ConvLstmState(h=np.zeros((2, 3, 3)), c=c0.copy())
        x = np.random.default_rng(3).standard_normal((2, 3, 3))
        new = convlstm.cell_step(x, state, p)
        assert np.max(np.abs(new.c - c0)) < 1e-12

    def test_scalar_oracle_1x1_spatial(self):
        p = make_params(spatial=(1, 1), seed=4)
        rng = np.random.default_rng(5)
        x = rng.standard_normal((2, 1, 1))
        h0 = rng.standard_normal((2, 1, 1))
        c0 = rng.standard_normal((2, 1, 1))
        new = convlstm.cell_step(x, convlstm.ConvLstmState(h=h0, c=c0), p)

        def sig(v):
            return 1.0 / (1.0 + np.exp(-v))

        # plain scalar arithmetic: only the center kernel tap reaches a 1x1 image
        for k in range(2):
            a_i = sum(p.w_xi[k, c, 1, 1] * x[c, 0, 0] for c in range(2))
            a_i += sum(p.w_hi[k, c, 1, 1] * h0[c, 0, 0] for c in range(2))
            i = sig(a_i + p.w_ct[k, 0, 0] * c0[k, 0, 0] + p.b_i[k])
            a_f = sum(p.w_xf[k, c, 1, 1] * x[c, 0, 0] for c in range(2))
            a_f += sum(p.w_hf[k, c, 1, 1] * h0[c, 0, 0] for c in range(2))
            f = sig(a_f + p.w_cf[k, 0, 0] * c0[k, 0, 0] + p.b_f[k])
            a_c = sum(p.w_xc[k, c, 1, 1] * x[c, 0, 0] for c in range(2))
            a_c += sum(p.w_hc[k, c, 1, 1] * h0[c, 0, 0] for c in range(2)) + p.b_c[k]
            g = max(a_c, 0.0)
            c_new = f * c0[k, 0, 0] + i * g
            a_o = sum(p.w_xo[k, c, 1, 1] * x[c, 0, 0] for c in range(2))
            a_o += sum(p.w_ho[k, c, 1, 1] * h0[c, 0, 0] for c in range(2))
            o = sig(a_o + p.w_cfo[k, 0, 0] * c_new + p.b_o[k])
            h_new = o * max(c_new, 0.0)
            assert abs(new.c[k, 0, 0] - c_new) < 1e-12
            assert abs(new.h[k, 0, 0] - h_new) < 1e-12

    def test_spatial_mismatch_rejected(self):
        p = make_params()
        state = convlstm.zero_state(p, (3, 3))
        with pytest.raises(ShapeError):
            convlstm.cell_step(np.zeros((2, 4, 4)), state, p)

    def test_gates_in_open_interval(self):
        p = make_params(seed=6, scale=2.0)
        state = convlstm.zero_state(p, (3, 3))
        x = np.random.default_rng(7).standard_normal((2, 3, 3)) * 5
        _, cache = convlstm._step(x, state, p)
        for g in ("i", "f", "o"):
            assert np.all(cache[g] > 0) and np.all(cache[g] < 1)

    def test_hidden_state_nonnegative(self):
        p = make_params(seed=8)
        hs = convlstm.run_sequence(
            [np.random.default_rng(9).standard_normal((2, 3, 3)) for _ in range(4)], p
        )
        for h in hs:
            assert np.all(h >= 0)


class TestRunSequence:
    def test_single_element_equals_cell_step(self):
        p = make_params(seed=10)
        x = np.random.default_rng(11).standard_normal((2, 3, 3))
        hs = convlstm.run_sequence([x], p)
        direct = convlstm.cell_step(x, convlstm.zero_state(p, (3, 3)), p)
        assert np.array_equal(hs[0], direct.h)

    def test_zero_params_all_h_zero(self):
        p = zero_params()
        xs = [np.random.default_rng(t).standard_normal((2, 3, 3)) for t in range(3)]
        hs = convlstm.run_sequence(xs, p)
        assert all(not h.any() for h in hs)

    def test_three_steps_compositional(self):
        p = make_params(seed=12)
        xs = [np.random.default_rng(20 + t).standard_normal((2, 3, 3)) for t in range(3)]
        hs = convlstm.run_sequence(xs, p)
        state = convlstm.zero_state(p, (3, 3))
        for t, x in enumerate(xs):
            state = convlstm.cell_step(x, state, p)
            assert np.array_equal(hs[t], state.h)

    def test_empty_sequence_rejected(self):
        with pytest.raises(ShapeError):
            convlstm.run_sequence([], make_params())

    def test_order_sensitivity(self):
        p = make_params(seed=13)
        xs = [np.random.default_rng(30 + t).standard_normal((2, 3, 3)) for t in range(3)]
        hs = convlstm.run_sequence(xs, p)
        hs_perm = convlstm.run_sequence([xs[2], xs[0], xs[1]], p)
        assert not np.allclose(hs[-1], hs_perm[-1])


class TestCellBackward:
    def _loss(self, xs, p, r):
        hs = convlstm.run_sequence(xs, p)
        return float(sum(np.sum(h * ri) for h, ri in zip(hs, r)))

    def test_zero_upstream_zero_grads(self):
        p = make_params(seed=14)
        xs = [np.random.default_rng(40 + t).standard_normal((2, 3, 3)) for t in range(2)]
        _, caches = convlstm.run_sequence(xs, p, return_caches=True)
        gxs, gp = convlstm.cell_backward([np.zeros((2, 3, 3))] * 2, caches, p)
        assert all(not g.any() for g in gxs)
        assert all(not a.any() for _, a in gp.named_arrays())

    @pytest.mark.parametrize("steps", [1, 3])
    def test_finite_differences(self, steps):
        p = make_params(seed=15)
        rng = np.random.default_rng(16)
        xs = [rng.standard_normal((2, 3, 3)) for _ in range(steps)]
        r = [rng.standard_normal((2, 3, 3)) for _ in range(steps)]
        _, caches = convlstm.run_sequence(xs, p, return_caches=True)
        gxs, gp = convlstm.cell_backward(r, caches, p)
        h = 1e-5
        # parameters
        for name, arr in p.named_arrays():
            ana = getattr(gp, name)
            num = np.zeros_like(arr)
            it = np.nditer(arr, flags=["multi_index"])
            while not it.finished:
                i = it.multi_index
                old = arr[i]
                arr[i] = old + h
                up = self._loss(xs, p, r)
                arr[i] = old - h
                dn = self._loss(xs, p, r)
                arr[i] = old
                num[i] = (up - dn) / (2 * h)
                it.iternext()
            assert rel_error(ana, num) < 1e-5, name
        # inputs
        for t in range(steps):
            num = np.zeros_like(xs[t])
            it = np.nditer(xs[t], flags=["multi_index"])
            while not it.finished:
                i = it.multi_index
                old = xs[t][i]
                xs[t][i] = old + h
                up = self._loss(xs, p, r)
                xs[t][i] = old - h
                dn = self._loss(xs, p, r)
                xs[t][i] = old
                num[i] = (up - dn) / (2 * h)
                it.iternext()
            assert rel_error(gxs[t], num) < 1e-5

    def test_length_mismatch_rejected(self):
        p = make_params()
        xs = [np.zeros((2, 3, 3))]
        _, caches = convlstm.run_sequence(xs, p, return_caches=True)
        with pytest.raises(ShapeError):
            convlstm.cell_backward([np.zeros((2, 3, 3))] * 2, caches, p)
