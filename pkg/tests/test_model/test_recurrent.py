import math

import numpy as np
import pytest

from groundcap.model.recurrent import LstmParams, LstmState, lstm_step, lstm_step_backward
from groundcap.model.tensor import finite_diff_grad, relative_error


def zero_params(input_size=2, hidden=1, visual=2):
    return LstmParams(W_x=np.zeros((4 * hidden, input_size)), W_h=np.zeros((4 * hidden, hidden)),
                      W_z=np.zeros((4 * hidden, visual)), b=np.zeros(4 * hidden))


def random_params(rng, input_size=3, hidden=4, visual=2):
    return LstmParams.initialize(input_size, hidden, visual, rng, scale=0.5, dtype=np.float64)


def scalar_step(params, u, z, prev):
    """ Reference evaluation of the cell one unit at a time. """
    H = params.hidden_size
    h, c = np.zeros(H), np.zeros(H)

    def pre(k, j):
        row = k * H + j
        total = params.b[row]
        total += sum(params.W_x[row, a] * u[a] for a in range(len(u)))
        total += sum(params.W_h[row, a] * prev.h[a] for a in range(H))
        total += sum(params.W_z[row, a] * z[a] for a in range(len(z)))
        return total

    def sigmoid(v):
        return 1.0 / (1.0 + math.exp(-v))

    for j in range(H):
        i, f, o = sigmoid(pre(0, j)), sigmoid(pre(1, j)), sigmoid(pre(2, j))
        g = math.tanh(pre(3, j))
        c[j] = f * prev.c[j] + i * g
        h[j] = o * math.tanh(c[j])
    return h, c


class TestLstmStep:
    def test_zero_weights_fixpoint(self):
        state, cache = lstm_step(zero_params(), np.ones(2), np.ones(2), LstmState.zeros(1, np.float64))
        assert cache.i[0] == cache.f[0] == cache.o[0] == 0.5
        assert cache.g[0] == 0.0
        assert state.c[0] == 0.0
        assert state.h[0] == 0.0

    def test_zero_weights_carry_half_the_cell(self):
        prev = LstmState(h=np.zeros(1), c=np.ones(1))
        state, _ = lstm_step(zero_params(), np.zeros(2), np.zeros(2), prev)
        assert state.c[0] == 0.5
        assert state.h[0] == pytest.approx(0.5 * math.tanh(0.5), abs=1e-15)

    def test_matches_scalar_reference(self, rng):
        params = random_params(rng)
        prev = LstmState(h=rng.uniform(-1, 1, 4), c=rng.normal(size=4))
        u, z = rng.normal(size=3), rng.normal(size=2)
        state, _ = lstm_step(params, u, z, prev)
        h, c = scalar_step(params, u, z, prev)
        np.testing.assert_allclose(state.h, h, atol=1e-12)
        np.testing.assert_allclose(state.c, c, atol=1e-12)

    def test_activation_ranges(self, rng):
        params = random_params(rng)
        state = LstmState.zeros(4, np.float64)
        for _ in range(20):
            state, cache = lstm_step(params, rng.normal(scale=3.0, size=3),
                                     rng.normal(scale=3.0, size=2), state)
            for gate in (cache.i, cache.f, cache.o):
                assert np.all((gate > 0) & (gate < 1))
            assert np.all(np.abs(cache.g) < 1)
            assert np.all(np.abs(state.h) < 1)

    def test_memory_carry_with_saturated_gates(self):
        params = zero_params(hidden=2)
        params.gate('f')[3][:] = 50.0
        params.gate('i')[3][:] = -50.0
        prev = LstmState(h=np.zeros(2), c=np.array([0.3, -0.7]))
        state, _ = lstm_step(params, np.zeros(2), np.zeros(2), prev)
        np.testing.assert_array_equal(state.c, prev.c)

    def test_dimension_mismatch_is_rejected(self, rng):
        with pytest.raises(ValueError):
            lstm_step(random_params(rng), np.zeros(2), np.zeros(2), LstmState.zeros(4, np.float64))

    def test_forget_bias_initialisation(self, rng):
        params = LstmParams.initialize(3, 4, 2, rng, forget_bias=1.0)
        np.testing.assert_array_equal(params.gate('f')[3], np.ones(4, dtype=np.float32))
        np.testing.assert_array_equal(params.gate('i')[3], np.zeros(4, dtype=np.float32))


class TestLstmBackward:
    def test_null_upstream_gives_zero_gradients(self, rng):
        params = random_params(rng)
        _, cache = lstm_step(params, rng.normal(size=3), rng.normal(size=2),
                             LstmState.zeros(4, np.float64))
        grads, grad_u, grad_z, grad_prev = lstm_step_backward(cache, np.zeros(4), np.zeros(4))
        for tensor in grads.named_tensors().values():
            assert not np.any(tensor)
        assert not np.any(grad_u) and not np.any(grad_z)
        assert not np.any(grad_prev.h) and not np.any(grad_prev.c)

    def test_missing_cache_is_rejected(self):
        with pytest.raises(ValueError):
            lstm_step_backward(None, np.zeros(1), np.zeros(1))

    def test_stale_cache_is_rejected(self, rng):
        params = random_params(rng)
        _, cache = lstm_step(params, rng.normal(size=3), rng.normal(size=2),
                             LstmState.zeros(4, np.float64))
        params.load(params.copy())
        with pytest.raises(ValueError, match='Stale'):
            lstm_step_backward(cache, np.ones(4), np.zeros(4))

    @pytest.mark.parametrize('seed', range(5))
    def test_single_step_sum_of_h(self, seed):
        rng = np.random.default_rng(seed)
        params = random_params(rng)
        u, z = rng.normal(size=3), rng.normal(size=2)
        prev = LstmState(h=rng.uniform(-0.5, 0.5, 4), c=rng.normal(size=4))
        _, cache = lstm_step(params, u, z, prev)
        grads, grad_u, grad_z, grad_prev = lstm_step_backward(cache, np.ones(4), np.zeros(4))

        for name, tensor in params.named_tensors().items():
            original = tensor.copy()

            def loss(values, tensor=tensor):
                tensor[...] = values
                return float(lstm_step(params, u, z, prev)[0].h.sum())

            numeric = finite_diff_grad(loss, original)
            tensor[...] = original
            assert relative_error(getattr(grads, name), numeric) < 1e-6, name

        assert relative_error(grad_u, finite_diff_grad(
            lambda v: float(lstm_step(params, v, z, prev)[0].h.sum()), u)) < 1e-6
        assert relative_error(grad_z, finite_diff_grad(
            lambda v: float(lstm_step(params, u, v, prev)[0].h.sum()), z)) < 1e-6
        assert relative_error(grad_prev.c, finite_diff_grad(
            lambda v: float(lstm_step(params, u, z, LstmState(prev.h, v))[0].h.sum()),
            prev.c)) < 1e-6

    @pytest.mark.parametrize('seed', range(5))
    def test_unrolled_chain(self, seed):
        rng = np.random.default_rng(seed)
        params = random_params(rng)
        inputs = [(rng.normal(size=3), rng.normal(size=2)) for _ in range(5)]
        weights = rng.normal(size=4)

        def run():
            state = LstmState.zeros(4, np.float64)
            caches = []
            for u, z in inputs:
                state, cache = lstm_step(params, u, z, state)
                caches.append(cache)
            return float(weights @ state.h), caches

        _, caches = run()
        total = params.zeros_like()
        grad_h, grad_c = weights.copy(), np.zeros(4)
        for cache in reversed(caches):
            grads, _, _, grad_prev = lstm_step_backward(cache, grad_h, grad_c)
            total.accumulate(grads)
            grad_h, grad_c = grad_prev.h, grad_prev.c

        for name, tensor in params.named_tensors().items():
            original = tensor.copy()

            def loss(values, tensor=tensor):
                tensor[...] = values
                return run()[0]

            numeric = finite_diff_grad(loss, original)
            tensor[...] = original
            assert relative_error(getattr(total, name), numeric) < 1e-6, name
