"""Substrate checks: exact gradients, accumulation semantics, the optimizer."""

import numpy as np
import pytest

from conftest import rel_err
from invcsi import autodiff as ad
from invcsi.autodiff import (NonFiniteError, ParamStore, Tensor, conv2d,
                             finite_diff_grad, forward_backward)


class TestBackwardBasics:
    def test_identity_composition(self):
        x = Tensor(np.array([2.0, -1.0]), requires_grad=True)
        y = x * 1.0
        y.backward()
        np.testing.assert_array_equal(x.grad, [1.0, 1.0])

    def test_exp_at_zero(self):
        x = Tensor(np.array(0.0), requires_grad=True)
        x.exp().backward()
        assert x.grad == pytest.approx(1.0, abs=1e-15)

    def test_accumulation_is_additive(self):
        x = Tensor(np.array([1.5]), requires_grad=True)
        y = (x * x).sum()
        y.backward()
        once = x.grad.copy()
        y2 = (x * x).sum()
        y2.backward()
        np.testing.assert_allclose(x.grad, 2 * once)

    def test_detach_blocks_gradient(self):
        x = Tensor(np.array([3.0]), requires_grad=True)
        (x.detach() * x).sum().backward()
        # d/dx (c * x) with c = detach(x): gradient is c, not 2x
        np.testing.assert_allclose(x.grad, [3.0])

    def test_no_grad_builds_constants(self):
        x = Tensor(np.array([1.0]), requires_grad=True)
        with ad.no_grad():
            y = x * 2.0
        assert not y.requires_grad and y._parents == ()


def _random_composition(x):
    # exercise broadcasting, reductions, reshapes, elementwise ops together
    a = x.reshape(2, 6)
    b = (a * 0.5 + 1.0).tanh() * a.abs()
    c = ad.softplus(b - 0.3) / (b * b + 1.0)
    d = ad.concat([c, c * 2.0], axis=1)
    return (d.sum(axis=1) * Tensor(np.array([0.7, -1.3]))).sum()


class TestGradientOracle:
    def test_composed_ops_match_finite_differences(self):
        rng = np.random.default_rng(0)
        for _ in range(20):
            x0 = rng.standard_normal(12)
            xt = Tensor(x0, requires_grad=True)
            _random_composition(xt).backward()
            num = finite_diff_grad(lambda a: float(_random_composition(Tensor(a)).data), x0)
            assert rel_err(xt.grad, num) <= 1e-4

    def test_matmul_batched(self):
        rng = np.random.default_rng(1)
        a0 = rng.standard_normal((3, 4, 5))
        b0 = rng.standard_normal((5, 2))
        w = rng.standard_normal((3, 4, 2))

        def f(a_arr, b_arr):
            return ((Tensor(a_arr) @ Tensor(b_arr)) * Tensor(w)).sum()

        at = Tensor(a0, requires_grad=True)
        bt = Tensor(b0, requires_grad=True)
        ((at @ bt) * Tensor(w)).sum().backward()
        num_a = finite_diff_grad(lambda a: float(f(a, b0).data), a0)
        num_b = finite_diff_grad(lambda b: float(f(a0, b).data), b0)
        assert rel_err(at.grad, num_a) <= 1e-4
        assert rel_err(bt.grad, num_b) <= 1e-4

    def test_take_cumsum_slice(self):
        rng = np.random.default_rng(2)
        x0 = rng.standard_normal((4, 3))
        idx = np.array([2, 0, 1, 2])
        w = rng.standard_normal((4, 3))

        def f(arr):
            t = Tensor(arr) if not isinstance(arr, Tensor) else arr
            y = ad.cumsum(ad.take(t, idx, axis=0), axis=1)
            return (y[1:, :] * Tensor(w[1:, :])).sum() + (y * Tensor(w)).sum()

        xt = Tensor(x0, requires_grad=True)
        f(xt).backward()
        num = finite_diff_grad(lambda a: float(f(a).data), x0)
        assert rel_err(xt.grad, num) <= 1e-4

    def test_conv2d_general_path(self):
        rng = np.random.default_rng(3)
        x0 = rng.standard_normal((2, 3, 4, 5))
        w0 = rng.standard_normal((2, 3, 3, 3))
        b0 = rng.standard_normal(2)
        g = rng.standard_normal((2, 2, 4, 5))

        xt = Tensor(x0, requires_grad=True)
        wt = Tensor(w0, requires_grad=True)
        bt = Tensor(b0, requires_grad=True)
        conv2d(xt, wt, bt).backward(g)
        for t, arr, label in ((xt, x0, "x"), (wt, w0, "w"), (bt, b0, "b")):
            def f(a):
                args = {"x": (a, w0, b0), "w": (x0, a, b0), "b": (x0, w0, a)}[label]
                y = conv2d(Tensor(args[0]), Tensor(args[1]), Tensor(args[2]))
                return float((y.data * g).sum())
            assert rel_err(t.grad, finite_diff_grad(f, arr)) <= 1e-4


class TestFiniteDiffOracle:
    def test_square(self):
        g = finite_diff_grad(lambda a: float(a[0] ** 2), np.array([3.0]))
        assert g[0] == pytest.approx(6.0, abs=1e-8)

    def test_abs_at_zero_is_symmetric(self):
        g = finite_diff_grad(lambda a: float(abs(a[0])), np.array([0.0]))
        assert g[0] == 0.0

    def test_eps_must_be_positive(self):
        with pytest.raises(ValueError):
            finite_diff_grad(lambda a: 0.0, np.zeros(1), eps=0.0)


class TestForwardBackward:
    def test_gradients_land_in_store(self):
        store = ParamStore(dtype=np.float64)
        p = store.add("w", np.array([2.0]))

        def fn(x):
            return (x * p).sum()

        forward_backward(fn, Tensor(np.array([3.0])))
        np.testing.assert_allclose(p.grad, [3.0])
        forward_backward(fn, Tensor(np.array([3.0])))
        np.testing.assert_allclose(p.grad, [6.0])  # accumulates until zeroed

    def test_nonfinite_output_aborts_with_identity(self):
        def fn(x):
            return (x * np.inf).sum()

        with pytest.raises(NonFiniteError):
            forward_backward(fn, Tensor(np.array([1.0])))

    def test_per_op_checks_name_the_op(self):
        ad.set_finite_checks(True)
        try:
            with np.errstate(over="ignore"), pytest.raises(NonFiniteError, match="exp"):
                Tensor(np.array([1e6])).exp()
        finally:
            ad.set_finite_checks(False)


class TestAdam:
    def test_zero_gradients_leave_parameters_unchanged(self):
        store = ParamStore(dtype=np.float64)
        p = store.add("w", np.array([1.0, -2.0]))
        store.zero_grad()
        store.adam_step(lr=1e-3)
        np.testing.assert_array_equal(p.data, [1.0, -2.0])

    def test_first_step_is_bias_corrected(self):
        # m_hat = g, v_hat = g^2  =>  step = -lr * g / (|g| + eps)
        store = ParamStore(dtype=np.float64)
        p = store.add("w", np.array([0.0]))
        p.grad[...] = 1.0
        store.adam_step(lr=1e-3)
        expected = -1e-3 / (1.0 + 1e-8)
        assert p.data[0] == pytest.approx(expected, rel=1e-9)

    def test_hand_computed_two_steps(self):
        store = ParamStore(dtype=np.float64)
        p = store.add("w", np.array([0.0]))
        m = v = 0.0
        w = 0.0
        for t in range(1, 3):
            g = 1.0
            p.grad[...] = g
            store.adam_step(lr=1e-3)
            m = 0.9 * m + 0.1 * g
            v = 0.999 * v + 0.001 * g * g
            w -= 1e-3 * (m / (1 - 0.9 ** t)) / (np.sqrt(v / (1 - 0.999 ** t)) + 1e-8)
            store.zero_grad()
            p.grad[...] = g
        assert p.data[0] == pytest.approx(w, rel=1e-12)

    def test_unzeroed_grads_accumulate_not_average(self):
        # two backward passes without zeroing == doubled gradient, and that
        # differs from two separate unit-gradient steps
        store = ParamStore(dtype=np.float64)
        p = store.add("w", np.array([0.0]))
        x = Tensor(np.array([1.0]))

        def fn(t):
            return (t * p).sum()

        forward_backward(fn, x)
        forward_backward(fn, x)
        np.testing.assert_allclose(p.grad, [2.0])

    def test_rejects_nonpositive_lr(self):
        store = ParamStore(dtype=np.float64)
        store.add("w", np.array([0.0]))
        with pytest.raises(ValueError):
            store.adam_step(lr=0.0)

    def test_frozen_parameters_skipped(self):
        store = ParamStore(dtype=np.float64)
        p = store.add("w", np.array([1.0]), trainable=False)
        q = store.add("u", np.array([1.0]))
        p.grad = np.array([1.0])
        q.grad[...] = 1.0
        store.adam_step(lr=0.1)
        assert p.data[0] == 1.0 and q.data[0] != 1.0


class TestParamStore:
    def test_duplicate_names_rejected(self):
        store = ParamStore()
        store.add("w", np.zeros(2))
        with pytest.raises(ValueError):
            store.add("w", np.zeros(2))

    def test_export_load_round_trip(self):
        store = ParamStore(dtype=np.float32)
        store.add("a", np.arange(4.0).reshape(2, 2))
        store.add("b", np.array(1.5))
        arrays = store.export_arrays()
        store2 = ParamStore(dtype=np.float32)
        store2.add("a", np.zeros((2, 2)))
        store2.add("b", np.array(0.0))
        store2.load_arrays(arrays)
        np.testing.assert_array_equal(store2["a"].data, store["a"].data)

    def test_load_shape_mismatch_names_tensor(self):
        store = ParamStore()
        store.add("inn.w", np.zeros((2, 2)))
        bad = {"inn.w": np.zeros(3), "opt.m:inn.w": np.zeros(3), "opt.v:inn.w": np.zeros(3)}
        with pytest.raises(ValueError, match="inn.w"):
            store.load_arrays(bad)

    def test_missing_tensor_named(self):
        store = ParamStore()
        store.add("inn.w", np.zeros(2))
        with pytest.raises(KeyError, match="inn.w"):
            store.load_arrays({})
