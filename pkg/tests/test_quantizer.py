"""Soft/hard quantization paths, learned-parameter constraints, level mapping."""

import numpy as np
import pytest

from conftest import rel_err
from invcsi.autodiff import ParamStore, Tensor, finite_diff_grad, softplus_inv_exact
from invcsi.quantizer import AdaptiveQuantizer, soft_sign


def make_quant(dims=3, bits=2, dtype=np.float64, temperature=10.0, z_range=(-2.0, 2.0)):
    store = ParamStore(dtype=dtype)
    q = AdaptiveQuantizer(store, dims, bits, z_range=z_range, temperature=temperature)
    return store, q


def ideal_uniform(z, bits, z_min=-2.0, z_max=2.0):
    """Literal uniform quantization formula used as the oracle."""
    q = 2 ** bits
    r = (z_max - z_min) / q
    out = np.full_like(z, (z_max + z_min) / 2.0)
    for k in range(1, q):
        out += (r / 2.0) * np.sign(z - (z_min + k * r))
    return out


class TestSoftSign:
    def test_zero(self):
        assert soft_sign(0.0 * np.ones(1), 10.0)[0] == 0.0

    def test_half_at_inverse_temperature(self):
        for t in (0.5, 10.0, 123.0):
            assert soft_sign(np.array([1.0 / t]), t)[0] == pytest.approx(0.5, abs=1e-12)

    def test_direct_value(self):
        assert soft_sign(np.array([2.0]), 10.0)[0] == pytest.approx(20.0 / 21.0, abs=1e-12)

    def test_odd_bounded_monotone(self, rng):
        x = np.sort(rng.standard_normal(100) * 5)
        y = soft_sign(x, 7.0)
        np.testing.assert_allclose(soft_sign(-x, 7.0), -y, atol=1e-12)
        assert np.all(np.abs(y) < 1.0)
        assert np.all(np.diff(y) > 0)

    def test_temperature_must_be_positive(self):
        with pytest.raises(ValueError):
            soft_sign(np.zeros(1), 0.0)


class TestSoftQuantize:
    def test_symmetric_zero(self):
        store, q = make_quant()
        v = q.soft(Tensor(np.zeros((1, 3))))
        np.testing.assert_allclose(v.data, 0.0, atol=1e-15)

    def test_high_temperature_matches_hard(self):
        store, q = make_quant(temperature=1e6)
        z = np.full((1, 3), 0.3)
        v = q.soft(Tensor(z))
        assert v.data[0, 0] == pytest.approx(0.5, abs=1e-3)
        np.testing.assert_allclose(v.data, q.hard(z), atol=1e-3)

    def test_gradient_matches_finite_differences(self):
        store, q = make_quant(temperature=10.0)
        z0 = np.array([[0.3, -1.1, 0.77]])
        w = np.array([[1.0, -0.5, 2.0]])

        def f(z):
            return float((q.soft(Tensor(np.asarray(z))).data * w).sum())

        zt = Tensor(z0, requires_grad=True)
        (q.soft(zt) * Tensor(w)).sum().backward()
        num = finite_diff_grad(f, z0)
        assert rel_err(zt.grad, num) <= 1e-4

    def test_parameter_gradients_match_finite_differences(self):
        store, q = make_quant(temperature=10.0)
        z = np.array([[0.3, -1.1, 0.77], [1.9, 0.05, -0.4]])
        loss = (q.soft(Tensor(z)) * q.soft(Tensor(z))).sum()
        loss.backward()
        for name in ("quant.raw_step", "quant.base", "quant.raw_inc", "quant.offset"):
            p = store[name]
            orig = p.data.copy()

            def f(a):
                p.data[...] = a
                out = float((q.soft(Tensor(z)).data ** 2).sum())
                p.data[...] = orig
                return out

            num = finite_diff_grad(f, orig)
            assert rel_err(p.grad, num) <= 1e-4, name


class TestHardQuantize:
    def test_mid_region_value(self):
        store, q = make_quant()
        assert q.hard(np.array([[0.3, 0.3, 0.3]]))[0, 0] == 0.5

    def test_boundary_maps_to_midpoint(self):
        # sign(0) = 0 leaves only the offset: exactly mid-range
        store, q = make_quant()
        assert q.hard(np.zeros((1, 3)))[0, 0] == 0.0

    def test_saturation_below_range(self):
        store, q = make_quant()
        assert q.hard(np.full((1, 3), -5.0))[0, 0] == -1.5

    def test_matches_ideal_uniform_formula(self, rng):
        for bits in (1, 2, 3, 4):
            store, q = make_quant(bits=bits)
            z = rng.uniform(-3, 3, (100, 3))
            np.testing.assert_allclose(q.hard(z), ideal_uniform(z, bits), atol=1e-12)

    def test_index_and_value_agree_off_boundary(self, rng):
        store, q = make_quant(bits=3)
        z = rng.uniform(-2.5, 2.5, (50, 3))
        bounds = q.boundaries_array()
        off = np.min(np.abs(z[:, None, :] - bounds[None]), axis=1) > 1e-6
        idx = q.hard_index(z)
        vals = q.dequantize_index(idx)
        np.testing.assert_allclose(np.where(off, vals, 0), np.where(off, q.hard(z), 0),
                                   atol=1e-12)

    def test_index_equals_nearest_level_at_init(self, rng):
        store, q = make_quant(bits=2)
        z = rng.uniform(-3, 3, (200, 3))
        levels = q.levels_array()
        nearest = np.argmin(np.abs(z[:, None, :] - levels[None]), axis=1)
        np.testing.assert_array_equal(q.hard_index(z), nearest)


class TestQuantPoints:
    def test_unrolled_recurrence(self):
        store = ParamStore(dtype=np.float64)
        q = AdaptiveQuantizer(store, 1, 2)
        store["quant.raw_step"].data[...] = softplus_inv_exact(1.0, np.float64)
        store["quant.offset"].data[...] = 0.0
        np.testing.assert_allclose(q.levels_array()[:, 0], [-3.0, -1.0, 1.0, 3.0],
                                   atol=1e-12)

    def test_uniform_init_levels(self):
        store, q = make_quant(bits=2)
        np.testing.assert_array_equal(q.levels_array()[:, 0], [-1.5, -0.5, 0.5, 1.5])
        np.testing.assert_array_equal(q.boundaries_array()[:, 0], [-1.0, 0.0, 1.0])

    def test_bit1_init(self):
        store, q = make_quant(bits=1)
        np.testing.assert_array_equal(q.boundaries_array()[:, 0], [0.0])
        np.testing.assert_array_equal(q.levels_array()[:, 0], [-1.0, 1.0])
        assert q.steps_array()[0, 0] == 1.0 and q.offset.data[0] == 0.0

    def test_vanishing_steps_collapse_to_offset(self):
        store, q = make_quant(bits=2)
        store["quant.raw_step"].data[...] = -45.0  # softplus ~ 3e-20
        np.testing.assert_allclose(q.levels_array(),
                                   np.broadcast_to(q.offset.data, (4, 3)), atol=1e-12)

    def test_levels_tensor_matches_array(self):
        store, q = make_quant(bits=3)
        np.testing.assert_array_equal(q.levels().data, q.levels_array())


class TestInvariants:
    def test_monotone_in_each_coordinate(self, rng):
        store, q = make_quant(bits=3, temperature=5.0)
        z = np.sort(rng.uniform(-3, 3, (64, 1)), axis=0) @ np.ones((1, 3))
        soft = q.soft(Tensor(z)).data
        hard = q.hard(z)
        assert np.all(np.diff(soft, axis=0) >= -1e-12)
        assert np.all(np.diff(hard, axis=0) >= 0)

    def test_soft_hard_consistency_away_from_boundaries(self):
        for bits in (2, 3, 4):
            store, q = make_quant(bits=bits, temperature=1e6)
            grid = np.linspace(-2.5, 2.5, 1001)[:, None] @ np.ones((1, 3))
            bounds = q.boundaries_array()
            keep = np.min(np.abs(grid[:, None, :] - bounds[None]), axis=1) > 1e-3
            gap = np.abs(q.soft(Tensor(grid)).data - q.hard(grid))
            assert float(np.max(gap[keep])) <= 1e-3

    def test_constraints_hold_after_optimizer_steps(self, rng):
        store, q = make_quant(bits=3, dtype=np.float64)
        for _ in range(25):
            z = Tensor(rng.uniform(-2.5, 2.5, (16, 3)))
            (q.soft(z) ** 2).sum().backward()
            store.adam_step(lr=0.05)
            store.zero_grad()
            assert np.all(q.steps_array() >= 0)
            b = q.boundaries_array()
            assert np.all(np.diff(b, axis=0) >= 0)

    def test_boundary_between_adjacent_levels_at_init(self):
        for bits in (1, 2, 3, 4):
            store, q = make_quant(bits=bits)
            levels = q.levels_array()
            bounds = q.boundaries_array()
            assert np.all(bounds > levels[:-1]) and np.all(bounds < levels[1:])


class TestValidation:
    def test_bits_range(self):
        store = ParamStore()
        with pytest.raises(ValueError):
            AdaptiveQuantizer(store, 2, 0)
        with pytest.raises(ValueError):
            AdaptiveQuantizer(store, 2, 9)

    def test_invalid_range(self):
        store = ParamStore()
        with pytest.raises(ValueError, match="range"):
            AdaptiveQuantizer(store, 2, 2, z_range=(1.0, -1.0))
