"""Coupling algebra, exact inversion, permutation bookkeeping, parameter sharing."""

import numpy as np
import pytest

from conftest import randomize_store
from invcsi.autodiff import ParamStore, Tensor
from invcsi.channel import CsiGeometry, segment
from invcsi.inn import CouplingBlock, CouplingOverflowError, InvertibleNetwork
from invcsi.losses import mmd2_joint

GEOM = CsiGeometry()
TOY = CsiGeometry(n_rx=4, n_tx=4, n_sub=4, patch=2, split=3)


def build(geom=GEOM, dtype=np.float64, blocks=3, hidden=8, rho="disabled", seed=0):
    store = ParamStore(dtype=dtype)
    net = InvertibleNetwork(store, geom, blocks=blocks, hidden=hidden,
                            rho_mode=rho, seed=seed)
    return store, net


class TestCouplingBlock:
    def test_zero_subnets_are_identity(self, rng):
        store = ParamStore(dtype=np.float64)
        block = CouplingBlock(store, "b", 3, 5, 4, "disabled", rng)
        for name in ("b.phi.w1", "b.eta.w1"):
            pass  # first layers stay random; zero final layers force identity
        x1 = Tensor(rng.standard_normal((2, 3, 2, 4)))
        x2 = Tensor(rng.standard_normal((2, 5, 2, 4)))
        y1, y2 = block.forward(x1, x2)
        np.testing.assert_array_equal(y1.data, x1.data)
        np.testing.assert_array_equal(y2.data, x2.data)

    def test_constant_phi_shifts_kept_half_only(self, rng):
        store = ParamStore(dtype=np.float64)
        block = CouplingBlock(store, "b", 2, 3, 4, "disabled", rng)
        store["b.phi.b2"].data[...] = 1.0  # phi == 1 everywhere, eta == 0
        x1 = Tensor(rng.standard_normal((1, 2, 2, 4)))
        x2 = Tensor(rng.standard_normal((1, 3, 2, 4)))
        y1, y2 = block.forward(x1, x2)
        np.testing.assert_allclose(y1.data, x1.data + 1.0, atol=1e-12)
        np.testing.assert_array_equal(y2.data, x2.data)

    @pytest.mark.parametrize("rho", ["disabled", "learned"])
    def test_random_block_round_trip(self, rng, rho):
        store = ParamStore(dtype=np.float64)
        block = CouplingBlock(store, "b", 2, 6, 8, rho, rng)
        randomize_store(store, rng, scale=0.4)
        x1 = Tensor(rng.standard_normal((4, 2, 2, 8)))
        x2 = Tensor(rng.standard_normal((4, 6, 2, 8)))
        y1, y2 = block.forward(x1, x2)
        b1, b2 = block.inverse(y1, y2)
        assert np.max(np.abs(b1.data - x1.data)) <= 1e-10
        assert np.max(np.abs(b2.data - x2.data)) <= 1e-10

    def test_inverse_order_regression(self, rng):
        # phi must be evaluated on the *recovered* second half; using the
        # transformed second half gives a different (wrong) answer
        store = ParamStore(dtype=np.float64)
        block = CouplingBlock(store, "b", 2, 2, 4, "disabled", rng)
        randomize_store(store, rng, scale=0.7)
        x1 = Tensor(rng.standard_normal((2, 2, 1, 4)))
        x2 = Tensor(rng.standard_normal((2, 2, 1, 4)))
        y1, y2 = block.forward(x1, x2)
        good1, good2 = block.inverse(y1, y2)
        np.testing.assert_allclose(good1.data, x1.data, atol=1e-10)
        wrong1 = y1 - block.phi(y2)  # phi on the wrong tensor
        assert np.max(np.abs(wrong1.data - x1.data)) > 1e-3

    def test_identity_rho_requires_matching_halves(self, rng):
        store = ParamStore(dtype=np.float64)
        with pytest.raises(ValueError, match="identity"):
            CouplingBlock(store, "b", 2, 6, 4, "identity", rng)

    def test_identity_rho_overflow_names_block(self, rng):
        store = ParamStore(dtype=np.float64)
        block = CouplingBlock(store, "blk7", 2, 2, 4, "identity", rng)
        x1 = Tensor(np.full((1, 2, 1, 4), 9.0))
        x2 = Tensor(np.ones((1, 2, 1, 4)))
        with pytest.raises(CouplingOverflowError, match="blk7"):
            block.forward(x1, x2)

    def test_identity_rho_round_trip_in_range(self, rng):
        store = ParamStore(dtype=np.float64)
        block = CouplingBlock(store, "b", 2, 2, 4, "identity", rng)
        randomize_store(store, rng, scale=0.2)
        x1 = Tensor(0.3 * rng.standard_normal((2, 2, 1, 4)))
        x2 = Tensor(0.3 * rng.standard_normal((2, 2, 1, 4)))
        y1, y2 = block.forward(x1, x2)
        b1, b2 = block.inverse(y1, y2)
        assert np.max(np.abs(b1.data - x1.data)) <= 1e-10
        assert np.max(np.abs(b2.data - x2.data)) <= 1e-10


class TestInvertibleNetwork:
    def test_zero_init_is_permutation_plus_reshape(self, rng):
        store, net = build()
        x = rng.standard_normal((2, 2, GEOM.n_rx, GEOM.width))
        z, r = net.forward(Tensor(x))
        h1, h2 = segment(x, GEOM.patch, GEOM.split)
        # blocks are identity at init, so output = permuted segmented input
        merged = np.concatenate([h1, h2], axis=1)
        for perm in net.permutations:
            merged = np.take(merged, perm, axis=1)
        np.testing.assert_array_equal(z.data, merged[:, :GEOM.split].reshape(2, -1))
        np.testing.assert_array_equal(r.data, merged[:, GEOM.split:].reshape(2, -1))

    def test_zero_input_zero_subnets(self):
        store, net = build()
        x = Tensor(np.zeros((1, 2, GEOM.n_rx, GEOM.width)))
        z, r = net.forward(x)
        assert np.all(z.data == 0) and np.all(r.data == 0)

    def test_latent_dims_desk_geometry(self):
        store, net = build()
        x = Tensor(np.zeros((3, 2, GEOM.n_rx, GEOM.width)))
        z, r = net.forward(x)
        assert z.shape == (3, 32) and r.shape == (3, 992)

    @pytest.mark.parametrize("scale", [0.0, 0.3, 1.5])
    def test_round_trip_float64(self, rng, scale):
        store, net = build(seed=3)
        randomize_store(store, rng, scale=0.4)
        x = scale * rng.standard_normal((8, 2, GEOM.n_rx, GEOM.width))
        z, r = net.forward(Tensor(x))
        back = net.inverse(z, r).data
        assert np.max(np.abs(back - x)) / (1.0 + np.max(np.abs(x))) <= 1e-10

    def test_round_trip_float32(self, rng):
        # weight scale 0.15 keeps activations O(1); larger scales make the
        # latents so large that float32 itself cannot represent x to 1e-5
        store, net = build(dtype=np.float32, seed=1)
        randomize_store(store, rng, scale=0.15)
        x = rng.standard_normal((8, 2, GEOM.n_rx, GEOM.width)).astype(np.float32)
        z, r = net.forward(Tensor(x))
        back = net.inverse(z, r).data
        assert np.max(np.abs(back - x)) / (1.0 + np.max(np.abs(x))) <= 1e-5

    def test_permutation_bookkeeping_exact(self):
        store, net = build(seed=9)
        for perm, inv in zip(net.permutations, net.inverse_permutations):
            np.testing.assert_array_equal(perm[inv], np.arange(perm.size))
            np.testing.assert_array_equal(inv[perm], np.arange(perm.size))

    def test_parameter_sharing_no_shadow_copies(self, rng):
        store, net = build(seed=2)
        randomize_store(store, rng, scale=0.3)
        x = rng.standard_normal((2, 2, GEOM.n_rx, GEOM.width))
        z0, r0 = net.forward(Tensor(x))
        back0 = net.inverse(z0.detach(), r0.detach()).data.copy()
        store["inn.block1.phi.w1"].data[0, 0, 1, 1] += 0.25
        z1, r1 = net.forward(Tensor(x))
        back1 = net.inverse(z0.detach(), r0.detach()).data
        assert np.any(z1.data != z0.data) or np.any(r1.data != r0.data)
        assert np.any(back1 != back0)

    def test_distribution_preservation_push_pull(self, rng):
        # push a batch forward, feed the exact pairs back: recovered == original,
        # and the joint-kernel MMD between the two sets is zero by construction
        store, net = build(TOY, seed=4)
        randomize_store(store, rng, scale=0.3)
        x = rng.standard_normal((10_000, 2, TOY.n_rx, TOY.width))
        z, r = net.forward(Tensor(x))
        back = net.inverse(z, r).data
        assert np.max(np.abs(back - x)) / (1.0 + np.max(np.abs(x))) <= 1e-10
        xa = Tensor(x[:256].reshape(256, -1))
        xb = Tensor(back[:256].reshape(256, -1))
        gap = mmd2_joint(xa, xa, xb, xb, 1000.0).item()
        assert abs(gap) <= 1e-9

    def test_geometry_mismatch_rejected(self):
        store, net = build()
        with pytest.raises(ValueError, match="geometry"):
            net.forward(Tensor(np.zeros((1, 2, 8, 128))))
        with pytest.raises(ValueError, match="latent dims"):
            net.inverse(Tensor(np.zeros((1, 5))), Tensor(np.zeros((1, 992))))

    def test_full_rate_degenerate_geometry(self, rng):
        geom = CsiGeometry(patch=4, split=32)
        store, net = build(geom, seed=0)
        x = rng.standard_normal((2, 2, geom.n_rx, geom.width))
        z, r = net.forward(Tensor(x))
        assert z.shape == (2, 1024) and r.shape == (2, 0)
        back = net.inverse(z, r).data
        np.testing.assert_allclose(back, x, atol=1e-10)
