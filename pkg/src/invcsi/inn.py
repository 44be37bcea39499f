"""Invertible encoder/decoder built from affine coupling blocks.

One block updates the kept half from the discarded half and then the
discarded half from the updated kept half, so each step is invertible
in closed form regardless of what the inner sub-networks compute.  The
forward and inverse passes read the same parameter tensors out of one
store; there is no decoder-side copy.

Fixed seeded channel permutations between blocks remix which channels
end up in the transmitted half, and both sub-network output layers are
zero-initialized so an untrained stack is an exact permutation plus
reshape.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .channel import segment, desegment

RHO_MODES = ("disabled", "identity", "learned")
SCALE_CLAMP = 2.0


class CouplingOverflowError(FloatingPointError):
    """Scale argument left the safe range for exp() in some block."""


class CouplingSubnet:
    """conv3x3 -> relu -> concat skip -> conv3x3, final layer zero-init."""

    def __init__(self, store, prefix, in_ch, out_ch, hidden, rng):
        fan_in = max(1, in_ch * 9)
        w1 = rng.standard_normal((hidden, in_ch, 3, 3)) * np.sqrt(2.0 / fan_in)
        self.w1 = store.add(f"{prefix}.w1", w1)
        self.b1 = store.add(f"{prefix}.b1", np.zeros(hidden))
        self.w2 = store.add(f"{prefix}.w2", np.zeros((out_ch, in_ch + hidden, 3, 3)))
        self.b2 = store.add(f"{prefix}.b2", np.zeros(out_ch))

    def __call__(self, x):
        h = ad.conv2d(x, self.w1, self.b1, padding=1).relu()
        u = ad.concat([x, h], axis=1)
        return ad.conv2d(u, self.w2, self.b2, padding=1)


class CouplingBlock:
    """One invertible block: two affine coupling layers sharing a split.

    Forward:  y1 = x1 + phi(x2);  y2 = x2 * exp(s(y1)) + eta(y1)
    Inverse:  x2 = (y2 - eta(y1)) / exp(s(y1));  x1 = y1 - phi(x2)

    The inverse must recover x2 first: phi is evaluated on the
    *recovered* x2, not on y2.  With the scale path disabled (default)
    the exp term is identically one.
    """

    def __init__(self, store, prefix, split, rest, hidden, rho_mode, rng):
        if rho_mode not in RHO_MODES:
            raise ValueError(f"rho_mode must be one of {RHO_MODES}, got {rho_mode!r}")
        if rho_mode == "identity" and split != rest:
            raise ValueError(
                "identity scale requires equal channel halves "
                f"(got {split} and {rest}); use 'disabled' or 'learned'")
        self.prefix = prefix
        self.rho_mode = rho_mode
        self.phi = CouplingSubnet(store, f"{prefix}.phi", rest, split, hidden, rng)
        self.eta = CouplingSubnet(store, f"{prefix}.eta", split, rest, hidden, rng)
        self.rho = None
        if rho_mode == "learned":
            self.rho = CouplingSubnet(store, f"{prefix}.rho", split, rest, hidden, rng)

    def _scale(self, y1):
        if self.rho_mode == "disabled":
            return None
        if self.rho_mode == "identity":
            if float(np.max(np.abs(y1.data), initial=0.0)) > SCALE_CLAMP:
                raise CouplingOverflowError(
                    f"block {self.prefix!r}: |scale| exceeded {SCALE_CLAMP}, exp would overflow")
            return y1
        # learned: soft-clamp keeps exp() bounded and the map smooth
        return self.rho(y1).tanh() * SCALE_CLAMP

    def forward(self, x1, x2):
        y1 = x1 + self.phi(x2)
        s = self._scale(y1)
        if s is None:
            y2 = x2 + self.eta(y1)
        else:
            y2 = x2 * s.exp() + self.eta(y1)
        return y1, y2

    def inverse(self, y1, y2):
        s = self._scale(y1)
        if s is None:
            x2 = y2 - self.eta(y1)
        else:
            x2 = (y2 - self.eta(y1)) / s.exp()
        x1 = y1 - self.phi(x2)
        return x1, x2


class InvertibleNetwork:
    """Stacked coupling blocks with fixed seeded channel permutations.

    forward maps a (B, 2, H, W) real CSI tensor to (z, r) of dims
    (latent_dim, aux_dim); inverse is its exact inverse with the same
    parameters.
    """

    def __init__(self, store, geom, blocks=3, hidden=32, rho_mode="disabled",
                 seed=0, name="inn"):
        if blocks < 0:
            raise ValueError("block count must be >= 0")
        self.geom = geom
        self.split = geom.split
        self.rest = geom.channels - geom.split
        rng = np.random.default_rng(np.random.SeedSequence((seed, 0xC0)))
        self.permutations = [rng.permutation(geom.channels) for _ in range(max(0, blocks - 1))]
        self.inverse_permutations = [np.argsort(p) for p in self.permutations]
        self.blocks = [
            CouplingBlock(store, f"{name}.block{i}", self.split, self.rest,
                          hidden, rho_mode, rng)
            for i in range(blocks)
        ]

    def _permute(self, h1, h2, perm):
        merged = ad.concat([h1, h2], axis=1) if isinstance(h1, Tensor) \
            else np.concatenate([h1, h2], axis=1)
        if isinstance(merged, Tensor):
            merged = ad.take(merged, perm, axis=1)
        else:
            merged = np.take(merged, perm, axis=1)
        return merged[:, :self.split], merged[:, self.split:]

    def forward(self, x):
        """(B, 2, H, W) -> (z (B, M), r (B, N-M))"""
        self._check_input(x)
        h1, h2 = segment(x, self.geom.patch, self.split)
        for i, block in enumerate(self.blocks):
            if i > 0:
                h1, h2 = self._permute(h1, h2, self.permutations[i - 1])
            h1, h2 = block.forward(h1, h2)
        b = x.shape[0]
        return h1.reshape(b, -1), h2.reshape(b, -1)

    def inverse(self, z, r):
        """Exact inverse of :meth:`forward` using the same parameters."""
        b = z.shape[0]
        if z.shape[1] != self.geom.latent_dim or r.shape[1] != self.geom.aux_dim:
            raise ValueError(
                f"latent dims ({z.shape[1]}, {r.shape[1]}) do not match geometry "
                f"({self.geom.latent_dim}, {self.geom.aux_dim})")
        sh, sw = self.geom.spatial
        h1 = z.reshape(b, self.split, sh, sw)
        h2 = r.reshape(b, self.rest, sh, sw)
        for i in range(len(self.blocks) - 1, -1, -1):
            h1, h2 = self.blocks[i].inverse(h1, h2)
            if i > 0:
                h1, h2 = self._permute(h1, h2, self.inverse_permutations[i - 1])
        return desegment(h1, h2, self.geom.patch)

    def _check_input(self, x):
        expected = (2, self.geom.n_rx, self.geom.width)
        if tuple(x.shape[1:]) != expected:
            raise ValueError(f"input shape {tuple(x.shape[1:])} does not match geometry {expected}")

    @property
    def latent_shape(self):
        sh, sw = self.geom.spatial
        return (self.split, sh, sw)
