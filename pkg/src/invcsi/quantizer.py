"""Learnable non-uniform quantizer with soft (training) and hard (inference) paths.

Each latent dimension owns its region boundaries, step sizes and offset.
The soft path replaces the sign function with a smooth S-curve of
temperature T, so quantization error back-propagates into both the
encoder and the quantizer's own parameters.  Constraints hold by
construction: step sizes go through softplus (non-negative) and
boundaries are a base plus a cumulative sum of softplus increments
(sorted), so no projection step is ever needed.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def soft_sign(x, temperature):
    """Smooth odd surrogate for sign(): T*x / (1 + |T*x|), range (-1, 1)."""
    if temperature <= 0:
        raise ValueError("temperature must be positive")
    t = x * float(temperature)
    if isinstance(t, Tensor):
        return t / (t.abs() + 1.0)
    return t / (np.abs(t) + 1.0)


_np_softplus = ad.softplus_array


class AdaptiveQuantizer:
    """Per-dimension learnable quantizer over `dims` features at `bits` bits.

    Initialized to the uniform quantizer over `z_range`: boundaries at
    z_min + q*r with r = (z_max - z_min)/Q, step sizes r/2, offset at
    mid-range.  `trainable=False` freezes it there (uniform-quantizer
    ablation).
    """

    def __init__(self, store, dims, bits, z_range=(-2.0, 2.0), temperature=10.0,
                 name="quant", trainable=True):
        if not 1 <= bits <= 8:
            raise ValueError(f"bits must lie in [1, 8], got {bits}")
        z_min, z_max = float(z_range[0]), float(z_range[1])
        if not z_max > z_min:
            raise ValueError(f"invalid quantizer range ({z_min}, {z_max})")
        if temperature <= 0:
            raise ValueError("temperature must be positive")
        self.dims = int(dims)
        self.bits = int(bits)
        self.levels_count = 2 ** self.bits
        self.temperature = float(temperature)

        q = self.levels_count
        r = (z_max - z_min) / q
        dtype = store.dtype
        raw_step = np.full((q - 1, dims), ad.softplus_inv_exact(r / 2.0, dtype))
        base = np.full((1, dims), z_min + r)
        raw_inc = np.full((max(q - 2, 0), dims), ad.softplus_inv_exact(r, dtype))
        offset = np.full((dims,), (z_max + z_min) / 2.0)

        self.raw_step = store.add(f"{name}.raw_step", raw_step, trainable=trainable)
        self.base = store.add(f"{name}.base", base, trainable=trainable)
        self.raw_inc = store.add(f"{name}.raw_inc", raw_inc, trainable=trainable)
        self.offset = store.add(f"{name}.offset", offset, trainable=trainable)

    # -- derived parameters (differentiable) --------------------------------

    def step_sizes(self):
        """(Q-1, dims) non-negative scale factors."""
        return ad.softplus(self.raw_step)

    def boundaries(self):
        """(Q-1, dims) region boundaries, non-decreasing along axis 0."""
        if self.raw_inc.data.shape[0] == 0:
            return self.base * 1.0
        inc = ad.cumsum(ad.softplus(self.raw_inc), axis=0)
        zero = Tensor(np.zeros((1, self.dims), dtype=self.base.dtype))
        return self.base + ad.concat([zero, inc], axis=0)

    def levels(self):
        """(Q, dims) quantization points: v1 = c - sum(a), v_{q+1} = v_q + 2 a_q."""
        a = self.step_sizes()
        first = self.offset.reshape(1, self.dims) - a.sum(axis=0, keepdims=True)
        prefix = ad.concat(
            [Tensor(np.zeros((1, self.dims), dtype=a.dtype)), ad.cumsum(a, axis=0)],
            axis=0)
        return first + prefix * 2.0

    # -- numpy mirrors for the inference path --------------------------------

    def steps_array(self):
        return _np_softplus(self.raw_step.data)

    def boundaries_array(self):
        if self.raw_inc.data.shape[0] == 0:
            return self.base.data.copy()
        inc = np.cumsum(_np_softplus(self.raw_inc.data), axis=0)
        return self.base.data + np.concatenate(
            [np.zeros((1, self.dims), dtype=inc.dtype), inc], axis=0)

    def levels_array(self):
        a = self.steps_array()
        first = self.offset.data[None, :] - a.sum(axis=0, keepdims=True)
        prefix = np.concatenate(
            [np.zeros((1, self.dims), dtype=a.dtype), np.cumsum(a, axis=0)], axis=0)
        return first + 2.0 * prefix

    # -- quantization ---------------------------------------------------------

    def soft(self, z):
        """Differentiable quantization of z (B, dims)."""
        b = z.shape[0]
        zc = z.reshape(b, 1, self.dims)
        bounds = self.boundaries().reshape(1, -1, self.dims)
        contrib = self.step_sizes().reshape(1, -1, self.dims) * soft_sign(zc - bounds, self.temperature)
        return self.offset.reshape(1, self.dims) + contrib.sum(axis=1)

    def hard(self, z):
        """Ideal quantization of a numpy batch; sign(0) = 0 (boundary -> midpoint)."""
        z = np.asarray(z)
        a = self.steps_array()
        bounds = self.boundaries_array()
        s = np.sign(z[:, None, :] - bounds[None, :, :])
        return self.offset.data[None, :] + (a[None, :, :] * s).sum(axis=1)

    def hard_index(self, z):
        """Region index in [0, Q) per entry (ties at boundaries go down)."""
        z = np.asarray(z)
        bounds = self.boundaries_array()
        return (z[:, None, :] > bounds[None, :, :]).sum(axis=1)

    def dequantize_index(self, idx):
        """Map integer regions back to their quantization points."""
        levels = self.levels_array()
        return levels[idx, np.arange(self.dims)[None, :]]
