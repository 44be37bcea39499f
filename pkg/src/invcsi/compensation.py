"""Post-channel compensation: residual latent alignment and a learnable prior.

The alignment net is a residual CNN on the unflattened latent layout
whose weights and biases all start at zero, so before any training it
is an exact identity.  The auxiliary prior is an isotropic Gaussian
with a trainable mean vector and scalar scale, sampled with the
reparameterization trick so both receive gradients.
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


class LatentAlignment:
    """z_hat = v_hat + cnn(unflatten(v_hat)), zero-initialized throughout."""

    def __init__(self, store, latent_shape, hidden=16, name="lan"):
        c, h, w = latent_shape
        self.latent_shape = (int(c), int(h), int(w))
        self.w1 = store.add(f"{name}.w1", np.zeros((hidden, c, 3, 3)))
        self.b1 = store.add(f"{name}.b1", np.zeros(hidden))
        self.w2 = store.add(f"{name}.w2", np.zeros((c, hidden, 3, 3)))
        self.b2 = store.add(f"{name}.b2", np.zeros(c))

    def __call__(self, v):
        b = v.shape[0]
        c, h, w = self.latent_shape
        u = v.reshape(b, c, h, w)
        y = ad.conv2d(u, self.w1, self.b1, padding=1).relu()
        y = ad.conv2d(y, self.w2, self.b2, padding=1)
        return v + y.reshape(b, c * h * w)


class AuxiliaryPrior:
    """N(mu, sigma^2 I) with trainable mu (vector) and sigma (scalar, softplus)."""

    def __init__(self, store, dim, name="prior"):
        self.dim = int(dim)
        self.mu = store.add(f"{name}.mu", np.zeros(dim))
        self.raw_sigma = store.add(f"{name}.raw_sigma", ad.softplus_inv(1.0))

    def sigma(self):
        return ad.softplus(self.raw_sigma)

    def sample(self, batch, rng):
        """Reparameterized draw: sigma * e + mu with e ~ N(0, I)."""
        e = Tensor(rng.standard_normal((batch, self.dim)).astype(self.mu.dtype))
        return e * self.sigma() + self.mu.reshape(1, self.dim)


def standard_normal_sample(batch, dim, rng, dtype=np.float32):
    """Constant N(0, I) draw (ideal-transmission prior, no parameters)."""
    return Tensor(rng.standard_normal((batch, dim)).astype(dtype))
