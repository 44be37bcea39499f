"""Training objectives: joint-kernel MMD, reconstruction MSE, combined loss.

The distribution-matching loss compares the joint batch {(z_i, r_i)}
against a product-of-marginals batch built by permuting the z rows and
drawing fresh prior samples for r.  It is the biased V-statistic
(diagonal terms included), with the product of per-component inverse
multiquadric kernels, and z is gradient-blocked in both arguments so
the loss shapes only the auxiliary branch (and, in the practical
variant, the post-channel alignment path).
"""

from __future__ import annotations

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor


def imq_kernel(x, y, scale=1000.0):
    """Inverse multiquadric kernel scale / (scale + ||x - y||^2), in (0, 1]."""
    if scale <= 0:
        raise ValueError("kernel scale must be positive")
    if isinstance(x, Tensor) or isinstance(y, Tensor):
        d = x - y
        return float(scale) / ((d * d).sum() + float(scale))
    d = np.asarray(x, dtype=np.float64) - np.asarray(y, dtype=np.float64)
    return float(scale / (scale + np.dot(d.ravel(), d.ravel())))


def _imq_gram(a, b, scale):
    """(L, L) kernel matrix between the rows of a and b."""
    sa = (a * a).sum(axis=1, keepdims=True)
    sb = (b * b).sum(axis=1, keepdims=True).reshape(1, -1)
    cross = a @ b.transpose((1, 0))
    d2 = sa + sb - cross * 2.0
    return float(scale) / (d2 + float(scale))


def mmd2_joint(z_a, r_a, z_b, r_b, scale=1000.0):
    """Biased squared MMD between joint batches of (z, r) pairs.

    Identical batches give exactly zero; the bounded kernel caps the
    value at 2.  Batch sizes must match and be at least 2.
    """
    la, lb = z_a.shape[0], z_b.shape[0]
    if la != lb:
        raise ValueError(f"batch sizes differ: {la} vs {lb}")
    if la < 2:
        raise ValueError("MMD needs batches of at least 2 samples")
    if scale <= 0:
        raise ValueError("kernel scale must be positive")
    k_aa = _imq_gram(z_a, z_a, scale) * _imq_gram(r_a, r_a, scale)
    k_bb = _imq_gram(z_b, z_b, scale) * _imq_gram(r_b, r_b, scale)
    k_ab = _imq_gram(z_a, z_b, scale) * _imq_gram(r_a, r_b, scale)
    return k_aa.mean() + k_bb.mean() - k_ab.mean() * 2.0


def forward_loss_ideal(z, r, scale, rng):
    """MMD^2 between {(z_i, r_i)} and {(z_perm(i), r'_i)}, r' ~ N(0, I).

    z is detached in both arguments: the gradient reaches parameters
    only through the r branch.
    """
    batch = z.shape[0]
    z_d = z.detach()
    perm = rng.permutation(batch)
    z_perm = ad.take(z_d, perm, axis=0)
    r_prior = Tensor(rng.standard_normal((batch, r.shape[1])).astype(r.dtype))
    return mmd2_joint(z_d, r, z_perm, r_prior, scale)


def forward_loss_practical(z, r, z_hat, r_prior, scale, rng):
    """MMD^2 between {(z_i, r_i)} and {(z_hat_perm(i), r'_i)}.

    `z_hat` is the post-channel aligned latent (gradients flow into the
    quantizer/channel/alignment parameters); `r_prior` is a
    reparameterized draw from the learnable prior.  z itself is
    detached exactly as in the ideal variant.
    """
    batch = z.shape[0]
    if z_hat.shape[0] != batch or r_prior.shape[0] != batch:
        raise ValueError("batch sizes of z, z_hat and prior draw must agree")
    z_d = z.detach()
    perm = rng.permutation(batch)
    z_hat_perm = ad.take(z_hat, perm, axis=0)
    return mmd2_joint(z_d, r, z_hat_perm, r_prior, scale)


def loss_recon(h_hat, h):
    """Batch mean of the squared Frobenius reconstruction error."""
    if tuple(h_hat.shape) != tuple(h.shape):
        raise ValueError(f"shape mismatch: {tuple(h_hat.shape)} vs {tuple(h.shape)}")
    d = h_hat - h
    b = d.shape[0]
    return (d * d).reshape(b, -1).sum(axis=1).mean()


def total_loss(recon, fwd, kappa):
    """Weighted objective recon + kappa * fwd; kappa must be positive."""
    if kappa <= 0:
        raise ValueError(f"kappa must be positive, got {kappa}")
    return recon + fwd * float(kappa)
