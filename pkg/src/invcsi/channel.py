"""Synthetic downlink CSI generation, invertible preprocessing, dataset files.

The generator is a clustered-multipath geometric model over uniform
linear arrays with half-wavelength spacing: each sample is a sum of a
few paths, each with a receive/transmit steering-vector outer product,
a per-subcarrier delay phase ramp, and a complex Gaussian gain whose
variance decays exponentially with delay.  Samples are scaled so the
per-entry complex variance is exactly one, which keeps dataset-level
standardization well conditioned.

Preprocessing is a bijection: per-axis unitary DFT into the
angular/delay domain, real/imaginary stacking, then space-to-depth
patching with a channel split.  Every stage has an exact inverse.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, concat as _t_concat

MAGIC = b"CSID"
DATASET_VERSION = 1


class DatasetFormatError(ValueError):
    """Raised for malformed dataset files (bad magic, truncation, ...)."""


@dataclass(frozen=True)
class CsiGeometry:
    """Antenna/subcarrier shape plus the patch segmentation choice."""

    n_rx: int = 4
    n_tx: int = 8
    n_sub: int = 16
    patch: int = 4
    split: int = 1

    def __post_init__(self):
        if min(self.n_rx, self.n_tx, self.n_sub) < 1:
            raise ValueError("antenna/subcarrier counts must be >= 1")
        if self.patch < 1:
            raise ValueError("patch size must be >= 1")
        if self.n_rx % self.patch or self.width % self.patch:
            raise ValueError(
                f"patch size {self.patch} must divide both N_r={self.n_rx} and "
                f"N_t*N_c={self.width}; pick a different patch size (no implicit padding)")
        if not 1 <= self.split <= self.channels:
            raise ValueError(
                f"channel split must lie in [1, {self.channels}], got {self.split}")

    @property
    def width(self):
        return self.n_tx * self.n_sub

    @property
    def channels(self):
        return 2 * self.patch * self.patch

    @property
    def spatial(self):
        return (self.n_rx // self.patch, self.width // self.patch)

    @property
    def total_dim(self):
        return 2 * self.n_rx * self.width

    @property
    def latent_dim(self):
        h, w = self.spatial
        return self.split * h * w

    @property
    def aux_dim(self):
        return self.total_dim - self.latent_dim

    @property
    def ratio(self):
        return self.latent_dim / self.total_dim


@dataclass(frozen=True)
class DatasetStats:
    """Global affine standardization constants (one pair per dataset)."""

    mean: float
    std: float


def steering_vector(n, sin_angle):
    """ULA response, half-wavelength spacing, unit-modulus entries."""
    k = np.arange(n)[:, None]
    return np.exp(1j * np.pi * k * np.atleast_1d(sin_angle)[None, :])


def synthesize_channel(gains, sin_aoa, sin_aod, delays, geom):
    """Deterministic multipath channel from explicit path parameters.

    Returns an (n_rx, n_tx*n_sub) complex matrix laid out as the
    horizontal concatenation of per-subcarrier blocks.
    """
    gains = np.atleast_1d(np.asarray(gains, dtype=np.complex128))
    a_rx = steering_vector(geom.n_rx, sin_aoa)                  # (n_rx, P)
    a_tx = steering_vector(geom.n_tx, sin_aod)                  # (n_tx, P)
    phase = np.exp(-2j * np.pi * np.outer(np.atleast_1d(delays), np.arange(geom.n_sub)))
    h = np.einsum("p,rp,tp,pn->rnt", gains, a_rx, np.conj(a_tx), phase)
    return h.reshape(geom.n_rx, geom.width)


def generate_channels(count, geom=None, seed=0, path_range=(3, 8),
                      delay_scale=0.05, power_decay=0.025):
    """Draw `count` CSI samples; deterministic given `seed`.

    Per sample: a path count uniform over `path_range`, angles uniform
    in sine space, delays exponential with mean `delay_scale` (in
    cycles per subcarrier), and path variances exp(-delay/power_decay).
    Gains are complex Gaussian and the sample is scaled by the root of
    the total path variance, so each complex entry has unit variance.
    """
    geom = geom or CsiGeometry()
    if count < 1:
        raise ValueError("count must be >= 1")
    lo, hi = path_range
    if lo < 1 or hi < lo:
        raise ValueError(f"degenerate path range {path_range}; need at least one path")
    out = np.empty((count, geom.n_rx, geom.width), dtype=np.complex64)
    streams = np.random.SeedSequence(seed).spawn(count)
    for i, ss in enumerate(streams):
        rng = np.random.default_rng(ss)
        n_paths = int(rng.integers(lo, hi + 1))
        sin_aoa = rng.uniform(-1.0, 1.0, n_paths)
        sin_aod = rng.uniform(-1.0, 1.0, n_paths)
        delays = np.sort(rng.exponential(delay_scale, n_paths))
        var = np.exp(-delays / power_decay)
        gains = np.sqrt(var / 2.0) * (rng.standard_normal(n_paths)
                                      + 1j * rng.standard_normal(n_paths))
        h = synthesize_channel(gains, sin_aoa, sin_aod, delays, geom)
        out[i] = (h / np.sqrt(var.sum())).astype(np.complex64)
    return out


# -- angular-domain transform -----------------------------------------------------


def to_angular(h, geom):
    """Unitary DFT over the rx-antenna, tx-antenna and subcarrier axes.

    Accepts (..., n_rx, n_tx*n_sub); the flattened axis is unfolded to
    (n_sub, n_tx) per the storage layout, each axis is transformed with
    orthonormal scaling, and the result is re-flattened.  Exactly
    norm-preserving and invertible via :func:`from_angular`.
    """
    shape = h.shape
    h3 = h.reshape(shape[:-1] + (geom.n_sub, geom.n_tx))
    g = np.fft.fftn(h3, axes=(-3, -2, -1), norm="ortho")
    return g.reshape(shape).astype(h.dtype, copy=False)


def from_angular(g, geom):
    shape = g.shape
    g3 = g.reshape(shape[:-1] + (geom.n_sub, geom.n_tx))
    h = np.fft.ifftn(g3, axes=(-3, -2, -1), norm="ortho")
    return h.reshape(shape).astype(g.dtype, copy=False)


def to_real(h):
    """Stack real/imag parts along a new leading channel axis: (..., 2, R, W)."""
    return np.stack([h.real, h.imag], axis=-3)


def to_complex(x):
    re = np.take(x, 0, axis=-3)
    im = np.take(x, 1, axis=-3)
    return re + 1j * im


# -- patch segmentation ------------------------------------------------------------


def segment(x, patch, split):
    """Space-to-depth with `patch`x`patch` patches, then a channel split.

    `x` has shape (B, 2, H, W); works on numpy arrays and autodiff
    tensors alike (pure reshape/transpose/slice, so the map is an exact
    permutation of elements).  Returns (h1, h2) with `split` and
    2*patch**2 - split channels; h2 may have zero channels in the
    degenerate full-rate configuration split == 2*patch**2.
    """
    b, ch, hh, ww = x.shape
    p = patch
    if hh % p or ww % p:
        raise ValueError(
            f"patch size {p} does not divide spatial dims ({hh}, {ww}); "
            "pick a different patch size (no implicit padding)")
    channels = ch * p * p
    if not 1 <= split <= channels:
        raise ValueError(f"channel split must lie in [1, {channels}], got {split}")
    y = x.reshape(b, ch, hh // p, p, ww // p, p)
    y = y.transpose((0, 1, 3, 5, 2, 4))
    y = y.reshape(b, channels, hh // p, ww // p)
    return y[:, :split], y[:, split:]


def desegment(h1, h2, patch, channels_in=2):
    """Exact inverse of :func:`segment`."""
    p = patch
    if isinstance(h1, Tensor):
        y = _t_concat([h1, h2], axis=1)
    else:
        y = np.concatenate([h1, h2], axis=1)
    b, c, hp, wp = y.shape
    y = y.reshape(b, channels_in, p, p, hp, wp)
    y = y.transpose((0, 1, 4, 2, 5, 3))
    return y.reshape(b, channels_in, hp * p, wp * p)


# -- standardization ---------------------------------------------------------------


def normalize(x):
    """Standardize to global zero mean / unit variance over all real entries."""
    mean = float(np.mean(x, dtype=np.float64))
    std = float(np.std(x, dtype=np.float64))
    if std <= 0.0 or not np.isfinite(std):
        raise ValueError("dataset has zero variance; cannot standardize")
    stats = DatasetStats(mean=mean, std=std)
    return apply_stats(x, stats), stats


def apply_stats(x, stats):
    return ((x - stats.mean) / stats.std).astype(x.dtype, copy=False)


def denormalize(x, stats):
    return (x * stats.std + stats.mean).astype(x.dtype, copy=False)


# -- dataset files -----------------------------------------------------------------

_HEADER = struct.Struct("<4sIIIII")


def write_dataset(path, samples, geom):
    """Write samples to the binary dataset format (complex64 payload)."""
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[1:] != (geom.n_rx, geom.width):
        raise ValueError(
            f"samples must have shape (count, {geom.n_rx}, {geom.width}), got {samples.shape}")
    payload = np.ascontiguousarray(samples.astype(np.complex64)).view(np.float32)
    if payload.dtype.byteorder not in ("<", "="):
        payload = payload.astype("<f4")
    with open(path, "wb") as f:
        f.write(_HEADER.pack(MAGIC, DATASET_VERSION, samples.shape[0],
                             geom.n_rx, geom.n_tx, geom.n_sub))
        f.write(payload.tobytes())


def read_dataset(path):
    """Read a dataset file; returns (samples, geometry without patching)."""
    with open(path, "rb") as f:
        head = f.read(_HEADER.size)
        if len(head) != _HEADER.size:
            raise DatasetFormatError(f"{path}: truncated header")
        magic, version, count, n_rx, n_tx, n_sub = _HEADER.unpack(head)
        if magic != MAGIC:
            raise DatasetFormatError(f"{path}: bad magic {magic!r}, expected {MAGIC!r}")
        if version != DATASET_VERSION:
            raise DatasetFormatError(f"{path}: unsupported version {version}")
        expected = count * n_rx * n_tx * n_sub * 8
        raw = f.read()
    if len(raw) != expected:
        raise DatasetFormatError(
            f"{path}: payload has {len(raw)} bytes, expected {expected} (truncated or corrupt)")
    flat = np.frombuffer(raw, dtype="<f4").astype(np.float32)
    samples = flat.view(np.complex64).reshape(count, n_rx, n_tx * n_sub)
    return samples.copy(), dict(n_rx=n_rx, n_tx=n_tx, n_sub=n_sub)
