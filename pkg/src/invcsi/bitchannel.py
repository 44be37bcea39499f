"""Bit-level feedback channel: analytic transition model and a real simulator.

Training never transmits actual bits.  Instead, a soft assignment of
the quantized value onto the quantization points is pushed through the
analytic transition probability matrix of the modulated channel, and a
categorical sample is drawn with the Gumbel-Softmax trick -- straight
through, so the emitted value is always exactly a quantization level
while gradients follow the continuous relaxation.

Inference uses the genuine pipeline: binary encode, BPSK map, AWGN,
per-symbol sign detection (the ML rule for BPSK), decode.  The
Monte-Carlo agreement between the two paths is the module's central
invariant.
"""

from __future__ import annotations

import math

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor

CODERS = ("natural", "gray")


def qfunc(x):
    """Tail probability of the standard normal."""
    return 0.5 * math.erfc(x / math.sqrt(2.0))


def snr_db_to_linear(snr_db):
    return 10.0 ** (snr_db / 10.0)


def _codewords(bits, coder):
    """Integer codeword for each level index under the bit coder."""
    if coder not in CODERS:
        raise ValueError(f"coder must be one of {CODERS}, got {coder!r}")
    idx = np.arange(2 ** bits)
    return (idx ^ (idx >> 1)) if coder == "gray" else idx


def _gray_decode(codes):
    out = codes.copy()
    shift = 1
    while (out >> shift).any():
        out ^= out >> shift
        shift *= 2
    # standard prefix-xor inversion; loop above handles any width
    return out


def hamming_distances(bits, coder="natural"):
    """(Q, Q) pairwise Hamming distances between level codewords."""
    codes = _codewords(bits, coder)
    xor = codes[:, None] ^ codes[None, :]
    return np.array([[bin(v).count("1") for v in row] for row in xor])


def transition_matrix(snr_linear, bits, coder="natural"):
    """Column-stochastic (Q, Q) matrix P[i, j] = P(detect level i | sent level j).

    BPSK over AWGN with independent per-bit crossover Q(sqrt(snr)):
    P[i, j] = p^d * (1-p)^(B-d) with d the Hamming distance between the
    two codewords.
    """
    if snr_linear < 0:
        raise ValueError("linear SNR must be >= 0")
    p = qfunc(math.sqrt(snr_linear))
    d = hamming_distances(bits, coder)
    return (p ** d) * ((1.0 - p) ** (bits - d))


def soft_index_map(v, levels, beta):
    """Distance-softmax assignment of values onto quantization points.

    v: (B, M) tensor; levels: (Q, M) tensor; returns (B, Q, M) with
    columns summing to one over the level axis.
    """
    if beta <= 0:
        raise ValueError("beta must be positive")
    b = v.shape[0]
    q, m = levels.shape
    d = (v.reshape(b, 1, m) - levels.reshape(1, q, m)).abs() * (-1.0 / float(beta))
    shift = d.data.max(axis=1, keepdims=True)  # constant shift, softmax-invariant
    e = (d - Tensor(shift)).exp()
    return e / e.sum(axis=1, keepdims=True)


def categorical_probs(tpm, w):
    """Push soft assignments through the channel: pi[:, i, :] = sum_j P[i,j] w[:, j, :]."""
    q = tpm.shape[0]
    if w.shape[1] != q:
        raise ValueError(f"assignment has {w.shape[1]} levels, TPM expects {q}")
    p = Tensor(tpm.astype(w.dtype)) if not isinstance(tpm, Tensor) else tpm
    # (B, Q, M) -> (B, M, Q) @ (Q, Q)^T -> back
    wt = w.transpose((0, 2, 1))
    pit = wt @ p.transpose((1, 0))
    return pit.transpose((0, 2, 1))


def gumbel_noise(rng, shape, dtype=np.float64, eps=1e-20):
    u = rng.random(shape)
    return (-np.log(-np.log(u + eps) + eps)).astype(dtype)


def gumbel_softmax_sample(pi, tau, noise, hard=True, eps=1e-20):
    """Differentiable categorical sample over axis 1 of pi (B, Q, M).

    Returns the straight-through one-hot (value is exactly one-hot,
    gradient follows the tempered softmax) when `hard`, otherwise the
    continuous relaxation itself.
    """
    if tau <= 0:
        raise ValueError("tau must be positive")
    logits = (pi + eps).log() + Tensor(np.asarray(noise, dtype=pi.dtype))
    scaled = logits * (1.0 / float(tau))
    shift = scaled.data.max(axis=1, keepdims=True)
    e = (scaled - Tensor(shift)).exp()
    soft = e / e.sum(axis=1, keepdims=True)
    if not hard:
        return soft
    idx = np.argmax(soft.data, axis=1)
    onehot = np.zeros_like(soft.data)
    np.put_along_axis(onehot, idx[:, None, :], 1.0, axis=1)
    return ad.straight_through(soft, onehot)


def dequantize_soft(levels, pi_hat):
    """v_hat = levels^T pi_hat per dimension: (Q, M) x (B, Q, M) -> (B, M)."""
    q, m = levels.shape
    return (levels.reshape(1, q, m) * pi_hat).sum(axis=1)


def transmit_indices(indices, snr_linear, bits, coder="natural", rng=None):
    """Send level indices through the real BPSK/AWGN pipeline.

    Encodes each index to `bits` bits, maps 0 -> -1 / 1 -> +1, scales
    the signal by sqrt(snr) against unit-variance noise (so the per-bit
    flip probability is Q(sqrt(snr))), detects by sign, and decodes.
    snr_linear=None means a lossless channel.
    """
    indices = np.asarray(indices)
    if snr_linear is None or np.isinf(snr_linear):
        return indices.copy()
    if snr_linear < 0:
        raise ValueError("linear SNR must be >= 0")
    if rng is None:
        rng = np.random.default_rng()
    codes = _codewords(bits, coder)[indices]
    shifts = np.arange(bits - 1, -1, -1)
    sent = (codes[..., None] >> shifts) & 1
    symbols = 2.0 * sent - 1.0
    y = math.sqrt(snr_linear) * symbols + rng.standard_normal(sent.shape)
    detected_bits = (y > 0).astype(np.int64)
    detected_codes = np.zeros(indices.shape, dtype=np.int64)
    for k in range(bits):
        detected_codes = (detected_codes << 1) | detected_bits[..., k]
    if coder == "gray":
        detected_codes = _gray_decode(detected_codes)
    return detected_codes
