"""Built-in invariant suites for the `invcsi selftest` subcommand.

Runs the fast structural checks (round-trip bijectivity, analytic
gradients against finite differences, channel-model Monte Carlo
agreement, categorical sampling frequencies) and prints one line per
suite.  Returns the number of failed suites; the CLI exits 4 when
nonzero.
"""

from __future__ import annotations

import numpy as np

from . import bitchannel, losses
from .autodiff import ParamStore, Tensor, finite_diff_grad
from .channel import CsiGeometry
from .inn import InvertibleNetwork
from .pipeline import FeedbackPipeline, ModelConfig


def _suite_bijectivity():
    geom = CsiGeometry(n_rx=4, n_tx=8, n_sub=16, patch=4, split=1)
    checks = 0
    for model_seed in range(3):
        store = ParamStore(dtype=np.float64)
        net = InvertibleNetwork(store, geom, blocks=3, hidden=8, seed=model_seed)
        rng = np.random.default_rng(1000 + model_seed)
        for name, p in store.items():
            p.data[...] = 0.3 * rng.standard_normal(p.data.shape)
        x = rng.standard_normal((32, 2, geom.n_rx, geom.width))
        z, r = net.forward(Tensor(x))
        back = net.inverse(z, r).data
        err = np.max(np.abs(back - x)) / (1.0 + np.max(np.abs(x)))
        checks += 1
        if err > 1e-10:
            return checks, f"round-trip error {err:.2e} exceeds 1e-10"
    return checks, None


def _suite_gradients():
    rng = np.random.default_rng(7)
    cfg = ModelConfig(mode="practical", bits=2, precision="float64", seed=5,
                      n_rx=4, n_tx=4, n_sub=4, patch=2, split=2, blocks=2, hidden=4)
    pipe = FeedbackPipeline(cfg)
    for name, p in pipe.store.items():
        if name.startswith("inn."):
            p.data[...] = 0.2 * rng.standard_normal(p.data.shape)
    x0 = rng.standard_normal((3, 2, cfg.n_rx, cfg.n_tx * cfg.n_sub))
    w = rng.standard_normal((3, pipe.geom.latent_dim))

    def scalar_of(x):
        t = x if isinstance(x, Tensor) else Tensor(np.asarray(x))
        z, _ = pipe.encode(t)
        v = pipe.quantizer.soft(z)
        return (v * Tensor(w)).sum()

    xt = Tensor(x0, requires_grad=True)
    scalar_of_t = scalar_of(xt)
    scalar_of_t.backward()
    num = finite_diff_grad(lambda a: scalar_of(a).item(), x0)
    rel = np.max(np.abs(xt.grad - num)) / max(np.max(np.abs(num)), 1e-8)
    if rel > 1e-4:
        return 1, f"encoder+quantizer gradient mismatch {rel:.2e}"
    return 1, None


def _suite_tpm():
    rng = np.random.default_rng(11)
    checks = 0
    for bits in (1, 2):
        for snr_db in (0.0, 10.0):
            snr = bitchannel.snr_db_to_linear(snr_db)
            tpm = bitchannel.transition_matrix(snr, bits)
            col_err = np.max(np.abs(tpm.sum(axis=0) - 1.0))
            if col_err > 1e-12:
                return checks, f"TPM columns sum error {col_err:.2e}"
            q = 2 ** bits
            trials = 40000
            sent = rng.integers(0, q, trials)
            got = bitchannel.transmit_indices(sent, snr, bits, rng=rng)
            for j in range(q):
                mask = sent == j
                n = int(mask.sum())
                for i in range(q):
                    p = tpm[i, j]
                    freq = float(np.mean(got[mask] == i))
                    sigma = np.sqrt(max(p * (1 - p), 1e-12) / n)
                    if abs(freq - p) > 4 * sigma + 2.0 / n:
                        return checks, (f"transition ({i},{j}) at B={bits}, "
                                        f"{snr_db} dB: {freq:.4f} vs {p:.4f}")
            checks += 1
    return checks, None


def _suite_gumbel():
    rng = np.random.default_rng(23)
    pi = np.array([0.7, 0.2, 0.1])
    draws = 20000
    pit = Tensor(np.tile(pi[None, :, None], (draws, 1, 1)))
    noise = bitchannel.gumbel_noise(rng, (draws, 3, 1))
    sample = bitchannel.gumbel_softmax_sample(pit, 0.5, noise)
    freq = sample.data.mean(axis=0)[:, 0]
    sigma = np.sqrt(pi * (1 - pi) / draws)
    if np.any(np.abs(freq - pi) > 4 * sigma):
        return 1, f"gumbel frequencies {freq} vs {pi}"
    return 1, None


def _suite_mmd():
    rng = np.random.default_rng(31)
    a = rng.standard_normal((256, 4))
    za, ra = Tensor(a[:, :2]), Tensor(a[:, 2:])
    same = losses.mmd2_joint(za, ra, za, ra, 1000.0).item()
    b = a + 3.0
    far = losses.mmd2_joint(za, ra, Tensor(b[:, :2]), Tensor(b[:, 2:]), 1000.0).item()
    if abs(same) > 1e-12:
        return 1, f"identical-batch MMD {same:.2e} not zero"
    if far < 1e-3:
        return 1, f"shifted-batch MMD {far:.2e} too small"
    return 1, None


SUITES = (
    ("bijectivity", _suite_bijectivity),
    ("gradients", _suite_gradients),
    ("tpm-monte-carlo", _suite_tpm),
    ("gumbel-sampling", _suite_gumbel),
    ("mmd-discrimination", _suite_mmd),
)


def run_selftest():
    failures = 0
    for name, fn in SUITES:
        try:
            checks, problem = fn()
        except Exception as err:  # a crash is a failure, not an abort
            checks, problem = 0, f"raised {type(err).__name__}: {err}"
        if problem is None:
            print(f"PASS {name} ({checks} checks)")
        else:
            print(f"FAIL {name}: {problem}")
            failures += 1
    print(f"{len(SUITES) - failures}/{len(SUITES)} suites passed")
    return failures
