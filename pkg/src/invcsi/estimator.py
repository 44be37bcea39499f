"""scikit-learn style front end for the feedback codec.

`CsiFeedbackCodec` wraps dataset preprocessing, training and the
deployable inference path behind the familiar fit/transform API so the
codec drops into pipelines and grid searches:

* ``fit(X)``                 -- train on complex CSI samples;
* ``transform(X)``           -- compress to the latent features;
* ``inverse_transform(Z)``   -- reconstruct CSI from latent features;
* ``predict(X)``             -- full round trip through quantizer and
                                 bit channel (mode-dependent);
* ``score(X)``               -- negative reconstruction NMSE in dB.
"""

from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin

from . import channel, training
from .autodiff import Tensor, no_grad
from .evaluation import nmse


def _check_csi(X, n_rx, width):
    X = np.asarray(X)
    if X.ndim != 3 or X.shape[1:] != (n_rx, width):
        raise ValueError(
            f"X must have shape (n_samples, {n_rx}, {width}), got {X.shape}")
    if not np.iscomplexobj(X):
        raise ValueError("X must be complex CSI samples")
    if not np.all(np.isfinite(X.view(np.float64) if X.dtype == np.complex128
                              else X.view(np.float32))):
        raise ValueError("X contains non-finite entries")
    return X


class CsiFeedbackCodec(BaseEstimator, TransformerMixin):
    """Invertible CSI feedback codec with a learnable quantizer and channel model.

    Parameters mirror the training configuration; `random_state` seeds
    everything (data split, init, channel noise), so fits are
    reproducible.
    """

    def __init__(self, n_tx=8, patch=4, split=1, blocks=3, hidden=32,
                 mode="ideal", variant="full", bits=2, snr_db=10.0,
                 epochs=100, batch_size=128, lr=1e-3, kappa=0.1,
                 mmd_scale=1000.0, loss_mode="combined",
                 precision="float32", random_state=0):
        self.n_tx = n_tx
        self.patch = patch
        self.split = split
        self.blocks = blocks
        self.hidden = hidden
        self.mode = mode
        self.variant = variant
        self.bits = bits
        self.snr_db = snr_db
        self.epochs = epochs
        self.batch_size = batch_size
        self.lr = lr
        self.kappa = kappa
        self.mmd_scale = mmd_scale
        self.loss_mode = loss_mode
        self.precision = precision
        self.random_state = random_state

    def _config(self, X):
        n_rx = X.shape[1]
        if X.shape[2] % self.n_tx:
            raise ValueError(f"n_tx={self.n_tx} does not divide feature width {X.shape[2]}")
        return training.TrainConfig(
            n_rx=n_rx, n_tx=self.n_tx, n_sub=X.shape[2] // self.n_tx,
            patch=self.patch, split=self.split, blocks=self.blocks,
            hidden=self.hidden, mode=self.mode, variant=self.variant,
            bits=self.bits, snr_db=self.snr_db, epochs=self.epochs,
            batch_size=self.batch_size, lr=self.lr, kappa=self.kappa,
            mmd_scale=self.mmd_scale, loss_mode=self.loss_mode,
            precision=self.precision, seed=self.random_state)

    def fit(self, X, y=None):
        X = np.asarray(X)
        if X.ndim != 3:
            raise ValueError(f"X must be (n_samples, n_rx, n_tx*n_sub), got {X.shape}")
        config = self._config(X)
        _check_csi(X, config.n_rx, config.geometry().width)
        result = training.train(config, X)
        self.config_ = config
        self.checkpoint_ = result.checkpoint
        self.metrics_ = result.metrics
        self.pipeline_, _ = training.restore_pipeline(result.checkpoint)
        self.stats_ = result.checkpoint.stats
        self.latent_dim_ = config.geometry().latent_dim
        return self

    def _require_fit(self):
        if not hasattr(self, "pipeline_"):
            raise RuntimeError("codec is not fitted; call fit(X) first")

    def _preprocess(self, X):
        geom = self.pipeline_.geom
        X = _check_csi(X, geom.n_rx, geom.width)
        real = training.preprocess(X, geom).astype(self.pipeline_.dtype)
        return channel.apply_stats(real, self.stats_)

    def transform(self, X):
        """Compress CSI samples to latent features of length latent_dim_."""
        self._require_fit()
        x = self._preprocess(X)
        with no_grad():
            z, _ = self.pipeline_.encode(Tensor(x))
        return z.data.copy()

    def inverse_transform(self, Z, seed=0):
        """Reconstruct complex CSI from latent features (prior-sampled aux)."""
        self._require_fit()
        Z = np.asarray(Z, dtype=self.pipeline_.dtype)
        if Z.ndim != 2 or Z.shape[1] != self.latent_dim_:
            raise ValueError(f"Z must have shape (n, {self.latent_dim_}), got {Z.shape}")
        rng = np.random.default_rng(np.random.SeedSequence((self.random_state, seed)))
        with no_grad():
            r = self.pipeline_.sample_decoder_aux(Z.shape[0], rng)
            x = self.pipeline_.decode(Tensor(Z), r)
        return self._postprocess(x.data)

    def predict(self, X, seed=0):
        """Reconstruct through the deployable path (quantizer + bit channel)."""
        self._require_fit()
        x = self._preprocess(X)
        rng = np.random.default_rng(np.random.SeedSequence((self.random_state, seed)))
        x_hat = self.pipeline_.reconstruct(x, rng)
        return self._postprocess(x_hat)

    def _postprocess(self, x_real):
        geom = self.pipeline_.geom
        denorm = channel.denormalize(x_real, self.stats_)
        return channel.from_angular(channel.to_complex(denorm), geom)

    def score(self, X, y=None):
        """Negative NMSE in dB of predict(X) against X (higher is better)."""
        self._require_fit()
        _, db = nmse(self.predict(X), np.asarray(X))
        return -db
