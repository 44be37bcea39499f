"""Model assembly: one parameter store wiring encoder, quantizer, channel, compensation.

A pipeline owns the store and the module objects; the training loop and
the evaluator compose them.  In ideal mode only the invertible network
exists (the auxiliary prior is frozen at the standard normal).  In
practical mode the quantizer, channel model and compensation stage are
built too, with ablation variants dropping or freezing the matching
pieces:

* ``no-daq``  -- quantizer frozen at its uniform initialization;
* ``no-dbcd`` -- training adds white noise to the quantized features
  instead of modeling the bit channel (inference always runs the real
  bit pipeline);
* ``no-ic``   -- no alignment net, prior fixed at N(0, I).
"""

from __future__ import annotations

from dataclasses import dataclass, asdict

import numpy as np

from . import bitchannel
from .autodiff import ParamStore, Tensor, no_grad
from .channel import CsiGeometry
from .compensation import AuxiliaryPrior, LatentAlignment, standard_normal_sample
from .inn import InvertibleNetwork
from .quantizer import AdaptiveQuantizer

MODES = ("ideal", "practical")
VARIANTS = ("full", "no-daq", "no-dbcd", "no-ic")
PRECISIONS = {"float32": np.float32, "float64": np.float64}


@dataclass
class ModelConfig:
    """Geometry plus every architecture/channel hyperparameter."""

    n_rx: int = 4
    n_tx: int = 8
    n_sub: int = 16
    patch: int = 4
    split: int = 1
    blocks: int = 3
    hidden: int = 32
    lan_hidden: int = 16
    mode: str = "ideal"
    variant: str = "full"
    bits: int = 2
    snr_db: float = 10.0
    coder: str = "natural"
    quant_range: tuple = (-2.0, 2.0)
    temperature: float = 10.0
    beta: float = 0.1
    tau: float = 0.5
    rho_mode: str = "disabled"
    precision: str = "float32"
    seed: int = 0

    def validate(self):
        if self.mode not in MODES:
            raise ValueError(f"mode must be one of {MODES}, got {self.mode!r}")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.precision not in PRECISIONS:
            raise ValueError(f"precision must be one of {tuple(PRECISIONS)}")
        if self.coder not in bitchannel.CODERS:
            raise ValueError(f"coder must be one of {bitchannel.CODERS}")
        for name in ("beta", "tau", "temperature"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        self.geometry()  # shape checks live in CsiGeometry

    def geometry(self):
        return CsiGeometry(n_rx=self.n_rx, n_tx=self.n_tx, n_sub=self.n_sub,
                           patch=self.patch, split=self.split)

    def to_dict(self):
        d = asdict(self)
        d["quant_range"] = list(self.quant_range)
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["quant_range"] = tuple(d.get("quant_range", (-2.0, 2.0)))
        return cls(**d)


class FeedbackPipeline:
    """Instantiated model: store + modules per the config's mode/variant."""

    def __init__(self, config):
        config.validate()
        self.config = config
        self.geom = config.geometry()
        self.dtype = PRECISIONS[config.precision]
        self.store = ParamStore(dtype=self.dtype)
        self.inn = InvertibleNetwork(
            self.store, self.geom, blocks=config.blocks, hidden=config.hidden,
            rho_mode=config.rho_mode, seed=config.seed)
        self.quantizer = None
        self.lan = None
        self.prior = None
        if config.mode == "practical":
            self.quantizer = AdaptiveQuantizer(
                self.store, self.geom.latent_dim, config.bits,
                z_range=config.quant_range, temperature=config.temperature,
                trainable=(config.variant != "no-daq"))
            if config.variant != "no-ic":
                self.lan = LatentAlignment(self.store, self.inn.latent_shape,
                                           hidden=config.lan_hidden)
                self.prior = AuxiliaryPrior(self.store, self.geom.aux_dim)

    # -- building blocks -----------------------------------------------------

    def encode(self, x):
        return self.inn.forward(x)

    def decode(self, z, r):
        return self.inn.inverse(z, r)

    def transition_matrix(self, snr_db=None):
        snr = self.config.snr_db if snr_db is None else snr_db
        return bitchannel.transition_matrix(
            bitchannel.snr_db_to_linear(snr), self.config.bits, self.config.coder)

    def align(self, v_hat):
        return self.lan(v_hat) if self.lan is not None else v_hat

    def sample_decoder_aux(self, batch, rng):
        """Prior draw used as the decoder's auxiliary input."""
        if self.prior is not None:
            return self.prior.sample(batch, rng)
        return standard_normal_sample(batch, self.geom.aux_dim, rng, self.dtype)

    def channel_soft(self, v, rng, tpm=None, noise=None):
        """Differentiable channel: soft assignment -> TPM -> straight-through sample.

        Returns (v_hat, gumbel_noise) so a caller can replay the same
        draw on a second branch.
        """
        cfg = self.config
        levels = self.quantizer.levels()
        if tpm is None:
            tpm = self.transition_matrix()
        w = bitchannel.soft_index_map(v, levels, cfg.beta)
        pi = bitchannel.categorical_probs(tpm, w)
        if noise is None:
            noise = bitchannel.gumbel_noise(rng, pi.shape, dtype=self.dtype)
        pi_hat = bitchannel.gumbel_softmax_sample(pi, cfg.tau, noise)
        return bitchannel.dequantize_soft(levels, pi_hat), noise

    # -- real inference path ---------------------------------------------------

    def infer_latent(self, z, rng, snr_db=None):
        """Hard quantization + real bit transmission + alignment (numpy in/out)."""
        idx = self.quantizer.hard_index(z)
        snr = self.config.snr_db if snr_db is None else snr_db
        snr_linear = None if np.isinf(snr) else bitchannel.snr_db_to_linear(snr)
        detected = bitchannel.transmit_indices(
            idx, snr_linear, self.config.bits, self.config.coder, rng)
        v_hat = self.quantizer.dequantize_index(detected).astype(self.dtype)
        with no_grad():
            return self.align(Tensor(v_hat)).data

    def reconstruct(self, x, rng, snr_db=None):
        """Full deployable round trip on a normalized real batch (numpy)."""
        with no_grad():
            z, _ = self.encode(Tensor(np.asarray(x, dtype=self.dtype)))
            if self.config.mode == "practical":
                z_hat = self.infer_latent(z.data, rng, snr_db=snr_db)
            else:
                z_hat = z.data
            r = self.sample_decoder_aux(z_hat.shape[0], rng)
            out = self.decode(Tensor(z_hat), r)
        return out.data

    # -- bookkeeping -----------------------------------------------------------

    def parameter_groups(self):
        """Trainable parameter counts by stage."""
        groups = {"inn": 0, "quant": 0, "lan": 0, "prior": 0}
        for name, t in self.store.items():
            if not self.store.is_trainable(name):
                continue
            stage = name.split(".", 1)[0]
            groups[stage] = groups.get(stage, 0) + t.data.size
        return groups
