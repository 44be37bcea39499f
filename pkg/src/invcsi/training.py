"""Bidirectional training loop, learning-rate schedule, checkpoints, metric logs.

Each step runs the encoder forward, computes the distribution-matching
loss and accumulates its gradients, then runs the inverse pass on the
(possibly distorted) latent plus a prior draw, computes the
reconstruction loss, accumulates again, and takes a single Adam step on
the summed gradients.  A strict-alternation mode (one update per loss)
exists behind a flag.

Everything is deterministic given the config seed: data split and
shuffling, parameter init, channel/prior draws and the per-epoch
held-out evaluation all run on named substreams.
"""

from __future__ import annotations

import hashlib
import json
import struct
from dataclasses import dataclass, field, asdict

import numpy as np

from . import bitchannel, channel, losses
from .autodiff import Tensor, NonFiniteError, no_grad
from .pipeline import PRECISIONS, FeedbackPipeline, ModelConfig

LOSS_MODES = ("combined", "recon_only", "mmd_only")

CKPT_MAGIC = b"IVCK"
CKPT_VERSION = 1
_DTYPE_TAGS = {0: np.dtype("<f4"), 1: np.dtype("<f8"), 2: np.dtype("<i8")}
_TAG_FOR_KIND = {"f4": 0, "f8": 1, "i8": 2}


class CheckpointFormatError(ValueError):
    """Raised for malformed checkpoint files."""


class TrainingDiverged(RuntimeError):
    """Loss went non-finite; carries the last finite checkpoint."""

    def __init__(self, message, checkpoint=None):
        super().__init__(message)
        self.checkpoint = checkpoint


@dataclass
class TrainConfig(ModelConfig):
    epochs: int = 1000
    batch_size: int = 128
    lr: float = 1e-3
    lr_decay: float = 0.9
    lr_decay_every: int = 20
    kappa: float = 0.1
    mmd_scale: float = 1000.0
    loss_mode: str = "combined"
    alternate_updates: bool = False
    holdout_fraction: float = 0.3

    def validate(self):
        super().validate()
        if self.epochs < 1 or self.batch_size < 2:
            raise ValueError("need epochs >= 1 and batch_size >= 2")
        if self.lr <= 0 or not 0 < self.lr_decay <= 1 or self.lr_decay_every < 1:
            raise ValueError("invalid learning-rate schedule")
        if self.kappa <= 0 or self.mmd_scale <= 0:
            raise ValueError("kappa and mmd_scale must be positive")
        if self.loss_mode not in LOSS_MODES:
            raise ValueError(f"loss_mode must be one of {LOSS_MODES}")
        if not 0.0 < self.holdout_fraction < 1.0:
            raise ValueError("holdout_fraction must lie in (0, 1)")

    def model_config(self):
        fields = ModelConfig.__dataclass_fields__
        return ModelConfig(**{k: getattr(self, k) for k in fields})


def lr_at(epoch, config):
    """Stepped decay: lr * decay^(epoch // every)."""
    if epoch < 0:
        raise ValueError("epoch must be >= 0")
    return config.lr * config.lr_decay ** (epoch // config.lr_decay_every)


def config_hash(config_dict):
    blob = json.dumps(config_dict, sort_keys=True).encode()
    return hashlib.sha256(blob).hexdigest()


@dataclass
class Checkpoint:
    arrays: dict
    config: dict
    stats: channel.DatasetStats
    epoch: int
    rng_states: dict = field(default_factory=dict)

    @property
    def hash(self):
        return config_hash(self.config)


@dataclass
class TrainResult:
    checkpoint: Checkpoint
    metrics: list


def _rng_streams(seed):
    roots = np.random.SeedSequence(seed).spawn(5)
    names = ("split", "shuffle", "channel", "prior", "mmd")
    return {n: np.random.default_rng(s) for n, s in zip(names, roots)}


def _capture_states(rngs):
    return {name: rng.bit_generator.state for name, rng in rngs.items()}


def preprocess(samples, geom):
    """Raw complex CSI -> real angular-domain stack (float)."""
    ang = channel.to_angular(np.asarray(samples), geom)
    return channel.to_real(ang)


def pipe_dtype(config):
    return PRECISIONS[config.precision]


def _awgn_on_features(v, snr_db, rng, dtype):
    """Channel surrogate for the no-dbcd ablation: white noise on v."""
    snr = bitchannel.snr_db_to_linear(snr_db)
    power = float(np.mean(v.data ** 2))
    sigma = np.sqrt(power / snr)
    noise = (sigma * rng.standard_normal(v.data.shape)).astype(dtype)
    return v + Tensor(noise)


def _distorted_latent(pipe, z, rngs, noise=None):
    """DAQ-soft -> channel surrogate -> alignment; returns (z_hat, gumbel noise)."""
    cfg = pipe.config
    v = pipe.quantizer.soft(z)
    if cfg.variant == "no-dbcd":
        v_hat = _awgn_on_features(v, cfg.snr_db, rngs["channel"], pipe.dtype)
    else:
        v_hat, noise = pipe.channel_soft(v, rngs["channel"], noise=noise)
    return pipe.align(v_hat), noise


def train_step(pipe, x_batch, config, rngs, lr):
    """One optimizer round on a batch; returns the scalar loss parts."""
    x = Tensor(x_batch)
    batch = x_batch.shape[0]
    z, r = pipe.encode(x)

    parts = {"loss_H": 0.0, "loss_r": 0.0}
    noise = None

    if config.loss_mode != "recon_only":
        if config.mode == "practical":
            z_hat_blocked, noise = _distorted_latent(pipe, z.detach(), rngs)
            r_prior = pipe.sample_decoder_aux(batch, rngs["prior"])
            l_r = losses.forward_loss_practical(
                z, r, z_hat_blocked, r_prior, config.mmd_scale, rngs["mmd"])
        else:
            l_r = losses.forward_loss_ideal(z, r, config.mmd_scale, rngs["mmd"])
        parts["loss_r"] = float(l_r.data)
        weight = config.kappa if config.loss_mode == "combined" else 1.0
        l_r.backward(np.asarray(weight, dtype=pipe.dtype))
        if config.alternate_updates:
            pipe.store.adam_step(lr=lr)
            pipe.store.zero_grad()

    if config.loss_mode != "mmd_only":
        if config.mode == "practical":
            z_dec, _ = _distorted_latent(pipe, z, rngs, noise=noise)
        else:
            z_dec = z
        r_dec = pipe.sample_decoder_aux(batch, rngs["prior"])
        x_hat = pipe.decode(z_dec, r_dec)
        l_h = losses.loss_recon(x_hat, x)
        parts["loss_H"] = float(l_h.data)
        l_h.backward()

    pipe.store.adam_step(lr=lr)
    pipe.store.zero_grad()

    if config.loss_mode == "combined":
        parts["loss_total"] = parts["loss_H"] + config.kappa * parts["loss_r"]
    elif config.loss_mode == "recon_only":
        parts["loss_total"] = parts["loss_H"]
    else:
        parts["loss_total"] = parts["loss_r"]
    return parts


def holdout_split(config, n):
    """(holdout_idx, train_idx) exactly as the trainer draws them."""
    rng = np.random.default_rng(np.random.SeedSequence(config.seed).spawn(5)[0])
    order = rng.permutation(n)
    n_hold = max(1, int(round(n * config.holdout_fraction)))
    return order[:n_hold], order[n_hold:]


def forward_mmd_metric(pipe, x_batch, config, rng):
    """Mode-appropriate distribution-matching value on a constant batch."""
    with no_grad():
        z, r = pipe.encode(Tensor(x_batch))
        if config.mode == "practical":
            z_cmp, _ = _distorted_latent(pipe, z, {"channel": rng, "prior": rng})
            r_prior = pipe.sample_decoder_aux(x_batch.shape[0], rng)
            mmd = losses.forward_loss_practical(z, r, z_cmp, r_prior, config.mmd_scale, rng)
        else:
            mmd = losses.forward_loss_ideal(z, r, config.mmd_scale, rng)
    return float(mmd.data)


def _holdout_metrics(pipe, x_hold, raw_hold, stats, config, eval_seed, batch_size=256):
    """Deterministic held-out NMSE (real pipeline) and forward-MMD metric."""
    from .evaluation import nmse  # local import to avoid a cycle

    rng = np.random.default_rng(np.random.SeedSequence(eval_seed))
    geom = pipe.geom
    recons = []
    for lo in range(0, x_hold.shape[0], batch_size):
        xb = x_hold[lo:lo + batch_size]
        recons.append(pipe.reconstruct(xb, rng))
    x_hat = np.concatenate(recons, axis=0)
    denorm = channel.denormalize(x_hat, stats)
    h_hat = channel.from_angular(channel.to_complex(denorm), geom)
    _, nmse_db = nmse(h_hat, raw_hold)

    nb = min(x_hold.shape[0], 512)
    mmd = forward_mmd_metric(pipe, x_hold[:nb], config, rng)
    return nmse_db, mmd


def train(config, samples, log_path=None):
    """Train on raw complex samples; returns checkpoint plus per-epoch metrics.

    Metrics are computed on the held-out split with a fixed evaluation
    seed so two runs with identical configs produce identical logs.
    """
    config.validate()
    samples = np.asarray(samples)
    if samples.ndim != 3 or samples.shape[0] < 4:
        raise ValueError("need a (count, n_rx, n_tx*n_sub) array with count >= 4")

    geom = config.geometry()
    rngs = _rng_streams(config.seed)

    hold_idx, train_idx = holdout_split(config, samples.shape[0])

    real = preprocess(samples, geom).astype(pipe_dtype(config))
    stats = channel.normalize(real[train_idx])[1]
    x_all = channel.apply_stats(real, stats)
    x_train, x_hold = x_all[train_idx], x_all[hold_idx]
    raw_hold = samples[hold_idx]

    pipe = FeedbackPipeline(config.model_config())
    metrics = []
    last_good = None
    log_file = open(log_path, "w") if log_path else None
    try:
        for epoch in range(config.epochs):
            lr = lr_at(epoch, config)
            perm = rngs["shuffle"].permutation(x_train.shape[0])
            sums = {"loss_total": 0.0, "loss_H": 0.0, "loss_r": 0.0}
            batches = 0
            for lo in range(0, perm.size, config.batch_size):
                sel = perm[lo:lo + config.batch_size]
                if sel.size < 2:
                    continue  # MMD needs >= 2 samples
                parts = train_step(pipe, x_train[sel], config, rngs, lr)
                for k in sums:
                    sums[k] += parts[k]
                batches += 1

            record = {"epoch": epoch, "lr": lr}
            for k in sums:
                record[k] = sums[k] / max(batches, 1)
            if not all(np.isfinite(v) for v in record.values()):
                raise TrainingDiverged(
                    f"non-finite training loss at epoch {epoch}", checkpoint=last_good)
            pipe.store.check_finite()

            nmse_db, mmd = _holdout_metrics(
                pipe, x_hold, raw_hold, stats, config, eval_seed=(config.seed, 0xE7A1))
            record["nmse_db"] = nmse_db
            record["mmd"] = mmd
            metrics.append(record)
            if log_file:
                log_file.write(json.dumps(record) + "\n")
                log_file.flush()
            last_good = make_checkpoint(pipe, config, stats, epoch, rngs)
    except NonFiniteError as err:
        raise TrainingDiverged(str(err), checkpoint=last_good) from err
    finally:
        if log_file:
            log_file.close()
    return TrainResult(checkpoint=last_good, metrics=metrics)


def make_checkpoint(pipe, config, stats, epoch, rngs):
    cfg = asdict(config)
    cfg["quant_range"] = list(config.quant_range)
    arrays = pipe.store.export_arrays()
    arrays["opt.step"] = np.array([pipe.store.step_count], dtype=np.int64)
    return Checkpoint(arrays=arrays, config=cfg, stats=stats, epoch=epoch,
                      rng_states=_capture_states(rngs))


def restore_pipeline(ckpt):
    """Rebuild a pipeline (and its optimizer state) from a checkpoint."""
    known = {k: v for k, v in ckpt.config.items()
             if k in TrainConfig.__dataclass_fields__}
    known["quant_range"] = tuple(ckpt.config.get("quant_range", (-2.0, 2.0)))
    config = TrainConfig(**known)
    pipe = FeedbackPipeline(config.model_config())
    arrays = dict(ckpt.arrays)
    step = arrays.pop("opt.step", None)
    pipe.store.load_arrays(arrays)
    if step is not None:
        pipe.store.step_count = int(step[0])
    return pipe, config


# -- checkpoint file format -------------------------------------------------------


def save_checkpoint(path, ckpt):
    """IVCK binary: header text block (JSON) then named little-endian tensors."""
    meta = {
        "config": ckpt.config,
        "config_hash": ckpt.hash,
        "stats": {"mean": ckpt.stats.mean, "std": ckpt.stats.std},
        "epoch": ckpt.epoch,
        "rng_states": ckpt.rng_states,
    }
    blob = json.dumps(meta, sort_keys=True).encode()
    with open(path, "wb") as f:
        f.write(CKPT_MAGIC)
        f.write(struct.pack("<I", CKPT_VERSION))
        f.write(struct.pack("<I", len(blob)))
        f.write(blob)
        f.write(struct.pack("<I", len(ckpt.arrays)))
        for name in sorted(ckpt.arrays):
            arr = np.ascontiguousarray(ckpt.arrays[name])
            kind = arr.dtype.str.lstrip("<>=|")
            if kind not in _TAG_FOR_KIND:
                arr = arr.astype(np.float64)
                kind = "f8"
            le = arr.astype("<" + kind, copy=False)
            nb = name.encode()
            f.write(struct.pack("<H", len(nb)))
            f.write(nb)
            f.write(struct.pack("<BI", _TAG_FOR_KIND[kind], arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(le.tobytes())


def _read_exact(f, count, path, what):
    raw = f.read(count)
    if len(raw) != count:
        raise CheckpointFormatError(f"{path}: truncated while reading {what}")
    return raw


def load_checkpoint(path):
    with open(path, "rb") as f:
        if _read_exact(f, 4, path, "magic") != CKPT_MAGIC:
            raise CheckpointFormatError(f"{path}: bad magic, expected {CKPT_MAGIC!r}")
        (version,) = struct.unpack("<I", _read_exact(f, 4, path, "version"))
        if version != CKPT_VERSION:
            raise CheckpointFormatError(f"{path}: unsupported version {version}")
        (meta_len,) = struct.unpack("<I", _read_exact(f, 4, path, "header length"))
        meta = json.loads(_read_exact(f, meta_len, path, "header"))
        (count,) = struct.unpack("<I", _read_exact(f, 4, path, "tensor count"))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, path, "tensor name"))
            name = _read_exact(f, name_len, path, "tensor name").decode()
            tag, ndim = struct.unpack("<BI", _read_exact(f, 5, path, name))
            if tag not in _DTYPE_TAGS:
                raise CheckpointFormatError(f"{path}: unknown dtype tag {tag} for {name!r}")
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, path, name))
            dtype = _DTYPE_TAGS[tag]
            nbytes = int(np.prod(shape, dtype=np.int64)) * dtype.itemsize
            arrays[name] = np.frombuffer(
                _read_exact(f, nbytes, path, name), dtype=dtype).reshape(shape).copy()
        if f.read(1):
            raise CheckpointFormatError(f"{path}: trailing bytes after last tensor")
    stored_hash = meta.get("config_hash")
    if stored_hash and stored_hash != config_hash(meta["config"]):
        raise CheckpointFormatError(f"{path}: config hash mismatch")
    stats = channel.DatasetStats(**meta["stats"])
    return Checkpoint(arrays=arrays, config=meta["config"], stats=stats,
                      epoch=meta["epoch"], rng_states=meta.get("rng_states", {}))
