"""Metrics and sweep/ablation harness: NMSE, MMD, parameter counts, reports.

Evaluation always runs the deployable path: hard quantization, real bit
transmission with ML detection, alignment, inverse pass with a prior
draw.  Reconstructions are denormalized before scoring, and NMSE is
computed against the original-domain CSI by default (the angular-domain
variant sits behind a flag since the two differ only by a unitary
transform and the affine stats).
"""

from __future__ import annotations

import csv
import json
import math

import numpy as np

from . import channel, training

REPORT_FIELDS = ("ratio", "B", "snr_db", "nmse_db", "mmd", "params", "variant")


def nmse(h_hat, h):
    """Mean of per-sample ||err||_F^2 / ||ref||_F^2; returns (linear, dB).

    Exact reconstruction yields linear 0 and -inf dB.  A zero-norm
    reference sample is an error.
    """
    h_hat = np.asarray(h_hat)
    h = np.asarray(h)
    if h_hat.shape != h.shape:
        raise ValueError(f"shape mismatch: {h_hat.shape} vs {h.shape}")
    n = h.shape[0]
    err = np.abs(h_hat.reshape(n, -1) - h.reshape(n, -1)) ** 2
    ref = np.abs(h.reshape(n, -1)) ** 2
    denom = ref.sum(axis=1)
    if np.any(denom <= 0):
        raise ValueError("reference sample with zero Frobenius norm")
    linear = float(np.mean(err.sum(axis=1) / denom))
    db = 10.0 * math.log10(linear) if linear > 0 else float("-inf")
    return linear, db


def evaluate(ckpt, samples, snr_db=None, seed=0, domain="original"):
    """Score a checkpoint on raw complex samples through the real pipeline.

    `snr_db` overrides the trained channel SNR (use float('inf') for a
    lossless channel).  Deterministic given `seed`.
    """
    if domain not in ("original", "angular"):
        raise ValueError("domain must be 'original' or 'angular'")
    pipe, config = training.restore_pipeline(ckpt)
    geom = pipe.geom
    samples = np.asarray(samples)
    if samples.shape[1:] != (geom.n_rx, geom.width):
        raise ValueError(
            f"samples have shape {samples.shape[1:]}, geometry expects "
            f"({geom.n_rx}, {geom.width})")

    real = training.preprocess(samples, geom).astype(pipe.dtype)
    x = channel.apply_stats(real, ckpt.stats)

    rng = np.random.default_rng(np.random.SeedSequence((seed, 0x5C03E)))
    recons = []
    for lo in range(0, x.shape[0], 256):
        recons.append(pipe.reconstruct(x[lo:lo + 256], rng, snr_db=snr_db))
    x_hat = np.concatenate(recons, axis=0)

    denorm = channel.denormalize(x_hat, ckpt.stats)
    ang_hat = channel.to_complex(denorm)
    if domain == "angular":
        linear, db = nmse(ang_hat, channel.to_complex(channel.denormalize(x, ckpt.stats)))
    else:
        h_hat = channel.from_angular(ang_hat, geom)
        linear, db = nmse(h_hat, samples)

    nb = min(x.shape[0], 512)
    mmd_rng = np.random.default_rng(np.random.SeedSequence((seed, 0x33D)))
    mmd = training.forward_mmd_metric(pipe, x[:nb], config, mmd_rng)

    used_snr = ckpt.config.get("snr_db") if snr_db is None else snr_db
    return {
        "ratio": geom.ratio,
        "B": ckpt.config.get("bits") if ckpt.config.get("mode") == "practical" else None,
        "snr_db": used_snr if ckpt.config.get("mode") == "practical" else None,
        "nmse_db": db,
        "nmse_linear": linear,
        "mmd": mmd,
        "params": count_params(ckpt),
        "variant": ckpt.config.get("variant", "full"),
        "mode": ckpt.config.get("mode"),
    }


def count_params(ckpt):
    """Trainable scalar count; shared tensors count once, the decoder adds none."""
    pipe, _ = training.restore_pipeline(ckpt)
    return int(pipe.store.num_trainable())


def count_params_by_group(ckpt):
    pipe, _ = training.restore_pipeline(ckpt)
    return pipe.parameter_groups()


def train_and_evaluate(config, samples, snr_db=None, eval_seed=0):
    """Convenience for sweeps: train, then score on the held-out split."""
    result = training.train(config, samples)
    hold_idx, _ = training.holdout_split(config, samples.shape[0])
    record = evaluate(result.checkpoint, samples[hold_idx], snr_db=snr_db, seed=eval_seed)
    return result, record


def ablate(base_config, samples, variants=("full", "no-daq", "no-dbcd", "no-ic"),
           eval_seed=0):
    """Train each ablation variant under the base config; one report row each."""
    rows = []
    results = {}
    for variant in variants:
        cfg = training.TrainConfig(**{**_config_dict(base_config), "variant": variant})
        result, record = train_and_evaluate(cfg, samples, eval_seed=eval_seed)
        results[variant] = result
        rows.append(record)
    return rows, results


def _config_dict(config):
    return {k: getattr(config, k) for k in training.TrainConfig.__dataclass_fields__}


def _format_cell(value):
    if value is None:
        return ""
    if isinstance(value, float):
        if math.isinf(value):
            return "-inf" if value < 0 else "inf"
        return repr(value)
    return str(value)


def write_report_csv(path, rows):
    with open(path, "w", newline="") as f:
        writer = csv.writer(f)
        writer.writerow(REPORT_FIELDS)
        for row in rows:
            writer.writerow([_format_cell(row.get(k)) for k in REPORT_FIELDS])


def write_report_jsonl(path, rows):
    with open(path, "w") as f:
        for row in rows:
            out = dict(row)
            for k, v in out.items():
                if isinstance(v, float) and math.isinf(v):
                    out[k] = "-inf" if v < 0 else "inf"
            f.write(json.dumps(out) + "\n")
