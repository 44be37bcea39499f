"""Command-line entry point: dataset generation, training, evaluation, sweeps.

Exit codes: 1 config error, 2 I/O error, 3 numerical failure/divergence,
4 selftest failure.  Config files are flat TOML (key = value pairs;
see `load_config`); command-line flags override file values.  All
randomness derives from --seed; omitting it draws an entropy seed and
logs it.

The INVCSI_THREADS environment variable caps BLAS parallelism; it is
applied before numpy loads, so keep heavy imports inside main().
"""

from __future__ import annotations

import argparse
import os
import secrets
import sys


def _apply_thread_cap():
    cap = os.environ.get("INVCSI_THREADS")
    if not cap:
        return
    for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
        os.environ.setdefault(var, cap)


_apply_thread_cap()


class ConfigError(ValueError):
    pass


def _parse_toml_scalar(text, path, line_no):
    text = text.strip()
    if text.startswith('"') and text.endswith('"') and len(text) >= 2:
        return text[1:-1]
    if text in ("true", "false"):
        return text == "true"
    try:
        return int(text)
    except ValueError:
        pass
    try:
        return float(text)
    except ValueError:
        pass
    if text in ("inf", "-inf", "nan"):
        return float(text)
    raise ConfigError(f"{path}:{line_no}: cannot parse value {text!r}")


def load_config(path):
    """Flat TOML subset: comments, blank lines and `key = scalar` pairs.

    Scalars are strings, booleans, ints and floats -- all a run config
    needs.  Tables and arrays are rejected explicitly rather than
    misread.
    """
    values = {}
    with open(path) as f:
        for line_no, raw in enumerate(f, 1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("["):
                raise ConfigError(f"{path}:{line_no}: tables are not supported in run configs")
            if "=" not in line:
                raise ConfigError(f"{path}:{line_no}: expected `key = value`")
            key, _, value = line.partition("=")
            if "#" in value and not value.strip().startswith('"'):
                value = value.split("#", 1)[0]
            values[key.strip()] = _parse_toml_scalar(value, path, line_no)
    return values

# flag destination -> TrainConfig field
_FLAG_FIELDS = {
    "mode": "mode", "bits": "bits", "snr_db": "snr_db", "ratio_c": "split",
    "patch": "patch", "epochs": "epochs", "batch": "batch_size",
    "kappa": "kappa", "mmd_c": "mmd_scale", "variant": "variant", "seed": "seed",
}


def _add_common_flags(p, with_train=True):
    p.add_argument("--config", help="flat TOML config file; flags override it")
    p.add_argument("--seed", type=int, help="master seed (logged entropy seed if omitted)")
    if with_train:
        p.add_argument("--mode", choices=("ideal", "practical"))
        p.add_argument("--bits", type=int, choices=range(1, 9))
        p.add_argument("--snr-db", type=float, dest="snr_db")
        p.add_argument("--ratio-c", type=int, dest="ratio_c",
                       help="channel split c; compression ratio is c/(2*patch^2)")
        p.add_argument("--patch", type=int)
        p.add_argument("--epochs", type=int)
        p.add_argument("--batch", type=int)
        p.add_argument("--kappa", type=float)
        p.add_argument("--mmd-c", type=float, dest="mmd_c")
        p.add_argument("--variant", choices=("full", "no-daq", "no-dbcd", "no-ic"))


def build_parser():
    parser = argparse.ArgumentParser(
        prog="invcsi",
        description="invertible CSI feedback codec: data, training, evaluation")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen-data", help="generate a synthetic CSI dataset")
    g.add_argument("--out", required=True)
    g.add_argument("--count", type=int, required=True)
    g.add_argument("--paths", default="3,8", help="min,max multipath count")
    _add_common_flags(g, with_train=False)

    t = sub.add_parser("train", help="train a codec on a dataset file")
    t.add_argument("--data", required=True)
    t.add_argument("--ckpt", required=True)
    t.add_argument("--log", help="metrics JSON-lines path (default: ckpt + .log)")
    _add_common_flags(t)

    e = sub.add_parser("eval", help="score a checkpoint on a dataset")
    e.add_argument("--ckpt", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--out", help="CSV report path (JSONL mirror written alongside)")
    e.add_argument("--holdout-only", action="store_true",
                   help="score only the trainer's held-out split")
    e.add_argument("--domain", choices=("original", "angular"), default="original")
    _add_common_flags(e)

    a = sub.add_parser("ablate", help="train and score ablation variants")
    a.add_argument("--data", required=True)
    a.add_argument("--out", required=True)
    a.add_argument("--variants", default="full,no-daq,no-dbcd,no-ic")
    _add_common_flags(a)

    s = sub.add_parser("sweep", help="train/eval over a grid of settings")
    s.add_argument("--data", required=True)
    s.add_argument("--out", required=True)
    s.add_argument("--grid-bits", default="", help="comma list, e.g. 1,2,4")
    s.add_argument("--grid-snr-db", default="", help="comma list, e.g. 0,10")
    s.add_argument("--grid-ratio-c", default="", help="comma list, e.g. 1,2,4")
    s.add_argument("--seeds", type=int, default=1, help="consecutive seeds per cell")
    _add_common_flags(s)

    sub.add_parser("selftest", help="run the built-in invariant suites")
    return parser


def _resolve_seed(args):
    if getattr(args, "seed", None) is not None:
        return args.seed
    seed = secrets.randbits(32)
    print(f"note: no --seed given, using entropy seed {seed}", file=sys.stderr)
    return seed


def _build_train_config(args):
    from .training import TrainConfig

    values = {}
    if getattr(args, "config", None):
        file_values = load_config(args.config)
        allowed = set(TrainConfig.__dataclass_fields__)
        unknown = set(file_values) - allowed
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        values.update(file_values)
    for flag, field in _FLAG_FIELDS.items():
        v = getattr(args, flag, None)
        if v is not None:
            values[field] = v
    if "seed" not in values:
        values["seed"] = _resolve_seed(args)
    try:
        cfg = TrainConfig(**values)
        cfg.validate()
    except (TypeError, ValueError) as err:
        raise ConfigError(str(err)) from err
    return cfg


def _cmd_gen_data(args):
    import numpy as np

    from .channel import CsiGeometry, generate_channels, write_dataset

    seed = _resolve_seed(args)
    try:
        lo, hi = (int(v) for v in args.paths.split(","))
    except ValueError as err:
        raise ConfigError(f"--paths expects 'min,max', got {args.paths!r}") from err
    geom = CsiGeometry()
    samples = generate_channels(args.count, geom, seed=seed, path_range=(lo, hi))
    write_dataset(args.out, samples, geom)
    print(f"wrote {args.count} samples to {args.out} "
          f"(geometry {geom.n_rx}x{geom.n_tx}x{geom.n_sub}, seed {seed})")
    return 0


def _cmd_train(args):
    from .channel import read_dataset
    from .training import TrainingDiverged, save_checkpoint, train

    config = _build_train_config(args)
    samples, dims = read_dataset(args.data)
    for k in ("n_rx", "n_tx", "n_sub"):
        if getattr(config, k) != dims[k]:
            config = type(config)(**{**_asdict(config), k: dims[k]})
    log_path = args.log or (args.ckpt + ".log")
    try:
        result = train(config, samples, log_path=log_path)
    except TrainingDiverged as err:
        print(f"training diverged: {err}", file=sys.stderr)
        if err.checkpoint is not None:
            save_checkpoint(args.ckpt, err.checkpoint)
            print(f"saved last finite checkpoint to {args.ckpt}", file=sys.stderr)
        return 3
    save_checkpoint(args.ckpt, result.checkpoint)
    last = result.metrics[-1]
    print(f"trained {config.epochs} epochs -> {args.ckpt}; "
          f"final held-out NMSE {last['nmse_db']:.2f} dB (log: {log_path})")
    return 0


def _asdict(config):
    return {k: getattr(config, k) for k in type(config).__dataclass_fields__}


def _cmd_eval(args):
    from .channel import read_dataset
    from .evaluation import evaluate, write_report_csv, write_report_jsonl
    from .training import holdout_split, load_checkpoint, restore_pipeline

    ckpt = load_checkpoint(args.ckpt)
    samples, _ = read_dataset(args.data)
    if args.holdout_only:
        _, config = restore_pipeline(ckpt)
        hold_idx, _ = holdout_split(config, samples.shape[0])
        samples = samples[hold_idx]
    seed = _resolve_seed(args)
    record = evaluate(ckpt, samples, snr_db=getattr(args, "snr_db", None),
                      seed=seed, domain=args.domain)
    line = ",".join(str(record.get(k)) for k in
                    ("ratio", "B", "snr_db", "nmse_db", "mmd", "params", "variant"))
    print("ratio,B,snr_db,nmse_db,mmd,params,variant")
    print(line)
    if args.out:
        write_report_csv(args.out, [record])
        write_report_jsonl(_jsonl_path(args.out), [record])
    return 0


def _jsonl_path(csv_path):
    return csv_path + ".jsonl" if not csv_path.endswith(".csv") \
        else csv_path[:-4] + ".jsonl"


def _cmd_ablate(args):
    from .channel import read_dataset
    from .evaluation import ablate, write_report_csv, write_report_jsonl

    config = _build_train_config(args)
    samples, _ = read_dataset(args.data)
    variants = tuple(v.strip() for v in args.variants.split(",") if v.strip())
    rows, _ = ablate(config, samples, variants=variants)
    write_report_csv(args.out, rows)
    write_report_jsonl(_jsonl_path(args.out), rows)
    for row in rows:
        print(f"{row['variant']}: NMSE {row['nmse_db']:.2f} dB")
    return 0


def _cmd_sweep(args):
    from .channel import read_dataset
    from .evaluation import train_and_evaluate, write_report_csv, write_report_jsonl
    from .training import TrainConfig

    base = _build_train_config(args)
    samples, _ = read_dataset(args.data)
    bits = [int(v) for v in args.grid_bits.split(",") if v] or [base.bits]
    snrs = [float(v) for v in args.grid_snr_db.split(",") if v] or [base.snr_db]
    splits = [int(v) for v in args.grid_ratio_c.split(",") if v] or [base.split]
    rows = []
    for b in bits:
        for snr in snrs:
            for c in splits:
                for k in range(args.seeds):
                    cfg = TrainConfig(**{**_asdict(base), "bits": b, "snr_db": snr,
                                         "split": c, "seed": base.seed + k})
                    _, record = train_and_evaluate(cfg, samples)
                    record["seed"] = cfg.seed
                    rows.append(record)
                    print(f"bits={b} snr={snr} c={c} seed={cfg.seed}: "
                          f"NMSE {record['nmse_db']:.2f} dB")
    write_report_csv(args.out, rows)
    write_report_jsonl(_jsonl_path(args.out), rows)
    return 0


def _cmd_selftest(args):
    from .selftest import run_selftest

    failures = run_selftest()
    return 0 if failures == 0 else 4


def main(argv=None):
    args = build_parser().parse_args(argv)
    handlers = {
        "gen-data": _cmd_gen_data,
        "train": _cmd_train,
        "eval": _cmd_eval,
        "ablate": _cmd_ablate,
        "sweep": _cmd_sweep,
        "selftest": _cmd_selftest,
    }
    try:
        return handlers[args.command](args)
    except ConfigError as err:
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except (OSError, ValueError) as err:
        # ValueError covers malformed dataset/checkpoint files
        from .channel import DatasetFormatError
        from .training import CheckpointFormatError

        if isinstance(err, (DatasetFormatError, CheckpointFormatError, OSError)):
            print(f"i/o error: {err}", file=sys.stderr)
            return 2
        print(f"config error: {err}", file=sys.stderr)
        return 1
    except FloatingPointError as err:
        print(f"numerical failure: {err}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    raise SystemExit(main())
