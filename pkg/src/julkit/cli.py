"""Command line entry point.

Subcommands: ``gradcheck`` (verification suite), ``train`` (full run with
artifact dumps), ``eval`` (metrics from a checkpoint), ``hist-demo``
(soft-histogram inspection). Every command is deterministic given its
flags; exit codes are 0 success, 1 verification failure, 2 input error,
3 numerics failure.
"""

from __future__ import annotations

import argparse
import os
import sys
import time

import numpy as np

from .config import RunConfig, config_from_dict, config_hash, load_config
from .errors import ConfigError, JulkitError, NumericsError
from .histogram import bin_centers, soft_histogram
from .models import build_models
from .training import (METRICS_HEADER, evaluate, format_metrics_row,
                       load_checkpoint, restore_bundle, train)
from .synthdata import build_dataset

EXIT_OK = 0
EXIT_VERIFY = 1
EXIT_INPUT = 2
EXIT_NUMERICS = 3


def _parse_overrides(pairs):
    """Turn ``--key=value`` strings into a config-dict fragment."""
    out = {}
    for raw in pairs:
        if not raw.startswith("--") or "=" not in raw:
            raise ConfigError(
                f"overrides must look like --key=value, got '{raw}'")
        key, value = raw[2:].split("=", 1)
        out[key.replace("-", "_")] = value
    return out


def _coerce_override(value):
    lowered = value.lower()
    if lowered in ("true", "false"):
        return lowered == "true"
    if lowered in ("null", "none"):
        return None
    for cast in (int, float):
        try:
            return cast(value)
        except ValueError:
            continue
    return value


def build_run_config(config_path, overrides):
    """Config file (optional) plus ``--key=value`` overrides."""
    base = load_config(config_path) if config_path else RunConfig()
    if not overrides:
        return base
    merged = {k: getattr(base, k) for k in base.__dataclass_fields__}
    for key, value in _parse_overrides(overrides).items():
        merged[key] = _coerce_override(value)
    return config_from_dict(merged)


def cmd_gradcheck(args):
    from .gradsuite import run_suite

    started = time.perf_counter()
    results = run_suite(seed=args.seed or 0, fault=args.fault)
    print("op,error,threshold,pass")
    for res in results:
        print(res.csv_row())
    elapsed = time.perf_counter() - started
    failures = [r for r in results if not r.passed]
    print(f"# {len(results)} checks, {len(failures)} failures, "
          f"{elapsed:.1f}s", file=sys.stderr)
    for res in failures:
        print(f"# FAIL {res.name}: error {res.error:.3e} >= {res.threshold:.0e}",
              file=sys.stderr)
    return EXIT_VERIFY if failures else EXIT_OK


def cmd_train(args, overrides):
    overrides = list(overrides)
    if args.seed is not None:
        overrides.append(f"--seed={args.seed}")
    if args.out is not None:
        overrides.append(f"--out_dir={args.out}")
    cfg = build_run_config(args.config, overrides)
    if not cfg.out_dir:
        raise ConfigError("train needs --out DIR (or out_dir in the config)")
    result = train(cfg)
    final_step = max(result.metrics_by_step)
    print(METRICS_HEADER)
    print(format_metrics_row(final_step, result.metrics_by_step[final_step]))
    if result.sync_accuracy is not None:
        print(f"# sync pretraining held-out accuracy "
              f"{result.sync_accuracy:.3f}", file=sys.stderr)
    return EXIT_OK


def cmd_eval(args, overrides):
    cfg = build_run_config(args.config, overrides)
    version, digest, blobs = load_checkpoint(args.checkpoint)
    expected = config_hash(cfg)
    if digest != expected:
        raise ConfigError(
            f"checkpoint config hash {digest[:12]}... does not match the "
            f"requested config {expected[:12]}...; pass the config used "
            f"for training")
    dataset = build_dataset(cfg.data_seed)
    bundle = build_models(np.random.SeedSequence(cfg.seed).spawn(4)[0])
    restore_bundle(bundle, blobs)
    identity = (dataset.test_identity if args.split == "test"
                else dataset.train_identities[0])
    metrics = evaluate(bundle, identity, cfg)
    step = cfg.steps if args.step is None else args.step
    print(METRICS_HEADER)
    print(format_metrics_row(step, metrics))
    return EXIT_OK


def _demo_values(args):
    if args.file:
        try:
            text = open(args.file, "r", encoding="utf-8").read()
        except OSError as e:
            raise ConfigError(f"cannot read values file: {e}") from e
        try:
            values = np.array([float(tok) for tok in text.split()])
        except ValueError as e:
            raise ConfigError(f"values file must hold reals: {e}") from e
        if values.size == 0:
            raise ConfigError("values file is empty")
        return values
    rng = np.random.default_rng(args.seed or 0)
    return rng.laplace(args.mu, args.scale, size=args.count)


def cmd_hist_demo(args):
    values = _demo_values(args)
    cfg = RunConfig(bins=args.bins) if args.bins else RunConfig()
    spec = cfg.hist_spec()
    centers = bin_centers(values, spec)
    hist = soft_histogram(values, centers, spec)
    total = float(hist.mass.data.sum())
    if abs(total - 1.0) > 1e-6:
        raise NumericsError(f"histogram mass sums to {total!r}, not 1")
    print("center,mass")
    for c, m in zip(hist.centers.data, hist.mass.data):
        print(f"{c:.6f},{m:.6f}")
    print(f"# mass total {total:.9f}", file=sys.stderr)
    return EXIT_OK


def _build_parser():
    parser = argparse.ArgumentParser(
        prog="julkit",
        description="Signal-driven face inpainting with joint uncertainty "
                    "learning: training, evaluation, and verification.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_grad = sub.add_parser("gradcheck", help="run the gradient-check suite")
    p_grad.add_argument("--seed", type=int, default=0)
    p_grad.add_argument("--fault", default=None,
                        help="deliberately corrupt one op's backward rule "
                             "(harness self-test)")

    p_train = sub.add_parser("train", help="train a model and dump artifacts")
    p_train.add_argument("--config", default=None, help="JSON config path")
    p_train.add_argument("--seed", type=int, default=None)
    p_train.add_argument("--out", default=None, help="output directory")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint")
    p_eval.add_argument("--checkpoint", required=True)
    p_eval.add_argument("--config", default=None)
    p_eval.add_argument("--split", choices=("test", "train"), default="test")
    p_eval.add_argument("--step", type=int, default=None,
                        help="step label for the printed row "
                             "(default: the configured step count)")

    p_hist = sub.add_parser("hist-demo", help="print a soft histogram as CSV")
    p_hist.add_argument("--file", default=None,
                        help="whitespace-separated real values")
    p_hist.add_argument("--mu", type=float, default=0.2)
    p_hist.add_argument("--scale", type=float, default=0.05)
    p_hist.add_argument("--count", type=int, default=1000)
    p_hist.add_argument("--bins", type=int, default=None)
    p_hist.add_argument("--seed", type=int, default=None)

    return parser


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    args, extras = parser.parse_known_args(argv)
    try:
        if args.command == "gradcheck":
            if extras:
                raise ConfigError(f"unknown arguments: {extras}")
            return cmd_gradcheck(args)
        if args.command == "train":
            return cmd_train(args, extras)
        if args.command == "eval":
            return cmd_eval(args, extras)
        if args.command == "hist-demo":
            if extras:
                raise ConfigError(f"unknown arguments: {extras}")
            return cmd_hist_demo(args)
        raise ConfigError(f"unknown command {args.command}")
    except NumericsError as e:
        print(f"numerics failure: {e}", file=sys.stderr)
        return EXIT_NUMERICS
    except (ConfigError, JulkitError) as e:
        print(f"error: {e}", file=sys.stderr)
        return EXIT_INPUT


if __name__ == "__main__":
    sys.exit(main())
