"""Command-line entry point: train / eval / sweep / paired.

Every run echoes its resolved configuration into the output directory and is
a pure function of (config, seed, input files): repeating an invocation
reproduces metrics, checkpoints, and histograms byte for byte.
"""

from __future__ import annotations

import argparse
import json
import math
import os
import sys
from dataclasses import replace

from .analyze import histogram, write_histogram_csv, write_metrics_csv, write_trajectory_csvs
from .config import ExperimentConfig, build_train_config, load_config, with_mode
from .errors import SinreqError
from .model import init, load_into, save_checkpoint
from .train import SINREQ_MODES, TrainMode, evaluate_quantized, fit


def run_training(cfg: ExperimentConfig, out_dir: str):
    """Execute one training run into `out_dir`; returns (records, model, splits)."""
    os.makedirs(out_dir, exist_ok=True)
    with open(os.path.join(out_dir, "config.json"), "w", encoding="utf-8") as fh:
        json.dump(cfg.to_json_dict(), fh, indent=2)
        fh.write("\n")
    train_set, val_set = cfg.dataset.build()
    steps_per_epoch = max(1, math.ceil(len(train_set) / cfg.train.batch_size))
    tcfg = build_train_config(cfg, steps_per_epoch)
    model = init(cfg.model, cfg.train.seed)
    if cfg.train.init_checkpoint is not None:
        load_into(model, cfg.train.init_checkpoint)
    ckpt_dir = os.path.join(out_dir, "checkpoints")
    os.makedirs(ckpt_dir, exist_ok=True)
    bins = cfg.analysis.histogram_bins
    lo, hi = cfg.analysis.histogram_range

    def on_epoch(epoch, m, record):
        save_checkpoint(m, os.path.join(ckpt_dir, f"epoch_{epoch:04d}.ckpt"))
        for layer in m.spec.trainable_layers():
            counts = histogram(m.params[layer.name][0].data, bins, lo, hi)
            write_histogram_csv(
                os.path.join(out_dir, f"hist_{layer.name}_{epoch}.csv"), counts, lo, hi
            )

    records = fit(model, train_set, val_set, tcfg, on_epoch=on_epoch)
    write_metrics_csv(os.path.join(out_dir, "metrics.csv"), records)
    write_trajectory_csvs(out_dir, records)
    save_checkpoint(model, os.path.join(out_dir, "model.ckpt"))
    return records, model, (train_set, val_set)


def _accuracy_report(model, val_set) -> dict:
    pre, post = evaluate_quantized(model, val_set)
    return {
        "pre_snap_accuracy": pre,
        "post_snap_accuracy": post,
        "drop": pre - post,
    }


def _cmd_train(args) -> int:
    cfg = load_config(args.config)
    records, _, _ = run_training(cfg, cfg.output_dir)
    print(f"trained {len(records)} epochs, outputs in {cfg.output_dir}")
    return 0


def _cmd_eval(args) -> int:
    cfg = load_config(args.config)
    model = init(cfg.model, cfg.train.seed)
    load_into(model, args.checkpoint)
    _, val_set = cfg.dataset.build()
    print(json.dumps(_accuracy_report(model, val_set), indent=2))
    return 0


def _cmd_sweep(args) -> int:
    name, _, raw_values = args.vary.partition("=")
    if name != "lambda_q" or not raw_values:
        print("error: --vary expects lambda_q=<comma-separated values>", file=sys.stderr)
        return 2
    try:
        values = [float(v) for v in raw_values.split(",")]
    except ValueError:
        print(f"error: could not parse sweep values {raw_values!r}", file=sys.stderr)
        return 2
    cfg = load_config(args.config)
    summary = {}
    for value in values:
        sub_dir = os.path.join(cfg.output_dir, f"lambda_q_{value:g}")
        sub_cfg = replace(
            cfg, train=replace(cfg.train, lambda_q=value), output_dir=sub_dir
        )
        _, model, (_, val_set) = run_training(sub_cfg, sub_dir)
        summary[f"{value:g}"] = _accuracy_report(model, val_set)
    with open(os.path.join(cfg.output_dir, "sweep.json"), "w", encoding="utf-8") as fh:
        json.dump(summary, fh, indent=2)
        fh.write("\n")
    print(json.dumps(summary, indent=2))
    return 0


_BASELINE_OF = {
    TrainMode.FP_SINREQ: TrainMode.FP_BASELINE,
    TrainMode.STE_QUANTIZED_SINREQ: TrainMode.STE_QUANTIZED,
}


def _cmd_paired(args) -> int:
    cfg = load_config(args.config)
    if cfg.train.mode not in SINREQ_MODES:
        print(
            f"error: paired needs a sinreq training mode, got {cfg.train.mode.value!r}",
            file=sys.stderr,
        )
        return 1
    with_dir = os.path.join(cfg.output_dir, "with_sinreq")
    without_dir = os.path.join(cfg.output_dir, "without_sinreq")
    _, model_with, (_, val_set) = run_training(with_mode(cfg, cfg.train.mode, with_dir), with_dir)
    baseline_mode = _BASELINE_OF[cfg.train.mode]
    _, model_without, _ = run_training(with_mode(cfg, baseline_mode, without_dir), without_dir)
    comparison = {
        "with_sinreq": _accuracy_report(model_with, val_set),
        "without_sinreq": _accuracy_report(model_without, val_set),
    }
    with open(os.path.join(cfg.output_dir, "comparison.json"), "w", encoding="utf-8") as fh:
        json.dump(comparison, fh, indent=2)
        fh.write("\n")
    print(json.dumps(comparison, indent=2))
    return 0


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="sinreq",
        description="Quantization-aware training with a sinusoidal regularizer.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    p_train = sub.add_parser("train", help="run one training experiment")
    p_train.add_argument("config", help="experiment config JSON")
    p_train.set_defaults(func=_cmd_train)
    p_eval = sub.add_parser("eval", help="pre/post-snap accuracy of a checkpoint")
    p_eval.add_argument("checkpoint")
    p_eval.add_argument("config")
    p_eval.set_defaults(func=_cmd_eval)
    p_sweep = sub.add_parser("sweep", help="run the config once per lambda_q value")
    p_sweep.add_argument("config")
    p_sweep.add_argument("--vary", required=True, metavar="lambda_q=V1,V2,...")
    p_sweep.set_defaults(func=_cmd_sweep)
    p_paired = sub.add_parser("paired", help="same seed with and without the regularizer")
    p_paired.add_argument("config")
    p_paired.set_defaults(func=_cmd_paired)
    return parser


def main(argv=None) -> int:
    args = _build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (SinreqError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
