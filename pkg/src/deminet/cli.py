"""Command-line entry point.

Verbs: synth, prepare-data, train, evaluate, ablate, bench-aggregation,
gradcheck, export-interests. Every configuration key is both a config-file
line and a flag of the same name; flags override the file.

Exit codes: 0 success, 2 config validation failure, 3 data error,
4 numeric failure (NaN abort).
"""

import argparse
import logging
import os
import sys
from dataclasses import fields

from . import data as dt
from .config import (
    ExperimentConfig,
    delimiter_char,
    load_config_file,
    make_config,
    validate,
)
from .errors import ConfigError, DataError, NumericError
from .experiment import (
    evaluate_model,
    export_interests,
    micro_gradcheck,
    prepare_dataset,
    run_ablations,
    run_aggregation_bench,
    run_experiment,
)
from .metrics import auc, log_loss
from .rng import stream_rng

log = logging.getLogger("deminet")

VERBS = ("synth", "prepare-data", "train", "evaluate", "ablate",
         "bench-aggregation", "gradcheck", "export-interests")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="deminet", description=__doc__,
                                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in VERBS:
        p = sub.add_parser(verb)
        p.add_argument("--config", default=None, help="flat key=value config file")
        for f in fields(ExperimentConfig):
            default = getattr(ExperimentConfig(), f.name)
            p.add_argument(f"--{f.name}", default=None, metavar=str(default),
                           help=f"override (default {default})")
        if verb in ("evaluate", "export-interests"):
            p.add_argument("--checkpoint", required=True)
        if verb == "export-interests":
            p.add_argument("--out", required=True, help="CSV output path")
            p.add_argument("--max-samples", type=int, default=64)
    return parser


def _config_from_args(args) -> ExperimentConfig:
    file_values = load_config_file(args.config) if args.config else {}
    overrides = {
        f.name: getattr(args, f.name)
        for f in fields(ExperimentConfig)
        if getattr(args, f.name, None) is not None
    }
    cfg = make_config(file_values, overrides)
    validate(cfg)
    return cfg


def cmd_synth(cfg: ExperimentConfig) -> int:
    behavior_log, ground_truth = dt.synth_generate(
        cfg.synth_users, cfg.synth_items, cfg.synth_interests,
        cfg.synth_seq_len, cfg.synth_noise, stream_rng(cfg.seed, "data"),
    )
    os.makedirs(cfg.out_dir, exist_ok=True)
    log_path = os.path.join(cfg.out_dir, "synthetic_log.tsv")
    dt.write_log_tsv(behavior_log, log_path)
    import json

    truth_path = os.path.join(cfg.out_dir, "ground_truth.json")
    with open(truth_path, "w", encoding="utf-8") as fh:
        json.dump(ground_truth, fh, indent=1, sort_keys=True)
    print(f"wrote {len(behavior_log)} records to {log_path}")
    print(f"wrote cluster assignments to {truth_path}")
    return 0


def cmd_prepare_data(cfg: ExperimentConfig) -> int:
    ds = prepare_dataset(cfg)
    os.makedirs(cfg.out_dir, exist_ok=True)
    train_path = os.path.join(cfg.out_dir, "train_samples.bin")
    eval_path = os.path.join(cfg.out_dir, "eval_samples.bin")
    dt.write_samples(train_path, ds.train_samples)
    dt.write_samples(eval_path, ds.eval_samples)
    manifest = {
        "eval_samples": len(ds.eval_samples),
        "num_categories": ds.vocab.num_categories,
        "num_items": ds.vocab.num_items,
        "num_users": ds.vocab.num_users,
        "split_timestamp": ds.split_timestamp,
        "train_samples": len(ds.train_samples),
    }
    dt.write_manifest(os.path.join(cfg.out_dir, "manifest.txt"), manifest)
    print(f"wrote {len(ds.train_samples)} train / {len(ds.eval_samples)} eval samples to {cfg.out_dir}")
    return 0


def cmd_train(cfg: ExperimentConfig) -> int:
    result = run_experiment(cfg)
    for key in sorted(result.summary):
        print(f"{key}={result.summary[key]}")
    return 0


def cmd_evaluate(cfg: ExperimentConfig, checkpoint: str) -> int:
    from .config import to_model_config
    from .model import DemiNet
    from .numerics import load_into

    ds = prepare_dataset(cfg)
    model = DemiNet(to_model_config(cfg, ds.vocab.num_items, ds.vocab.num_categories),
                    stream_rng(cfg.seed, "init"))
    load_into(checkpoint, model.checkpoint_arrays())
    scores = evaluate_model(model, ds.eval_samples, cfg.batch_size)
    print(f"eval_auc={auc(scores):.6f}")
    print(f"eval_logloss={log_loss(scores):.6f}")
    print(f"eval_samples={len(scores)}")
    return 0


def cmd_ablate(cfg: ExperimentConfig) -> int:
    results = run_ablations(cfg)
    print("variant,best_eval_auc,final_eval_auc,final_eval_logloss")
    for name, summary in results.items():
        print(f"{name},{summary['best_eval_auc']},{summary['final_eval_auc']},"
              f"{summary['final_eval_logloss']}")
    return 0


def cmd_bench_aggregation(cfg: ExperimentConfig) -> int:
    results = run_aggregation_bench(cfg)
    print("mode,best_eval_auc,final_eval_auc,final_eval_logloss")
    for name, summary in results.items():
        print(f"{name},{summary['best_eval_auc']},{summary['final_eval_auc']},"
              f"{summary['final_eval_logloss']}")
    return 0


def cmd_gradcheck(cfg: ExperimentConfig) -> int:
    errors = micro_gradcheck(num_samples=1, seed=cfg.seed)
    worst = max(errors.values())
    for name in sorted(errors, key=errors.get, reverse=True)[:10]:
        print(f"{name}: {errors[name]:.3e}")
    print(f"max_relative_error={worst:.3e} over {len(errors)} parameters")
    if worst >= 1e-3:
        print("FAIL: tolerance 1e-3 exceeded")
        return 1
    print("PASS")
    return 0


def cmd_export_interests(cfg: ExperimentConfig, checkpoint: str, out: str,
                         max_samples: int) -> int:
    count = export_interests(cfg, checkpoint, out, max_samples)
    print(f"wrote interest vectors for {count} samples to {out}")
    return 0


def main(argv=None) -> int:
    logging.basicConfig(level=logging.INFO, format="%(levelname)s %(message)s",
                        stream=sys.stderr)
    args = build_parser().parse_args(argv)
    try:
        cfg = _config_from_args(args)
        if args.verb == "synth":
            return cmd_synth(cfg)
        if args.verb == "prepare-data":
            return cmd_prepare_data(cfg)
        if args.verb == "train":
            return cmd_train(cfg)
        if args.verb == "evaluate":
            return cmd_evaluate(cfg, args.checkpoint)
        if args.verb == "ablate":
            return cmd_ablate(cfg)
        if args.verb == "bench-aggregation":
            return cmd_bench_aggregation(cfg)
        if args.verb == "gradcheck":
            return cmd_gradcheck(cfg)
        if args.verb == "export-interests":
            return cmd_export_interests(cfg, args.checkpoint, args.out, args.max_samples)
        raise ConfigError(f"unknown verb {args.verb!r}")
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return 3
    except NumericError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        return 4


if __name__ == "__main__":
    sys.exit(main())
