"""Experiment orchestration: dataset prep, training loop, ablations, export.

A run writes four artifacts into its output directory: ``metrics.csv``
(one line per evaluation interval), ``summary.txt`` (plain key=value),
``checkpoint.bin`` (best eval AUC so far) and ``config.txt`` (the resolved
configuration). Identical config and seed reproduce all of them byte for
byte.
"""

import logging
import os
from dataclasses import dataclass, replace

import numpy as np

from . import data as dt
from . import interest as interest_mod
from .config import (
    ExperimentConfig,
    config_hash,
    config_lines,
    delimiter_char,
    to_model_config,
    validate,
)
from .errors import DataError
from .metrics import auc, log_loss
from .model import DemiNet, encode_batch
from .numerics import load_into, save_arrays
from .rng import stream_rng
from .training import Adam, TrainHyper, train_step

log = logging.getLogger("deminet")

METRICS_HEADER = "step,ce,ssl_total,train_auc,eval_auc,eval_logloss"


@dataclass
class DatasetBundle:
    train_samples: list
    eval_samples: list
    vocab: dt.Vocab
    split_timestamp: float
    ground_truth: dict | None = None


def prepare_dataset(cfg: ExperimentConfig) -> DatasetBundle:
    """Load or synthesize the behavior log and build train/eval samples."""
    if cfg.data_path:
        fmt = dt.LogFormat(
            delimiter=delimiter_char(cfg),
            click_events=frozenset(cfg.click_events.split(",")) if cfg.click_events else None,
        )
        behavior_log = dt.parse_behavior_log(cfg.data_path, fmt)
        if behavior_log.malformed:
            log.info("parsed %s: %d records, %d malformed lines dropped",
                     cfg.data_path, len(behavior_log), behavior_log.malformed)
        ground_truth = None
    else:
        behavior_log, ground_truth = dt.synth_generate(
            cfg.synth_users, cfg.synth_items, cfg.synth_interests,
            cfg.synth_seq_len, cfg.synth_noise, stream_rng(cfg.seed, "data"),
        )
    train_log, test_log, split_t = dt.temporal_split(behavior_log, cfg.train_fraction)
    vocab = dt.build_vocab(behavior_log)
    neg_rng = stream_rng(cfg.seed, "negatives")
    train_samples = dt.build_samples(train_log, vocab, cfg.n_max,
                                     cfg.min_interactions, cfg.neg_per_pos, neg_rng)
    eval_samples = dt.build_eval_samples(train_log, test_log, vocab, cfg.n_max,
                                         cfg.neg_per_pos, neg_rng)
    if not train_samples:
        raise DataError("no training samples survive the user filter")
    if not eval_samples:
        raise DataError("no evaluation samples (all test users are cold-start)")
    return DatasetBundle(train_samples, eval_samples, vocab, split_t, ground_truth)


def evaluate_model(model: DemiNet, samples, batch_size: int):
    """Score samples in eval mode; returns the (prediction, label) array."""
    scores = np.empty((len(samples), 2), dtype=np.float64)
    pos = 0
    for start in range(0, len(samples), batch_size):
        chunk = samples[start: start + batch_size]
        batch = encode_batch(chunk)
        result = model.forward(batch, training=False)
        scores[pos: pos + len(chunk), 0] = result.click.data
        scores[pos: pos + len(chunk), 1] = batch.labels
        pos += len(chunk)
    return scores


def _safe_auc(pairs) -> float:
    try:
        return auc(pairs)
    except DataError:
        return float("nan")


@dataclass
class RunResult:
    summary: dict
    metrics_path: str
    checkpoint_path: str


def run_experiment(cfg: ExperimentConfig) -> RunResult:
    """Train per config, evaluate at intervals, keep the best checkpoint."""
    validate(cfg)
    ds = prepare_dataset(cfg)
    model_cfg = to_model_config(cfg, ds.vocab.num_items, ds.vocab.num_categories)
    model = DemiNet(model_cfg, stream_rng(cfg.seed, "init"))
    optimizer = Adam(model.named_parameters(), lr=cfg.lr)
    hyper = TrainHyper(lr=cfg.lr, beta=cfg.beta, rho=cfg.rho,
                       clip_norm=cfg.clip_norm, ssl_off=cfg.ssl_off)
    view_rngs = (stream_rng(cfg.seed, "dropout-view-1"), stream_rng(cfg.seed, "dropout-view-2"))
    data_rng = stream_rng(cfg.seed, "data")

    os.makedirs(cfg.out_dir, exist_ok=True)
    metrics_path = os.path.join(cfg.out_dir, "metrics.csv")
    checkpoint_path = os.path.join(cfg.out_dir, "checkpoint.bin")
    with open(os.path.join(cfg.out_dir, "config.txt"), "w", encoding="utf-8") as fh:
        fh.write(config_lines(cfg) + "\n")

    train_samples = ds.train_samples
    order = data_rng.permutation(len(train_samples))
    cursor = 0
    interval_ce, interval_ssl, interval_count = 0.0, 0.0, 0
    interval_scores = []
    best_auc, best_step = -1.0, -1
    final_auc, final_logloss = float("nan"), float("nan")

    log.info("training %d steps on %d samples (%d eval), aggregation=%s",
             cfg.steps, len(train_samples), len(ds.eval_samples), cfg.aggregation)
    with open(metrics_path, "w", encoding="utf-8") as metrics_fh:
        metrics_fh.write(METRICS_HEADER + "\n")
        for step in range(1, cfg.steps + 1):
            if cursor + cfg.batch_size > len(order):
                order = data_rng.permutation(len(train_samples))
                cursor = 0
            take = order[cursor: cursor + cfg.batch_size]
            cursor += cfg.batch_size
            batch = encode_batch([train_samples[i] for i in take])
            capture = {}
            breakdown = train_step(batch, model, optimizer, hyper, view_rngs, capture)
            interval_ce += breakdown.ce
            interval_ssl += sum(breakdown.ssl_per_route)
            interval_count += 1
            interval_scores.append(np.column_stack([capture["click"], batch.labels]))

            if step % cfg.eval_interval == 0 or step == cfg.steps:
                eval_scores = evaluate_model(model, ds.eval_samples, cfg.batch_size)
                eval_auc = auc(eval_scores)
                eval_ll = log_loss(eval_scores)
                train_auc = _safe_auc(np.concatenate(interval_scores))
                metrics_fh.write(
                    f"{step},{interval_ce / interval_count:.6f},"
                    f"{interval_ssl / interval_count:.6f},{train_auc:.6f},"
                    f"{eval_auc:.6f},{eval_ll:.6f}\n"
                )
                log.info("step %d: ce=%.4f ssl=%.5f eval_auc=%.4f eval_ll=%.4f",
                         step, interval_ce / interval_count, interval_ssl / interval_count,
                         eval_auc, eval_ll)
                interval_ce, interval_ssl, interval_count = 0.0, 0.0, 0
                interval_scores = []
                if eval_auc > best_auc:
                    best_auc, best_step = eval_auc, step
                    save_arrays(checkpoint_path, model.checkpoint_arrays())
                final_auc, final_logloss = eval_auc, eval_ll

    summary = {
        "aggregation": cfg.aggregation,
        "best_eval_auc": f"{best_auc:.6f}",
        "best_step": best_step,
        "checkpoint": checkpoint_path,
        "config_hash": config_hash(cfg),
        "eval_samples": len(ds.eval_samples),
        "final_eval_auc": f"{final_auc:.6f}",
        "final_eval_logloss": f"{final_logloss:.6f}",
        "final_step": cfg.steps,
        "num_categories": ds.vocab.num_categories,
        "num_items": ds.vocab.num_items,
        "seed": cfg.seed,
        "train_samples": len(train_samples),
    }
    dt.write_manifest(os.path.join(cfg.out_dir, "summary.txt"), summary)
    return RunResult(summary=summary, metrics_path=metrics_path, checkpoint_path=checkpoint_path)


def run_ablations(cfg: ExperimentConfig) -> dict:
    """The four-row ablation table: full model and the three removals."""
    variants = {
        "full": cfg,
        "dha_off": replace(cfg, dha_off=True),
        "ssl_off": replace(cfg, ssl_off=True),
        "single_expert": replace(cfg, single_expert=True),
    }
    results = {}
    for name, variant in variants.items():
        variant = replace(variant, out_dir=os.path.join(cfg.out_dir, name))
        log.info("=== ablation %s ===", name)
        results[name] = run_experiment(variant).summary
    _write_table(os.path.join(cfg.out_dir, "ablation.txt"), results)
    return results


def run_aggregation_bench(cfg: ExperimentConfig) -> dict:
    """Train once per aggregation mode on the same data and compare."""
    results = {}
    for mode in ("deminet", "multi_avg", "hard_routing", "moe"):
        variant = replace(cfg, aggregation=mode, out_dir=os.path.join(cfg.out_dir, mode))
        log.info("=== aggregation %s ===", mode)
        results[mode] = run_experiment(variant).summary
    _write_table(os.path.join(cfg.out_dir, "aggregation.txt"), results)
    return results


def _write_table(path, results: dict) -> None:
    os.makedirs(os.path.dirname(path) or ".", exist_ok=True)
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("variant,best_eval_auc,final_eval_auc,final_eval_logloss\n")
        for name, summary in results.items():
            fh.write(f"{name},{summary['best_eval_auc']},{summary['final_eval_auc']},"
                     f"{summary['final_eval_logloss']}\n")


def export_interests(cfg: ExperimentConfig, checkpoint_path: str, out_path: str,
                     max_samples: int = 64) -> int:
    """Write per-sample interest vectors and attention rows as CSV.

    One row per (sample, route): user, target item, route index, the d
    interest coordinates, then the attention weights over sequence
    positions (zero-padded to n_max). Full float64 precision so the rows
    reload exactly.
    """
    validate(cfg)
    ds = prepare_dataset(cfg)
    model_cfg = to_model_config(cfg, ds.vocab.num_items, ds.vocab.num_categories)
    model = DemiNet(model_cfg, stream_rng(cfg.seed, "init"))
    load_into(checkpoint_path, model.checkpoint_arrays())
    samples = ds.eval_samples[:max_samples]
    d = model_cfg.d
    with open(out_path, "w", encoding="utf-8") as fh:
        header = ["user", "target_item", "route"]
        header += [f"v{j}" for j in range(d)]
        header += [f"a{j}" for j in range(model_cfg.n_max)]
        fh.write(",".join(header) + "\n")
        for sample in samples:
            matrix = sample_interests(model, sample)
            att = np.zeros((model_cfg.num_interests, model_cfg.n_max))
            att[:, : matrix.attention.shape[1]] = matrix.attention.data
            for k in range(model_cfg.num_interests):
                row = [str(sample.user), str(sample.target_item), str(k)]
                row += [f"{x:.17g}" for x in matrix.v.data[k]]
                row += [f"{x:.17g}" for x in att[k]]
                fh.write(",".join(row) + "\n")
    return len(samples)


def micro_gradcheck(num_samples: int = 1, seed: int = 11, beta: float = 0.3,
                    rho: float = 0.5, step: float = 1e-6) -> dict:
    """Finite-difference check of every parameter on a micro model.

    Micro setup: d=8, 2 heads, 2 layers, 2 interest routes, sequences of up
    to 4 items, 8-unit hidden layers. The graph structure and the dropout
    view seeds are frozen so the loss is smooth in the parameters.
    Returns {parameter name: max relative error}.
    """
    from .interest import interest_distributions
    from .model import ModelConfig
    from .numerics import check_gradients
    from .training import bce_mean, ssl_loss, total_loss

    log_data, _ = dt.synth_generate(6, 12, 3, 6, 0.2, stream_rng(seed, "data"))
    vocab = dt.build_vocab(log_data)
    train_log, _, _ = dt.temporal_split(log_data, 0.8)
    samples = dt.build_samples(train_log, vocab, 4, 2, 1, stream_rng(seed, "negatives"))
    model_cfg = ModelConfig(
        num_items=vocab.num_items, num_categories=vocab.num_categories,
        d=8, heads=2, gnn_layers=2, num_interests=2, epsilon=2, n_max=4,
        interest_hidden=8, expert_hidden=(8, 8), confinet_hidden=(8, 8),
    )
    model = DemiNet(model_cfg, stream_rng(seed, "init"))
    batch = encode_batch(samples[:num_samples])
    h0 = model.item_emb.data[batch.node_items] + model.cat_emb.data[batch.node_cats]
    graphs = model._build_graphs(batch, h0)
    seed_rng = stream_rng(seed, "dropout-view-1")
    view_seeds = (seed_rng.integers(0, 2**63 - 1, size=batch.size),
                  seed_rng.integers(0, 2**63 - 1, size=batch.size))

    def loss_fn():
        res = model.forward(batch, training=True, view_seeds=view_seeds, rho=rho,
                            update_stats=False, fixed_graphs=graphs)
        ce = bce_mean(res.click, batch.labels)
        p1 = interest_distributions(res.ssl_views[0])
        p2 = interest_distributions(res.ssl_views[1])
        return total_loss(ce, ssl_loss(p1, p2), beta)

    from .numerics.gradcheck import check_parameter_gradients

    return check_parameter_gradients(loss_fn, model.named_parameters(), step=step)


def sample_interests(model: DemiNet, sample) -> interest_mod.InterestMatrix:
    """Interest matrix of one sample through the full (undropped) path."""
    from .numerics import add, gather_rows, reshape

    batch = encode_batch([sample])
    h0 = add(gather_rows(model.item_emb, batch.node_items),
             gather_rows(model.cat_emb, batch.node_cats))
    h_t = add(gather_rows(model.item_emb, batch.target_items),
              gather_rows(model.cat_emb, batch.target_cats))
    from . import hga as hga_mod
    from .seqgraph import full_view

    if model.uses_graph:
        graphs = model._build_graphs(batch, h0.data)
        edge_set = hga_mod.batch_edge_set([full_view(g) for g in graphs], batch.offsets)
    else:
        edge_set = None
    h_star = hga_mod.hga_forward(edge_set, h0, model.hga, batch.node_pos)
    return interest_mod.extract_interests(
        h_star, reshape(h_t, (h_t.shape[-1],)), model.interest, valid_len=len(sample.items)
    )
