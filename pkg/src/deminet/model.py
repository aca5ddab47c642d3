"""Full model assembly: embeddings, graph attention, interests, experts.

Batches are processed flattened: all sequences of a batch concatenate into
one node array and their graphs stack block-diagonally, so every attention
step is a segment operation over the whole batch. Node embeddings are the
sum of item and category embeddings; the target is embedded the same way
and doubles as the target-feature vector. The sequence summary is a mean
pool over valid positions (configurable to last-item).

Ablations rewire here: ``dha_off`` builds a zero-layer attention stack
(raw embeddings plus positional rows, no graphs); ``single_expert``
keeps all interest routes but collapses scoring to one expert.
"""

from dataclasses import dataclass

import numpy as np

from . import aggregate as agg
from . import hga, init, interest
from .errors import ConfigError, DataError
from .numerics import (
    Tensor,
    add,
    concat_lastdim,
    gather_rows,
    linear,
    reshape,
    scale_rows,
    segment_sum_rows,
    slice_lastdim,
)
from .seqgraph import build_hetero_graph, edge_dropout, full_view


@dataclass
class ModelConfig:
    num_items: int
    num_categories: int
    d: int = 16
    heads: int = 4
    gnn_layers: int = 2
    num_interests: int = 4
    epsilon: int = 3
    sim_threshold: float = 0.7
    n_max: int = 20
    interest_hidden: int = 16
    expert_hidden: tuple = (64, 32)
    confinet_hidden: tuple = (64, 32)
    leaky_slope: float = 0.01
    summary_pool: str = "mean"
    normalize_interest_weights: bool = True
    aggregation: str = "deminet"
    dha_off: bool = False
    single_expert: bool = False

    @property
    def num_experts(self) -> int:
        return 1 if self.single_expert else self.num_interests

    @property
    def expert_input_width(self) -> int:
        # flattened interests + sequence summary + target features
        return self.num_interests * self.d + self.d + self.d

    @property
    def context_width(self) -> int:
        return 2 * self.d


@dataclass
class Batch:
    """One flattened batch of samples."""

    node_items: np.ndarray
    node_cats: np.ndarray
    node_pos: np.ndarray
    sample_of_node: np.ndarray
    offsets: np.ndarray          # (B+1,) node offsets per sample
    lengths: np.ndarray          # (B,)
    target_items: np.ndarray
    target_cats: np.ndarray
    labels: np.ndarray           # float 0/1
    users: np.ndarray

    @property
    def size(self) -> int:
        return len(self.lengths)


def encode_batch(samples) -> Batch:
    if not samples:
        raise DataError("cannot encode an empty batch")
    lengths = np.array([len(s.items) for s in samples], dtype=np.int64)
    if lengths.min() < 1:
        raise DataError("every sample needs a nonempty behavior sequence")
    offsets = np.zeros(len(samples) + 1, dtype=np.int64)
    np.cumsum(lengths, out=offsets[1:])
    return Batch(
        node_items=np.concatenate([s.items for s in samples]).astype(np.int64),
        node_cats=np.concatenate([s.cats for s in samples]).astype(np.int64),
        node_pos=np.concatenate([np.arange(n, dtype=np.int64) for n in lengths]),
        sample_of_node=np.repeat(np.arange(len(samples), dtype=np.int64), lengths),
        offsets=offsets,
        lengths=lengths,
        target_items=np.array([s.target_item for s in samples], dtype=np.int64),
        target_cats=np.array([s.target_cat for s in samples], dtype=np.int64),
        labels=np.array([s.label for s in samples], dtype=np.float64),
        users=np.array([s.user for s in samples], dtype=np.int64),
    )


@dataclass
class ForwardResult:
    yhat: Tensor                 # (B, 2) probability rows
    click: Tensor                # (B,) click probability
    v_list: list
    o_list: list
    omega: Tensor | None
    ssl_views: tuple | None      # (v_list', v_list'') when computed
    graphs: list | None


class DemiNet:
    """Parameter container plus the batched forward pass."""

    def __init__(self, cfg: ModelConfig, rng: np.random.Generator):
        if cfg.d % cfg.heads != 0:
            raise ConfigError(f"d={cfg.d} must be divisible by heads={cfg.heads}")
        if cfg.aggregation not in agg.AGGREGATION_MODES:
            raise ConfigError(f"unknown aggregation mode {cfg.aggregation!r}")
        self.cfg = cfg
        self.item_emb = init.embedding_table((cfg.num_items, cfg.d), rng, "embed.item")
        self.cat_emb = init.embedding_table((cfg.num_categories, cfg.d), rng, "embed.category")
        layers = 0 if cfg.dha_off else cfg.gnn_layers
        self.hga = hga.build_hga_params(cfg.d, cfg.heads, layers, cfg.n_max, rng, cfg.leaky_slope)
        self.interest = interest.build_interest_params(
            cfg.d, cfg.num_interests, cfg.interest_hidden, rng,
            cfg.leaky_slope, cfg.normalize_interest_weights,
        )
        self.experts = [
            agg.build_expert_params(cfg.expert_input_width, cfg.expert_hidden, cfg.d, k, rng)
            for k in range(cfg.num_experts)
        ]
        self.confinet = agg.build_confinet_params(
            cfg.d + cfg.context_width, cfg.confinet_hidden, cfg.d, rng
        )
        self.gating = (
            agg.build_gating_params(cfg.context_width, cfg.num_experts, rng)
            if cfg.aggregation == "moe" else None
        )

    # -- parameter plumbing ------------------------------------------------

    def named_parameters(self) -> dict:
        out = {"embed.item": self.item_emb, "embed.category": self.cat_emb}
        out.update(hga.named_parameters(self.hga))
        out.update(interest.named_parameters(self.interest))
        out.update(agg.expert_named_parameters(self.experts))
        out.update(agg.confinet_named_parameters(self.confinet))
        if self.gating is not None:
            out.update({self.gating.w.name: self.gating.w, self.gating.b.name: self.gating.b})
        return out

    def named_buffers(self) -> dict:
        out = {}
        for k, e in enumerate(self.experts):
            out[f"expert{k}.bn.running_mean"] = e.bn_state.running_mean
            out[f"expert{k}.bn.running_var"] = e.bn_state.running_var
        return out

    def checkpoint_arrays(self) -> dict:
        arrays = {name: p.data for name, p in self.named_parameters().items()}
        arrays.update(self.named_buffers())
        return arrays

    @property
    def uses_graph(self) -> bool:
        return len(self.hga.layers) > 0

    # -- forward -----------------------------------------------------------

    def forward(self, batch: Batch, training: bool, view_seeds=None, rho: float = 0.0,
                collect=None, update_stats=None, fixed_graphs=None) -> ForwardResult:
        """Run the full prediction path, optionally with the two SSL views.

        The main prediction always uses the full graph; ``view_seeds`` (a
        pair of per-sample seed arrays) triggers two extra edge-dropout
        forwards whose interest matrices feed only the regularizer.
        ``fixed_graphs`` bypasses graph construction (gradient checking
        differentiates the loss at a frozen graph structure).
        """
        cfg = self.cfg
        if update_stats is None:
            update_stats = training
        h0 = add(gather_rows(self.item_emb, batch.node_items),
                 gather_rows(self.cat_emb, batch.node_cats))
        h_t = add(gather_rows(self.item_emb, batch.target_items),
                  gather_rows(self.cat_emb, batch.target_cats))

        graphs = None
        if self.uses_graph:
            graphs = fixed_graphs if fixed_graphs is not None else self._build_graphs(batch, h0.data)
            main_set = hga.batch_edge_set([full_view(g) for g in graphs], batch.offsets)
        else:
            main_set = None
        h_star = hga.hga_forward(main_set, h0, self.hga, batch.node_pos, collect)

        v_list, _w = interest.extract_interests_batched(
            h_star, h_t, self.interest, batch.sample_of_node, batch.size, collect
        )
        summary = self._summary(h_star, batch)
        context = concat_lastdim([summary, h_t])
        e_prime = concat_lastdim(v_list + [summary, h_t])
        o_list = agg.expert_scores(e_prime, self.experts, training,
                                   cfg.leaky_slope, update_stats)

        omega = None
        if cfg.aggregation in ("deminet", "hard_routing"):
            omega = agg.confidence_weights(v_list, context, self.confinet,
                                           [e.prototype for e in self.experts], cfg.leaky_slope)
            if collect is not None:
                collect.append(("omega", omega.data, None, None))
            if cfg.aggregation == "deminet" or training:
                yhat = agg.aggregate_predict(o_list, omega)
            else:
                # hard routing applies only at inference; training stays soft
                yhat = agg.baseline_aggregate(o_list, omega, "hard_routing")
        elif cfg.aggregation == "multi_avg":
            yhat = agg.baseline_aggregate(o_list, None, "multi_avg")
        else:  # moe
            gate_logits = linear(context, self.gating.w, self.gating.b)
            yhat = agg.baseline_aggregate(o_list, None, "moe", gating_logits=gate_logits)
        if collect is not None:
            collect.append(("yhat", yhat.data, None, None))

        click = reshape(slice_lastdim(yhat, 0, 1), (batch.size,))

        ssl_views = None
        if view_seeds is not None and self.uses_graph:
            ssl_views = tuple(
                self._view_interests(batch, h0, h_t, graphs, seeds, rho)
                for seeds in view_seeds
            )
        return ForwardResult(yhat=yhat, click=click, v_list=v_list, o_list=o_list,
                             omega=omega, ssl_views=ssl_views, graphs=graphs)

    def _build_graphs(self, batch: Batch, h0_data: np.ndarray) -> list:
        cfg = self.cfg
        return [
            build_hetero_graph(h0_data[batch.offsets[i]: batch.offsets[i + 1]],
                               cfg.epsilon, cfg.sim_threshold)
            for i in range(batch.size)
        ]

    def _view_interests(self, batch, h0, h_t, graphs, seeds, rho) -> list:
        views = [edge_dropout(g, rho, int(s)) for g, s in zip(graphs, seeds)]
        edge_set = hga.batch_edge_set(views, batch.offsets)
        h_star = hga.hga_forward(edge_set, h0, self.hga, batch.node_pos)
        v_list, _ = interest.extract_interests_batched(
            h_star, h_t, self.interest, batch.sample_of_node, batch.size
        )
        return v_list

    def _summary(self, h_star: Tensor, batch: Batch) -> Tensor:
        if self.cfg.summary_pool == "last":
            return gather_rows(h_star, batch.offsets[1:] - 1)
        if self.cfg.summary_pool != "mean":
            raise ConfigError(f"summary_pool must be mean|last, got {self.cfg.summary_pool!r}")
        sums = segment_sum_rows(h_star, batch.sample_of_node, batch.size)
        return scale_rows(sums, 1.0 / batch.lengths.astype(np.float64))
