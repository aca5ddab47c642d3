"""Hierarchical heterogeneous graph attention.

Two attention levels per layer: inter-node attention aggregates a node's
in-neighbors within one dependency relation; inter-dependency attention
then mixes the four relation-specific embeddings per node. Heads operate
on disjoint d/heads-wide slices and are concatenated back once per layer,
so width stays d through the stack. After the last layer a trainable
positional embedding row is added to each node.

A relation with no incoming edge for some node yields a zero relation
embedding there and is masked out of the dependency softmax, rather than
competing as a zero vector. Self-loops guarantee at least one unmasked
relation everywhere.

``inter_node_attention`` and ``inter_dependency_attention`` are the
readable single-head reference forms. The stacked forward uses fused
all-head composites (one tape entry per relation resp. layer) built on the
segment kernels; tests pin the two forms against each other.

Works on a single graph view or on a whole batch flattened into one
block-diagonal edge list; the math is identical.
"""

from dataclasses import dataclass, field

import numpy as np

from . import init, kernels
from .errors import ContractError, DimensionError
from .numerics import (
    Tensor,
    add,
    concat_lastdim,
    custom_op,
    edge_softmax,
    gather_rows,
    leaky_relu,
    matmul,
    reshape,
    scale_rows,
    segment_sum_rows,
    slice_lastdim,
    softmax_lastdim,
)
from .seqgraph import RELATIONS

_MASK_LOGIT = -1e30  # additive mask; exp underflows to exactly 0 after max-shift


@dataclass
class HgaLayerParams:
    """Per-relation, per-head attention vectors for one layer."""

    wn: dict            # (relation, head) -> Tensor(2*d_h, 1)
    wd: list            # head -> Tensor(d_h, 1)
    bd: list            # head -> Tensor(1,)


@dataclass
class HgaParams:
    d: int
    heads: int
    layers: list = field(default_factory=list)
    pos_embedding: Tensor | None = None   # (n_max, d)
    slope: float = 0.01

    @property
    def d_head(self) -> int:
        return self.d // self.heads


def build_hga_params(d: int, heads: int, num_layers: int, n_max: int,
                     rng: np.random.Generator, slope: float = 0.01) -> HgaParams:
    if d % heads != 0:
        raise ContractError(f"embedding width {d} not divisible by head count {heads}")
    d_h = d // heads
    params = HgaParams(d=d, heads=heads, slope=slope)
    for layer in range(num_layers):
        wn = {}
        for rel in RELATIONS:
            for phi in range(heads):
                wn[(rel, phi)] = init.xavier_uniform(
                    (2 * d_h, 1), rng, f"hga.layer{layer}.{rel}.head{phi}.Wn"
                )
        wd = [init.xavier_uniform((d_h, 1), rng, f"hga.layer{layer}.head{phi}.Wd")
              for phi in range(heads)]
        bd = [init.zeros((1,), f"hga.layer{layer}.head{phi}.bd") for phi in range(heads)]
        params.layers.append(HgaLayerParams(wn=wn, wd=wd, bd=bd))
    params.pos_embedding = init.embedding_table((n_max, d), rng, "hga.pos_embedding")
    return params


def named_parameters(params: HgaParams) -> dict:
    out = {}
    for lp in params.layers:
        for t in list(lp.wn.values()) + lp.wd + lp.bd:
            out[t.name] = t
    out[params.pos_embedding.name] = params.pos_embedding
    return out


class EdgeSet:
    """Flattened per-relation edges for one graph view or a whole batch."""

    def __init__(self, num_nodes: int, edges: dict):
        self.num_nodes = num_nodes
        self.edges = edges  # relation -> (src, dst) int64 arrays
        self.present = {}   # relation -> bool mask over nodes with >=1 in-edge
        for rel, (_, dst) in edges.items():
            mask = np.zeros(num_nodes, dtype=bool)
            mask[dst] = True
            self.present[rel] = mask

    def present_matrix(self) -> np.ndarray:
        return np.stack([self.present[rel] for rel in RELATIONS], axis=1)


def edge_set_from_view(view) -> EdgeSet:
    """Adapt a HeteroGraph or GraphView to the flattened interface."""
    return EdgeSet(view.n, {rel: view.edge_pairs(rel) for rel in RELATIONS})


def batch_edge_set(views, node_offsets: np.ndarray) -> EdgeSet:
    """Stack per-sample views block-diagonally using node offsets."""
    num_nodes = int(node_offsets[-1])
    edges = {}
    for rel in RELATIONS:
        srcs, dsts = [], []
        for view, off in zip(views, node_offsets[:-1]):
            s, d = view.edge_pairs(rel)
            srcs.append(s + off)
            dsts.append(d + off)
        edges[rel] = (
            np.concatenate(srcs) if srcs else np.zeros(0, dtype=np.int64),
            np.concatenate(dsts) if dsts else np.zeros(0, dtype=np.int64),
        )
    return EdgeSet(num_nodes, edges)


# ---------------------------------------------------------------------------
# single-head reference forms


def inter_node_attention(edge_set: EdgeSet, relation: str, h: Tensor,
                         wn: Tensor, slope: float) -> Tensor:
    """Aggregate each node's in-neighbors under one relation (one head).

    Edge scores apply the attention vector to the concatenated
    (destination, source) embedding pair, softmax-normalized over each
    node's in-neighbors. Nodes without in-edges get a zero row.
    """
    src, dst = edge_set.edges[relation]
    n = edge_set.num_nodes
    if len(src) == 0:
        return Tensor(np.zeros((n, h.shape[1])))
    h_dst = gather_rows(h, dst)
    h_src = gather_rows(h, src)
    pair = concat_lastdim([h_dst, h_src])
    scores = leaky_relu(reshape(matmul(pair, wn), (len(src),)), slope)
    alpha = edge_softmax(scores, dst, n)
    return segment_sum_rows(scale_rows(h_src, alpha), dst, n)


def inter_dependency_attention(dep_embeddings: dict, present: dict,
                               wd: Tensor, bd: Tensor, slope: float) -> Tensor:
    """Blend the relation-specific embeddings of each node (one head).

    Relations absent for a node are masked out of the softmax; self-loops
    ensure at least one stays.
    """
    rels = [rel for rel in RELATIONS if rel in dep_embeddings]
    if not rels:
        raise ContractError("dependency attention needs at least one relation")
    n = dep_embeddings[rels[0]].shape[0]
    cols, mask_cols = [], []
    for rel in rels:
        cols.append(leaky_relu(add(matmul(dep_embeddings[rel], wd), bd), slope))
        mask_cols.append(np.where(present[rel], 0.0, _MASK_LOGIT))
    scores = concat_lastdim(cols)                      # n x |rels|
    beta = softmax_lastdim(add(scores, Tensor(np.stack(mask_cols, axis=1))))
    out = None
    for k, rel in enumerate(rels):
        b_col = reshape(slice_lastdim(beta, k, 1), (n,))
        term = scale_rows(dep_embeddings[rel], b_col)
        out = term if out is None else add(out, term)
    return out


# ---------------------------------------------------------------------------
# fused all-head composites


def fused_relation_attention(h: Tensor, wn_list, src: np.ndarray, dst: np.ndarray,
                             n: int, slope: float, collect=None) -> Tensor:
    """All heads of one relation's inter-node attention in a single op.

    Equivalent to running ``inter_node_attention`` per head on the d/heads
    slices and concatenating; the per-head attention vectors assemble into
    block-diagonal projections so the scores come from two matmuls.
    """
    heads = len(wn_list)
    d = h.shape[1]
    d_h = d // heads
    m = len(src)
    if m == 0:
        return Tensor(np.zeros((n, d)))
    w1 = np.zeros((d, heads))
    w2 = np.zeros((d, heads))
    for phi, wn in enumerate(wn_list):
        w1[phi * d_h: (phi + 1) * d_h, phi] = wn.data[:d_h, 0]
        w2[phi * d_h: (phi + 1) * d_h, phi] = wn.data[d_h:, 0]
    hd = h.data
    s1 = hd @ w1
    s2 = hd @ w2
    raw = s1[dst] + s2[src]                    # (m, heads)
    act = np.where(raw >= 0, raw, slope * raw)
    alpha = kernels.edge_softmax_fwd_cols(act, dst, n)
    if collect is not None:
        collect.append(("alpha", alpha, dst, n))
    h_src = hd[src]
    msg = (h_src.reshape(m, heads, d_h) * alpha[:, :, None]).reshape(m, d)
    out_data = kernels.segment_sum_rows(msg, dst, n)

    def bw(g):
        gm3 = g[dst].reshape(m, heads, d_h)
        hs3 = h_src.reshape(m, heads, d_h)
        galpha = np.einsum("mpd,mpd->mp", gm3, hs3)
        gh = kernels.segment_sum_rows((alpha[:, :, None] * gm3).reshape(m, d), src, n)
        gact = kernels.edge_softmax_bwd_cols(alpha, galpha, dst, n)
        graw = np.where(raw >= 0, gact, slope * gact)
        gs1 = kernels.segment_sum_rows(graw, dst, n)
        gs2 = kernels.segment_sum_rows(graw, src, n)
        gh += gs1 @ w1.T
        gh += gs2 @ w2.T
        gw1 = hd.T @ gs1
        gw2 = hd.T @ gs2
        grads = [gh if h.requires_grad else None]
        for phi in range(heads):
            sl = slice(phi * d_h, (phi + 1) * d_h)
            grads.append(np.concatenate([gw1[sl, phi], gw2[sl, phi]])[:, None])
        return grads

    return custom_op("relation_attention", [h] + list(wn_list), out_data, bw)


def fused_dependency_attention(deps, present_mat: np.ndarray, wd_list, bd_list,
                               slope: float, collect=None) -> Tensor:
    """All heads of the inter-dependency blend in a single op.

    ``deps`` holds one (n, d) tensor per relation in canonical order;
    ``present_mat`` is the (n, relations) availability mask feeding the
    softmax masking.
    """
    heads = len(wd_list)
    n, d = deps[0].shape
    d_h = d // heads
    r = len(deps)
    d4 = np.stack([t.data for t in deps], axis=1).reshape(n, r, heads, d_h)
    wd2 = np.stack([t.data[:, 0] for t in wd_list], axis=0)        # (heads, d_h)
    bd = np.array([t.data[0] for t in bd_list])                    # (heads,)
    scores = np.einsum("nrpd,pd->nrp", d4, wd2) + bd[None, None, :]
    act = np.where(scores >= 0, scores, slope * scores)
    maskc = np.where(present_mat, 0.0, _MASK_LOGIT)                # (n, r)
    masked = act + maskc[:, :, None]
    shift = masked - masked.max(axis=1, keepdims=True)
    ex = np.exp(shift)
    beta = ex / ex.sum(axis=1, keepdims=True)                      # (n, r, heads)
    if collect is not None:
        collect.append(("beta", beta, present_mat, None))
    out_data = np.einsum("nrp,nrpd->npd", beta, d4).reshape(n, d)

    def bw(g):
        g3 = g.reshape(n, heads, d_h)
        gbeta = np.einsum("npd,nrpd->nrp", g3, d4)
        gmasked = beta * (gbeta - (gbeta * beta).sum(axis=1, keepdims=True))
        gscores = np.where(scores >= 0, gmasked, slope * gmasked)
        gd4 = beta[:, :, :, None] * g3[:, None, :, :]
        gd4 += gscores[:, :, :, None] * wd2[None, None, :, :]
        grads = [gd4[:, k].reshape(n, d) if deps[k].requires_grad else None
                 for k in range(r)]
        gwd2 = np.einsum("nrp,nrpd->pd", gscores, d4)
        for phi in range(heads):
            grads.append(gwd2[phi][:, None])
        for phi in range(heads):
            grads.append(gscores[:, :, phi].sum(keepdims=True).reshape(1))
        return grads

    return custom_op("dependency_attention", list(deps) + list(wd_list) + list(bd_list),
                     out_data, bw)


def hga_forward(edge_set: EdgeSet | None, h0: Tensor, params: HgaParams,
                positions: np.ndarray, collect=None) -> Tensor:
    """Run the stacked attention layers and add positional rows.

    ``positions`` holds each node's position inside its own sequence and
    indexes the positional embedding table. ``collect``, when given, is a
    list receiving ("alpha", weights, dst, n) and ("beta", rows, present,
    None) tuples for normalization diagnostics. With zero layers (the
    graph-free ablation) this reduces to h0 plus positional rows.
    """
    ep = params.pos_embedding
    if positions.size and positions.max() >= ep.shape[0]:
        raise DimensionError(
            f"sequence position {int(positions.max())} exceeds positional table rows {ep.shape[0]}"
        )
    h = h0
    if params.layers:
        present_mat = edge_set.present_matrix()
    for lp in params.layers:
        deps = []
        for rel in RELATIONS:
            src, dst = edge_set.edges[rel]
            deps.append(fused_relation_attention(
                h, [lp.wn[(rel, phi)] for phi in range(params.heads)],
                src, dst, edge_set.num_nodes, params.slope, collect,
            ))
        h = fused_dependency_attention(deps, present_mat, lp.wd, lp.bd,
                                       params.slope, collect)
    return add(h, gather_rows(ep, positions))


def hga_forward_reference(edge_set: EdgeSet, h0: Tensor, params: HgaParams,
                          positions: np.ndarray) -> Tensor:
    """Per-head composition of the reference ops; used to pin the fused path."""
    d_h = params.d_head
    h = h0
    for lp in params.layers:
        head_outputs = []
        for phi in range(params.heads):
            h_phi = slice_lastdim(h, phi * d_h, d_h) if params.heads > 1 else h
            dep = {rel: inter_node_attention(edge_set, rel, h_phi, lp.wn[(rel, phi)],
                                             params.slope)
                   for rel in RELATIONS}
            head_outputs.append(inter_dependency_attention(
                dep, edge_set.present, lp.wd[phi], lp.bd[phi], params.slope))
        h = concat_lastdim(head_outputs) if params.heads > 1 else head_outputs[0]
    return add(h, gather_rows(params.pos_embedding, positions))
