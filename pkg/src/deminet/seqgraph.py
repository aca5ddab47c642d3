"""Per-sequence heterogeneous graph with four dependency relations.

One node per sequence position. Relations:

* ``r_in``   — edges from each of the ``epsilon`` prior positions into a node,
* ``r_out``  — edges from each of the ``epsilon`` subsequent positions into a node,
* ``r_sim``  — bidirectional edges between pairs whose cosine similarity on the
               initial embeddings reaches the threshold,
* ``r_self`` — one self-loop per node, never dropped.

The window is clipped at sequence boundaries and similarity is measured once,
on the initial embeddings, so the structure is fixed across stacked attention
layers and shared by both self-supervision views.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ContractError, DataError
from .numerics import Tensor

RELATIONS = ("r_in", "r_out", "r_sim", "r_self")
CONTEXT_RELATIONS = ("r_in", "r_out", "r_sim")  # everything edge dropout may touch

_NORM_FLOOR = 1e-12


@dataclass
class HeteroGraph:
    """Node count plus per-relation directed edge arrays (src, dst)."""

    n: int
    edges: dict

    def edge_pairs(self, relation: str):
        src, dst = self.edges[relation]
        return src, dst

    def edge_set(self, relation: str) -> set:
        src, dst = self.edges[relation]
        return set(zip(src.tolist(), dst.tolist()))

    def num_edges(self, relation: str) -> int:
        return len(self.edges[relation][0])

    def dump(self) -> str:
        """Debug adjacency listing: one ``relation src dst`` line per edge."""
        lines = []
        for rel in RELATIONS:
            src, dst = self.edges[rel]
            for s, d in zip(src.tolist(), dst.tolist()):
                lines.append(f"{rel} {s} {d}")
        return "\n".join(lines)


@dataclass
class GraphView:
    """Edge-dropout view of a graph: per-relation retained edge subsets."""

    base: HeteroGraph
    retained: dict

    @property
    def n(self) -> int:
        return self.base.n

    def edge_pairs(self, relation: str):
        src, dst = self.retained[relation]
        return src, dst

    def edge_set(self, relation: str) -> set:
        src, dst = self.retained[relation]
        return set(zip(src.tolist(), dst.tolist()))


def full_view(g: HeteroGraph) -> GraphView:
    """A view retaining every edge (the main prediction path)."""
    return GraphView(base=g, retained=dict(g.edges))


def cosine_similarity(a: np.ndarray, b: np.ndarray) -> float:
    """Cosine of the angle between two vectors, 0 if either is degenerate."""
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    na = np.sqrt(np.dot(a, a))
    nb = np.sqrt(np.dot(b, b))
    if na < _NORM_FLOOR or nb < _NORM_FLOOR:
        return 0.0
    return float(np.dot(a, b) / (na * nb))


def _as_array(seq_embeddings) -> np.ndarray:
    data = seq_embeddings.data if isinstance(seq_embeddings, Tensor) else np.asarray(seq_embeddings)
    if data.ndim != 2:
        raise ContractError(f"sequence embeddings must be n x d, got shape {data.shape}")
    return np.asarray(data, dtype=np.float64)


def _similarity_matrix(h: np.ndarray) -> np.ndarray:
    """Pairwise cosine matrix, exactly symmetric, degenerate rows zeroed."""
    norms = np.sqrt((h * h).sum(axis=1))
    safe = np.where(norms < _NORM_FLOOR, 1.0, norms)
    hn = h / safe[:, None]
    m = hn @ hn.T
    m = np.triu(m, 1)
    m = m + m.T
    dead = norms < _NORM_FLOOR
    m[dead, :] = 0.0
    m[:, dead] = 0.0
    return m


def build_hetero_graph(seq_embeddings, epsilon: int, threshold: float) -> HeteroGraph:
    """Construct the four dependency relations for one sequence."""
    h = _as_array(seq_embeddings)
    n = h.shape[0]
    if n == 0:
        raise DataError("cannot build a graph for an empty sequence")
    if epsilon < 1:
        raise ContractError(f"epsilon must be >= 1, got {epsilon}")
    if not (-1.0 <= threshold <= 1.0):
        raise ContractError(f"similarity threshold must be in [-1, 1], got {threshold}")

    idx = np.arange(n, dtype=np.int64)
    in_src, in_dst, out_src, out_dst = [], [], [], []
    for off in range(1, epsilon + 1):
        if off >= n:
            break
        # prior item -> node
        in_src.append(idx[:-off])
        in_dst.append(idx[off:])
        # subsequent item -> node
        out_src.append(idx[off:])
        out_dst.append(idx[:-off])

    def _cat(parts):
        return np.concatenate(parts) if parts else np.zeros(0, dtype=np.int64)

    m = _similarity_matrix(h)
    sim_mask = m >= threshold
    np.fill_diagonal(sim_mask, False)
    sim_src, sim_dst = np.nonzero(sim_mask)

    edges = {
        "r_in": (_cat(in_src), _cat(in_dst)),
        "r_out": (_cat(out_src), _cat(out_dst)),
        "r_sim": (sim_src.astype(np.int64), sim_dst.astype(np.int64)),
        "r_self": (idx.copy(), idx.copy()),
    }
    return HeteroGraph(n=n, edges=edges)


def brute_force_graph_oracle(seq_embeddings, epsilon: int, threshold: float) -> HeteroGraph:
    """O(n^2) literal transcription of the relation definitions; test oracle only."""
    h = _as_array(seq_embeddings)
    n = h.shape[0]
    if n == 0:
        raise DataError("cannot build a graph for an empty sequence")
    r_in, r_out, r_sim, r_self = [], [], [], []
    for i in range(n):
        for j in range(n):
            if i - epsilon <= j < i:
                r_in.append((j, i))
            if i < j <= i + epsilon:
                r_out.append((j, i))
            if i != j and cosine_similarity(h[i], h[j]) >= threshold:
                r_sim.append((i, j))
        r_self.append((i, i))

    def _arrs(pairs):
        if not pairs:
            return np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64)
        src, dst = zip(*pairs)
        return np.asarray(src, dtype=np.int64), np.asarray(dst, dtype=np.int64)

    return HeteroGraph(
        n=n,
        edges={"r_in": _arrs(r_in), "r_out": _arrs(r_out), "r_sim": _arrs(r_sim), "r_self": _arrs(r_self)},
    )


def edge_dropout(g: HeteroGraph, rho: float, rng_seed: int) -> GraphView:
    """Independently retain each contextual/similarity edge with probability 1-rho.

    Self-loops are always kept so no node loses its last incoming edge.
    Deterministic given the seed; relations are masked in a fixed order.
    """
    if not (0.0 <= rho <= 1.0):
        raise ContractError(f"dropout ratio must be in [0, 1], got {rho}")
    rng = np.random.default_rng(rng_seed)
    retained = {}
    for rel in CONTEXT_RELATIONS:
        src, dst = g.edges[rel]
        keep = rng.random(len(src)) >= rho
        retained[rel] = (src[keep], dst[keep])
    retained["r_self"] = g.edges["r_self"]
    return GraphView(base=g, retained=retained)
