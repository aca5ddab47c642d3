"""Sequence-graph construction, the brute-force oracle, and edge dropout."""

import numpy as np
import pytest

from deminet.errors import DataError
from deminet.seqgraph import (
    RELATIONS,
    brute_force_graph_oracle,
    build_hetero_graph,
    cosine_similarity,
    edge_dropout,
    full_view,
)


class TestCosineSimilarity:
    def test_self_similarity(self, rng):
        v = rng.normal(size=6)
        assert np.isclose(cosine_similarity(v, v), 1.0)

    def test_orthogonal(self):
        assert cosine_similarity([1.0, 0.0], [0.0, 2.0]) == 0.0

    def test_scalar_arithmetic_oracle(self):
        assert abs(cosine_similarity([1.0, 1.0], [1.0, 0.0]) - 0.70711) < 1e-5

    def test_degenerate_norm_rule(self):
        assert cosine_similarity([0.0, 0.0], [1.0, 2.0]) == 0.0


class TestBuildGraph:
    def test_window_enumeration(self, rng):
        g = build_hetero_graph(rng.normal(size=(4, 8)), epsilon=1, threshold=0.7)
        assert g.edge_set("r_in") == {(0, 1), (1, 2), (2, 3)}
        assert g.edge_set("r_out") == {(1, 0), (2, 1), (3, 2)}
        assert len(g.edge_set("r_self")) == 4

    def test_singleton_sequence(self, rng):
        g = build_hetero_graph(rng.normal(size=(1, 4)), epsilon=3, threshold=0.0)
        assert g.edge_set("r_in") == set()
        assert g.edge_set("r_out") == set()
        assert g.edge_set("r_sim") == set()
        assert g.edge_set("r_self") == {(0, 0)}

    def test_identical_embeddings_fully_similar(self):
        h = np.tile([[1.0, 2.0, 3.0]], (3, 1))
        g = build_hetero_graph(h, epsilon=1, threshold=0.8)
        assert g.edge_set("r_sim") == {(i, j) for i in range(3) for j in range(3) if i != j}

    def test_empty_sequence_rejected(self):
        with pytest.raises(DataError):
            build_hetero_graph(np.zeros((0, 4)), 1, 0.5)

    def test_self_loops_exactly_diagonal(self, rng):
        g = build_hetero_graph(rng.normal(size=(5, 4)), 2, 0.6)
        assert g.edge_set("r_self") == {(i, i) for i in range(5)}

    def test_contextual_no_self_loops_and_transpose_property(self, rng):
        for _ in range(50):
            n = int(rng.integers(1, 15))
            eps = int(rng.integers(1, 5))
            g = build_hetero_graph(rng.normal(size=(n, 6)), eps, 0.7)
            r_in, r_out = g.edge_set("r_in"), g.edge_set("r_out")
            assert all(s != d for s, d in r_in | r_out)
            assert len(r_in) == len(r_out)
            assert r_out == {(j, i) for (i, j) in r_in}

    def test_sim_symmetric(self, rng):
        for _ in range(30):
            g = build_hetero_graph(rng.normal(size=(10, 4)), 1, 0.2)
            sim = g.edge_set("r_sim")
            assert sim == {(j, i) for (i, j) in sim}

    def test_sim_invariant_under_positive_rescaling(self, rng):
        h = rng.normal(size=(8, 5))
        before = build_hetero_graph(h, 1, 0.4).edge_set("r_sim")
        h2 = h.copy()
        h2[3] *= 17.5
        after = build_hetero_graph(h2, 1, 0.4).edge_set("r_sim")
        assert before == after

    def test_dump_lists_every_edge(self, rng):
        g = build_hetero_graph(rng.normal(size=(3, 4)), 1, 0.9)
        lines = g.dump().splitlines()
        assert sum(1 for line in lines if line.startswith("r_self")) == 3
        assert ("r_in 0 1") in lines


class TestOracleEquivalence:
    def test_500_random_sequences(self, rng):
        for trial in range(500):
            n = int(rng.integers(1, 21))
            eps = int(rng.integers(1, 5))
            t = (0.6, 0.7, 0.8)[trial % 3]
            h = rng.normal(size=(n, 6))
            fast = build_hetero_graph(h, eps, t)
            slow = brute_force_graph_oracle(h, eps, t)
            for rel in RELATIONS:
                assert fast.edge_set(rel) == slow.edge_set(rel)

    def test_window_clipped_at_boundary(self):
        h = np.tile([[1.0, 1.0]], (2, 1))
        g = brute_force_graph_oracle(h, epsilon=3, threshold=0.9)
        assert g.edge_set("r_in") == {(0, 1)}
        assert g.edge_set("r_out") == {(1, 0)}

    def test_threshold_above_cosine_range(self, rng):
        g = brute_force_graph_oracle(rng.normal(size=(5, 4)), 2, 1.01)
        assert g.edge_set("r_sim") == set()


class TestEdgeDropout:
    def test_rho_zero_keeps_everything(self, rng):
        g = build_hetero_graph(rng.normal(size=(6, 4)), 2, 0.2)
        view = edge_dropout(g, 0.0, rng_seed=5)
        for rel in RELATIONS:
            assert view.edge_set(rel) == g.edge_set(rel)

    def test_rho_one_keeps_only_self_loops(self, rng):
        g = build_hetero_graph(rng.normal(size=(6, 4)), 2, 0.2)
        view = edge_dropout(g, 1.0, rng_seed=5)
        for rel in ("r_in", "r_out", "r_sim"):
            assert view.edge_set(rel) == set()
        assert view.edge_set("r_self") == g.edge_set("r_self")

    def test_same_seed_identical_distinct_seeds_differ(self, rng):
        g = build_hetero_graph(rng.normal(size=(12, 4)), 3, 0.0)
        v1 = edge_dropout(g, 0.5, 42)
        v2 = edge_dropout(g, 0.5, 42)
        for rel in RELATIONS:
            assert v1.edge_set(rel) == v2.edge_set(rel)
        distinct = any(
            edge_dropout(g, 0.5, seed).edge_set("r_sim") != v1.edge_set("r_sim")
            for seed in range(43, 53)
        )
        assert distinct

    def test_binomial_concentration(self):
        # 100 similarity edges, rho 0.6: mean retained count over many seeds
        h = np.tile([[1.0, 0.5]], (11, 1))  # 110 ordered sim pairs; trim to 100
        g = build_hetero_graph(h, 1, 0.9)
        src, dst = g.edges["r_sim"]
        g.edges["r_sim"] = (src[:100], dst[:100])
        counts = [len(edge_dropout(g, 0.6, seed).edge_set("r_sim")) for seed in range(1000)]
        assert 36 <= np.mean(counts) <= 44

    def test_full_view_is_the_whole_graph(self, rng):
        g = build_hetero_graph(rng.normal(size=(5, 4)), 1, 0.5)
        view = full_view(g)
        for rel in RELATIONS:
            assert view.edge_set(rel) == g.edge_set(rel)
