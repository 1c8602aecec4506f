"""Graph construction and greedy modularity tests.

The greedy result is audited against exhaustive partition enumeration
(restricted growth strings) on small random graphs, and against exact
closed-form modularity on planted structures.
"""

from collections import defaultdict

import numpy as np
import pytest

from channel_axes.graph_modularity import (
    ChannelGraph,
    build_graph,
    greedy_communities,
    layer_graph_report,
    modularity_q,
    redundancy_weights,
    synergy_weights,
)
from channel_axes.stats_core import adjusted_rand_index


def q_oracle(n, edges, labels):
    # independent dict-based modularity implementation
    total = sum(w for _, _, w in edges)
    if total == 0:
        return 0.0
    intra = sum(w for i, j, w in edges if labels[i] == labels[j])
    deg = defaultdict(float)
    for i, j, w in edges:
        deg[i] += w
        deg[j] += w
    d_c = defaultdict(float)
    for node, d in deg.items():
        d_c[labels[node]] += d
    return intra / total - sum((d / (2 * total)) ** 2 for d in d_c.values())


def all_labelings(n):
    # canonical set-partition labelings via restricted growth strings
    def rec(i, used, a):
        if i == n:
            yield a[:]
            return
        for lab in range(used + 1):
            a[i] = lab
            yield from rec(i + 1, max(used, lab + 1), a)

    yield from rec(0, 0, [0] * n)


def brute_force_best_q(graph):
    best = -np.inf
    best_labels = None
    for labels in all_labelings(graph.n):
        q = q_oracle(graph.n, graph.edges, labels)
        if q > best:
            best, best_labels = q, labels
    return best, best_labels


def two_triangles():
    edges = [(0, 1, 1.0), (0, 2, 1.0), (1, 2, 1.0), (3, 4, 1.0), (3, 5, 1.0), (4, 5, 1.0)]
    return ChannelGraph(n=6, edges=edges, kind="redundancy")


def random_graph(rng, n, p=0.4):
    edges = []
    for i in range(n):
        for j in range(i + 1, n):
            if rng.uniform() < p:
                edges.append((i, j, float(rng.uniform(0.1, 1.0))))
    return ChannelGraph(n=n, edges=edges, kind="redundancy")


class TestModularityQ:
    def test_two_triangles_exact_half(self):
        g = two_triangles()
        assert modularity_q(g, [0, 0, 0, 1, 1, 1]) == 0.5

    def test_single_community_is_zero(self):
        g = two_triangles()
        assert modularity_q(g, [0] * 6) == pytest.approx(0.0, abs=1e-15)

    def test_empty_graph_is_zero(self):
        g = ChannelGraph(n=4, edges=[], kind="redundancy")
        assert modularity_q(g, [0, 1, 2, 3]) == 0.0

    def test_matches_oracle_on_random_labelings(self):
        rng = np.random.default_rng(8)
        for _ in range(20):
            g = random_graph(rng, int(rng.integers(4, 9)))
            labels = rng.integers(0, 3, size=g.n)
            assert modularity_q(g, labels) == pytest.approx(q_oracle(g.n, g.edges, labels), abs=1e-12)

    def test_scale_invariant(self):
        g = random_graph(np.random.default_rng(9), 7)
        scaled = ChannelGraph(n=g.n, edges=[(i, j, 17.0 * w) for i, j, w in g.edges], kind=g.kind)
        labels = [0, 0, 1, 1, 2, 2, 2]
        assert modularity_q(g, labels) == pytest.approx(modularity_q(scaled, labels), abs=1e-12)


class TestGreedyCommunities:
    def test_recovers_two_triangles(self):
        part, q = greedy_communities(two_triangles())
        assert q == 0.5
        np.testing.assert_array_equal(part.labels, [0, 0, 0, 1, 1, 1])

    def test_empty_graph_stays_singletons(self):
        part, q = greedy_communities(ChannelGraph(n=5, edges=[], kind="redundancy"))
        assert q == 0.0
        assert part.num_clusters == 5

    def test_isolated_vertices_stay_singletons(self):
        g = ChannelGraph(n=4, edges=[(0, 1, 1.0)], kind="redundancy")
        part, _ = greedy_communities(g)
        assert part.labels[2] != part.labels[3]
        assert part.labels[0] not in (part.labels[2], part.labels[3])

    def test_two_cliques_with_weak_bridge(self):
        edges = []
        for block in (range(4), range(4, 8)):
            block = list(block)
            for a in range(4):
                for b in range(a + 1, 4):
                    edges.append((block[a], block[b], 1.0))
        edges.append((3, 4, 0.05))
        part, q = greedy_communities(ChannelGraph(n=8, edges=edges, kind="redundancy"))
        planted = np.array([0, 0, 0, 0, 1, 1, 1, 1])
        assert adjusted_rand_index(part.labels, planted) == 1.0
        assert q > 0.4

    def test_never_beats_brute_force(self):
        rng = np.random.default_rng(77)
        sizes = [int(rng.integers(5, 8)) for _ in range(40)] + [8] * 10
        for n in sizes:
            g = random_graph(rng, n)
            part, q = greedy_communities(g)
            best, _ = brute_force_best_q(g)
            assert q <= best + 1e-9
            assert q == pytest.approx(q_oracle(g.n, g.edges, part.labels), abs=1e-12)

    def test_scaling_leaves_partition_unchanged(self):
        g = random_graph(np.random.default_rng(11), 9)
        scaled = ChannelGraph(n=g.n, edges=[(i, j, 3.5 * w) for i, j, w in g.edges], kind=g.kind)
        part_a, q_a = greedy_communities(g)
        part_b, q_b = greedy_communities(scaled)
        np.testing.assert_array_equal(part_a.labels, part_b.labels)
        assert q_a == pytest.approx(q_b, abs=1e-12)


class TestBuildGraph:
    def test_keeps_top_tenth_rounded_up(self):
        w = np.zeros((5, 5))
        vals = iter([0.9, 0.8, 0.7, 0.6, 0.5])
        for i, j in [(0, 1), (0, 2), (1, 2), (2, 3), (3, 4)]:
            w[i, j] = w[j, i] = next(vals)
        g = build_graph(w, "redundancy", keep_frac=0.10)
        # 5 positive candidates -> ceil(0.5) = 1 edge
        assert g.edges == [(0, 1, 0.9)]

    def test_ties_break_lexicographically(self):
        w = np.zeros((4, 4))
        for i, j in [(0, 1), (0, 2), (1, 3)]:
            w[i, j] = w[j, i] = 0.5
        g = build_graph(w, "redundancy", keep_frac=0.3)
        assert g.edges == [(0, 1, 0.5)]

    def test_nonpositive_weights_never_kept(self):
        w = np.array([[0.0, -0.3, 0.0], [-0.3, 0.0, 0.2], [0.0, 0.2, 0.0]])
        g = build_graph(w, "synergy", keep_frac=1.0)
        assert g.edges == [(1, 2, 0.2)]

    def test_excluded_channels_dropped(self):
        w = np.full((3, 3), 0.5)
        np.fill_diagonal(w, 0.0)
        g = build_graph(w, "redundancy", keep_frac=1.0, excluded=(0,))
        assert g.edges == [(1, 2, 0.5)]

    def test_weight_matrix_round_trip(self):
        w = np.zeros((3, 3))
        w[0, 1] = w[1, 0] = 0.4
        g = build_graph(w, "redundancy", keep_frac=1.0)
        np.testing.assert_allclose(g.weight_matrix(), w)


class TestWeightMatrices:
    def test_redundancy_weight_closed_form(self):
        corr = np.array([[1.0, 0.8], [0.8, 1.0]])
        w = redundancy_weights(corr)
        expect = -0.5 * np.log(1 - 0.64)
        assert w[0, 1] == pytest.approx(expect, rel=1e-12)
        assert w[0, 0] == 0.0

    def test_synergy_weight_iid_pair(self):
        # equally informative independent channels: joint R^2 doubles, so the
        # pair beats its best member
        corr = np.eye(2)
        rho_ty = np.array([0.5, 0.5])
        w = synergy_weights(corr, rho_ty)
        i_single = -0.5 * np.log(1 - 0.25)
        i_joint = -0.5 * np.log(1 - 0.5)
        assert w[0, 1] == pytest.approx(i_joint - i_single, rel=1e-10)
        assert w[1, 0] == w[0, 1]

    def test_duplicate_pair_has_no_synergy(self):
        corr = np.array([[1.0, 1.0], [1.0, 1.0]])
        rho_ty = np.array([0.6, 0.6])
        w = synergy_weights(corr, rho_ty)
        assert abs(w[0, 1]) < 1e-6

    def test_layer_report_smoke(self):
        rng = np.random.default_rng(3)
        acts = rng.standard_normal((500, 12))
        acts[:, 0] = acts[:, 1] + 0.1 * rng.standard_normal(500)
        corr = np.corrcoef(acts, rowvar=False)
        t = acts[:, 0] + rng.standard_normal(500)
        rho_ty = np.array([np.corrcoef(acts[:, i], t)[0, 1] for i in range(12)])
        report = layer_graph_report(corr, rho_ty)
        for kind in ("redundancy", "synergy"):
            assert report[kind]["graph"].n == 12
            assert isinstance(report[kind]["q"], float)
        # the planted duplicate pair lands in one redundancy community
        labels = report["redundancy"]["partition"].labels
        assert labels[0] == labels[1]
