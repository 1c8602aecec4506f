"""Channel interaction graphs and greedy community structure.

Two sparse graphs are built per layer: a redundancy graph whose edge weight
is the Gaussian MI implied by the channel-channel correlation, and a synergy
graph whose edge weight is the extra target information a pair carries over
its better member. Only the strongest tenth of strictly positive candidate
edges survive, so community structure reflects the dominant interactions.

Communities come from plain agglomerative modularity maximization: start
from singletons and keep applying the best positive-gain merge. For the
weighted modularity used here,

    Q = sum_c [ w_intra(c) / W  -  (d_c / 2W)^2 ],

merging two unconnected communities never helps, so isolated channels stay
singletons and the loop terminates at a local maximum.
"""

import math
from dataclasses import dataclass

import numpy as np

from .axis_metrics import joint_mi_pairs, mi_from_corr
from .stats_core import Partition

GRAPH_KINDS = ("redundancy", "synergy")


@dataclass
class ChannelGraph:
    """Undirected weighted graph over one layer's channels (edges i < j, w > 0)."""

    n: int
    edges: list[tuple[int, int, float]]
    kind: str

    def weight_matrix(self):
        a = np.zeros((self.n, self.n))
        for i, j, w in self.edges:
            a[i, j] = a[j, i] = w
        return a


def redundancy_weights(corr, clip=1e-6):
    """Pairwise overlap weights -0.5 ln(1 - rho^2), zero diagonal."""
    w = mi_from_corr(np.asarray(corr, dtype=float), clip=clip)
    np.fill_diagonal(w, 0.0)
    return w


def synergy_weights(corr, rho_ty, ridge=1e-12, clip=1e-6):
    """Pairwise synergy I(T;[Y_i,Y_j]) - max(I_i, I_j), all pairs, unclipped."""
    n = corr.shape[0]
    i_ty = mi_from_corr(np.asarray(rho_ty, dtype=float), clip=clip)
    idx = np.array([(i, j) for i in range(n) for j in range(i + 1, n)], dtype=int)
    out = np.zeros((n, n))
    if idx.size == 0:
        return out
    joint = joint_mi_pairs(corr, rho_ty, idx, ridge=ridge, clip=clip)
    syn = joint - np.maximum(i_ty[idx[:, 0]], i_ty[idx[:, 1]])
    out[idx[:, 0], idx[:, 1]] = syn
    out[idx[:, 1], idx[:, 0]] = syn
    return out


def build_graph(weights, kind, keep_frac=0.10, excluded=()):
    """Keep the top ceil(keep_frac * #positive) edges of a weight matrix.

    Candidate edges are the strictly positive entries above the diagonal
    between non-excluded channels; ties break lexicographically on (i, j).
    """
    weights = np.asarray(weights, dtype=float)
    n = weights.shape[0]
    skip = set(int(v) for v in excluded)
    candidates = [
        (i, j, float(weights[i, j]))
        for i in range(n)
        for j in range(i + 1, n)
        if i not in skip and j not in skip and weights[i, j] > 0
    ]
    keep = math.ceil(keep_frac * len(candidates))
    candidates.sort(key=lambda e: (-e[2], e[0], e[1]))
    return ChannelGraph(n=n, edges=candidates[:keep], kind=kind)


def modularity_q(graph, labels):
    """Weighted modularity of a labeling; 0 for a graph with no edges."""
    labels = np.asarray(labels)
    total = sum(w for _, _, w in graph.edges)
    if total <= 0:
        return 0.0
    intra = sum(w for i, j, w in graph.edges if labels[i] == labels[j])
    degree = np.zeros(graph.n)
    for i, j, w in graph.edges:
        degree[i] += w
        degree[j] += w
    d_c = np.zeros(int(labels.max()) + 1)
    np.add.at(d_c, labels, degree)
    return float(intra / total - ((d_c / (2.0 * total)) ** 2).sum())


def greedy_communities(graph):
    """Agglomerative modularity maximization from singletons.

    Repeatedly merges the connected community pair with the largest gain
    dQ = w_cd / W - d_c d_d / (2 W^2), ties to the lexicographically
    smallest pair, while any gain is positive. Returns (Partition, Q).
    """
    n = graph.n
    labels = np.arange(n)
    total = sum(w for _, _, w in graph.edges)
    if total <= 0:
        return Partition(labels), 0.0

    degree = {}
    between = {}
    for i, j, w in graph.edges:
        degree[i] = degree.get(i, 0.0) + w
        degree[j] = degree.get(j, 0.0) + w
        between[(i, j)] = between.get((i, j), 0.0) + w
    for c in range(n):
        degree.setdefault(c, 0.0)

    while True:
        best = None
        for (c, d), w_cd in between.items():
            gain = w_cd / total - degree[c] * degree[d] / (2.0 * total * total)
            if gain > 1e-15 and (best is None or gain > best[0] + 1e-15 or (abs(gain - best[0]) <= 1e-15 and (c, d) < best[1])):
                best = (gain, (c, d))
        if best is None:
            break
        c, d = best[1]
        # fold community d into c
        degree[c] += degree.pop(d)
        merged = {}
        for (a, b), w in between.items():
            a, b = (c if a == d else a), (c if b == d else b)
            if a == b:
                continue
            key = (min(a, b), max(a, b))
            merged[key] = merged.get(key, 0.0) + w
        between = merged
        labels[labels == d] = c

    # compact labels in order of first appearance
    remap = {}
    out = np.empty(n, dtype=int)
    for idx, lab in enumerate(labels):
        out[idx] = remap.setdefault(int(lab), len(remap))
    part = Partition(out)
    return part, modularity_q(graph, out)


def layer_graph_report(corr, rho_ty, keep_frac=0.10, ridge=1e-12, clip=1e-6, excluded=()):
    """Redundancy and synergy graphs with their communities, for one layer."""
    report = {}
    for kind in GRAPH_KINDS:
        if kind == "redundancy":
            weights = redundancy_weights(corr, clip=clip)
        else:
            weights = synergy_weights(corr, rho_ty, ridge=ridge, clip=clip)
        graph = build_graph(weights, kind, keep_frac=keep_frac, excluded=excluded)
        part, q = greedy_communities(graph)
        report[kind] = {"graph": graph, "partition": part, "q": q}
    return report
