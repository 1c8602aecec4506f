"""Shared statistics: correlations, partition agreement, clustering, intervals.

Everything downstream (axis metrics, lesion summaries, pruning comparisons)
funnels its inferential arithmetic through this module so conventions are set
once: Spearman uses average ranks, Kendall is the tau-b tie correction, ARI
follows the permutation-model adjustment with the degenerate cases pinned,
bootstrap CIs are percentile CIs over resampled paired units, and binomial
intervals are Wilson score intervals.
"""

from dataclasses import dataclass

import numpy as np
from scipy import stats as sps

from ._util import rng_for
from .errors import DegenerateDataError


@dataclass
class Partition:
    """Cluster labels for a fixed set of items (dense labels, 0..k-1)."""

    labels: np.ndarray

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=int)

    @property
    def num_items(self):
        return int(self.labels.size)

    @property
    def num_clusters(self):
        return int(np.unique(self.labels).size)


def _check_pair(x, y):
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError(f"length mismatch: {x.size} vs {y.size}")
    if x.size < 2:
        raise DegenerateDataError("correlation needs at least 2 points")
    if np.ptp(x) == 0 or np.ptp(y) == 0:
        raise DegenerateDataError("correlation undefined for zero-variance input")
    return x, y


def correlation(x, y, method="pearson"):
    """Correlation of two vectors; method in {pearson, spearman, kendall}.

    Spearman is Pearson on average ranks; Kendall is tau-b. Zero-variance
    input raises DegenerateDataError rather than returning NaN.
    """
    x, y = _check_pair(x, y)
    if method == "pearson":
        return float(sps.pearsonr(x, y).statistic)
    if method == "spearman":
        return float(sps.spearmanr(x, y).statistic)
    if method == "kendall":
        return float(sps.kendalltau(x, y).statistic)
    raise ValueError(f"unknown correlation method {method!r}")


def adjusted_rand_index(a, b):
    """ARI between two partitions of the same items.

    Degenerate conventions: two identical single-cluster partitions agree
    perfectly (1.0); an all-in-one partition against any non-trivial one
    scores 0.0 (the formula's numerator vanishes).
    """
    if not isinstance(a, Partition):
        a = Partition(np.asarray(a))
    if not isinstance(b, Partition):
        b = Partition(np.asarray(b))
    if a.num_items != b.num_items:
        raise ValueError(f"partition sizes differ: {a.num_items} vs {b.num_items}")
    n = a.num_items
    if n == 0:
        raise DegenerateDataError("empty partitions")
    _, la = np.unique(a.labels, return_inverse=True)
    _, lb = np.unique(b.labels, return_inverse=True)
    ka, kb = la.max() + 1, lb.max() + 1
    contingency = np.zeros((ka, kb), dtype=np.int64)
    np.add.at(contingency, (la, lb), 1)

    def comb2(v):
        return v * (v - 1) / 2.0

    sum_ij = comb2(contingency).sum()
    sum_a = comb2(contingency.sum(axis=1)).sum()
    sum_b = comb2(contingency.sum(axis=0)).sum()
    total = comb2(np.float64(n))
    if total == 0:
        return 1.0
    expected = sum_a * sum_b / total
    max_index = 0.5 * (sum_a + sum_b)
    denom = max_index - expected
    if denom == 0:
        # Both partitions trivial (all singletons or all one cluster): they
        # are identical if and only if their cluster counts match.
        return 1.0 if ka == kb else 0.0
    return float((sum_ij - expected) / denom)


def permutation_null_ari(labels_a, labels_b, n_perm=1000, seed=0):
    """Null ARI distribution: shuffle labels_b's assignment n_perm times.

    Returns (null_values [n_perm], observed). Cluster size profiles are
    preserved exactly since only the item order is permuted.
    """
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    observed = adjusted_rand_index(labels_a, labels_b)
    rng = rng_for(seed, 11)
    null = np.empty(n_perm)
    for i in range(n_perm):
        null[i] = adjusted_rand_index(labels_a, rng.permutation(labels_b))
    return null, observed


def kmeans(points, k=3, n_init=10, max_iter=200, seed=0):
    """Lloyd's k-means with k-means++ seeding, best of n_init by inertia.

    Deterministic in seed. An empty cluster is re-seeded from the point
    farthest from its assigned centroid. Returns (Partition, centroids,
    inertia, diagnostics) where diagnostics holds per-cluster sizes and the
    mean silhouette (0.0 when k == 1 or any cluster is a singleton-free
    degenerate case where silhouette is undefined).
    """
    points = np.asarray(points, dtype=float)
    if points.ndim != 2 or points.shape[0] < k:
        raise ValueError(f"need at least k={k} points, got shape {points.shape}")
    n = points.shape[0]
    best = None
    for trial in range(n_init):
        rng = rng_for(seed, 21, trial)
        centers = _kmeanspp(points, k, rng)
        for _ in range(max_iter):
            d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
            labels = d2.argmin(axis=1)
            new_centers = centers.copy()
            for c in range(k):
                mask = labels == c
                if mask.any():
                    new_centers[c] = points[mask].mean(axis=0)
                else:
                    far = d2[np.arange(n), labels].argmax()
                    new_centers[c] = points[far]
                    labels[far] = c
            if np.allclose(new_centers, centers):
                centers = new_centers
                break
            centers = new_centers
        d2 = ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)
        labels = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), labels].sum())
        if best is None or inertia < best[2]:
            best = (labels, centers, inertia)
    labels, centers, inertia = best
    diagnostics = {
        "sizes": np.bincount(labels, minlength=k).tolist(),
        "silhouette": _silhouette(points, labels),
    }
    return Partition(labels), centers, inertia, diagnostics


def _kmeanspp(points, k, rng):
    n = points.shape[0]
    centers = [points[rng.integers(n)]]
    for _ in range(1, k):
        d2 = np.min(((points[:, None, :] - np.asarray(centers)[None, :, :]) ** 2).sum(axis=2), axis=1)
        total = d2.sum()
        if total <= 0:
            centers.append(points[rng.integers(n)])
            continue
        centers.append(points[rng.choice(n, p=d2 / total)])
    return np.asarray(centers)


def _silhouette(points, labels):
    k = int(labels.max()) + 1
    if k < 2:
        return 0.0
    n = points.shape[0]
    dist = np.sqrt(((points[:, None, :] - points[None, :, :]) ** 2).sum(axis=2))
    scores = np.zeros(n)
    sizes = np.bincount(labels, minlength=k)
    for i in range(n):
        own = labels[i]
        if sizes[own] <= 1:
            scores[i] = 0.0
            continue
        a = dist[i, labels == own].sum() / (sizes[own] - 1)
        b = np.inf
        for c in range(k):
            if c == own or sizes[c] == 0:
                continue
            b = min(b, dist[i, labels == c].mean())
        scores[i] = 0.0 if max(a, b) == 0 else (b - a) / max(a, b)
    return float(scores.mean())


def bootstrap_mean_diff(x, y, n_boot=2000, seed=0, alpha=0.05):
    """Paired bootstrap percentile CI for mean(x - y) over matched units.

    Returns (mean_diff, lo, hi). Constant differences give a degenerate CI
    (lo == hi == mean).
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size or x.size == 0:
        raise ValueError("paired bootstrap needs matched non-empty vectors")
    diff = x - y
    rng = rng_for(seed, 31)
    idx = rng.integers(0, diff.size, size=(n_boot, diff.size))
    means = diff[idx].mean(axis=1)
    lo, hi = np.quantile(means, [alpha / 2, 1 - alpha / 2])
    return float(diff.mean()), float(lo), float(hi)


def wilson_ci(successes, trials, z=1.96):
    """Wilson score interval for a binomial proportion; returns (lo, hi)."""
    if trials <= 0:
        raise ValueError("trials must be positive")
    if not 0 <= successes <= trials:
        raise ValueError("successes out of range")
    p = successes / trials
    z2 = z * z
    denom = 1 + z2 / trials
    center = (p + z2 / (2 * trials)) / denom
    half = z * np.sqrt(p * (1 - p) / trials + z2 / (4 * trials * trials)) / denom
    return float(max(0.0, center - half)), float(min(1.0, center + half))
