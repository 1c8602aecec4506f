"""Partial information decomposition under the minimum-MI convention, plus
higher-order (triplet) excess and a nonparametric estimator for spot checks.

With Gaussian singleton and joint MIs in hand, the MMI redundancy collapses
the two-source decomposition to arithmetic: redundancy is the smaller
singleton MI, the smaller source has zero unique information, and synergy is
whatever the joint adds over the larger singleton. ``triplet_excess``
extends the same bookkeeping one order up to ask how much a third channel
adds over the best pair, relative to how much the second added over the best
singleton. ``ksg_mi`` is the Kraskov k-nearest-neighbor estimator (algorithm
1, max norm) used to sanity-check the Gaussian closed forms on samples.
"""

from dataclasses import dataclass
from itertools import combinations

import numpy as np
from scipy.spatial import cKDTree
from scipy.special import digamma

from ._util import rng_for
from .axis_metrics import joint_mi_pairs, joint_mi_sets
from .errors import DegenerateDataError


@dataclass
class PidAtoms:
    """Two-source PID atoms (nats). clamped marks a joint MI raised to max(I1, I2)."""

    red: float
    uniq1: float
    uniq2: float
    syn: float
    i1: float
    i2: float
    i_joint: float
    clamped: bool

    def reconstruct_joint(self):
        return self.red + self.uniq1 + self.uniq2 + self.syn


def mmi_pid(i1, i2, i_joint):
    """Minimum-MI PID for two sources.

    red = min(I1, I2); the smaller source carries no unique information;
    syn = I_joint - max(I1, I2). A joint MI below max(I1, I2) (possible only
    through estimation noise) is clamped up to it and flagged.
    """
    i1 = float(i1)
    i2 = float(i2)
    i_joint = float(i_joint)
    if i1 < 0 or i2 < 0:
        raise ValueError("singleton MIs must be non-negative")
    lo, hi = min(i1, i2), max(i1, i2)
    clamped = i_joint < hi
    if clamped:
        i_joint = hi
    return PidAtoms(
        red=lo,
        uniq1=i1 - lo,
        uniq2=i2 - lo,
        syn=i_joint - hi,
        i1=i1,
        i2=i2,
        i_joint=i_joint,
        clamped=clamped,
    )


def triplet_excess(
    i_ty,
    corr,
    rho_ty,
    top_k=24,
    max_triples=1500,
    seed=0,
    ridge=1e-12,
    clip=1e-6,
    excluded=(),
    s2_floor=1e-9,
):
    """Third-order excess over pairs among the most task-relevant channels.

    Channels are restricted to the top_k by singleton task MI (non-excluded).
    For each sampled triple: S3 = joint MI of the triple minus its best pair;
    S2 = best pair minus best singleton. The headline ratio is
    mean(max(S3, 0)) / mean(S2) over triples with S2 > s2_floor. Triples are
    enumerated exhaustively when there are at most max_triples, else sampled
    without replacement with a fixed seed.
    """
    i_ty = np.asarray(i_ty, dtype=float)
    excluded = set(int(v) for v in excluded)
    eligible = [i for i in range(i_ty.size) if i not in excluded]
    if len(eligible) < 3:
        raise DegenerateDataError("triplet excess needs at least 3 usable channels")
    eligible.sort(key=lambda j: (-i_ty[j], j))
    chosen = eligible[: min(top_k, len(eligible))]
    all_triples = list(combinations(chosen, 3))
    if len(all_triples) > max_triples:
        rng = rng_for(seed, 51)
        pick = rng.choice(len(all_triples), size=max_triples, replace=False)
        triples = [all_triples[int(t)] for t in sorted(pick)]
    else:
        triples = all_triples

    pair_index = {}
    pair_list = []
    for tri in triples:
        for a, b in combinations(tri, 2):
            if (a, b) not in pair_index:
                pair_index[(a, b)] = len(pair_list)
                pair_list.append((a, b))
    pair_mi = joint_mi_pairs(corr, rho_ty, np.asarray(pair_list), ridge=ridge, clip=clip)
    triple_mi = joint_mi_sets(corr, rho_ty, [list(t) for t in triples], ridge=ridge, clip=clip)

    s3 = np.empty(len(triples))
    s2 = np.empty(len(triples))
    for idx, tri in enumerate(triples):
        best_pair = max(pair_mi[pair_index[(a, b)]] for a, b in combinations(tri, 2))
        best_single = max(i_ty[list(tri)])
        s3[idx] = triple_mi[idx] - best_pair
        s2[idx] = best_pair - best_single
    keep = s2 > s2_floor
    ratio = float(np.maximum(s3[keep], 0.0).mean() / s2[keep].mean()) if keep.any() else 0.0
    return {
        "channels": chosen,
        "triples": [list(t) for t in triples],
        "s3": s3,
        "s2": s2,
        "ratio": ratio,
        "n_used": int(keep.sum()),
        "n_skipped": int((~keep).sum()),
    }


_JITTER_X = 0.6180339887498949  # conjugate golden ratio
_JITTER_Y = 0.7548776662466927  # plastic-number analogue; incommensurate with the above


def _keyed_jitter(n, constant):
    seq = np.modf(np.arange(1, n + 1, dtype=float) * constant)[0]
    return seq - 0.5


def ksg_mi(x, y, k=4):
    """Kraskov MI estimator (algorithm 1, max norm), in nats.

    A deterministic index-keyed jitter (1e-10 of each scale) breaks ties so
    repeated values cannot produce zero neighbor distances; estimates may be
    slightly negative for independent data and are reported as-is.
    """
    x = np.asarray(x, dtype=float).ravel()
    y = np.asarray(y, dtype=float).ravel()
    if x.size != y.size:
        raise ValueError("x and y must have matching length")
    n = x.size
    if n < k + 2:
        raise ValueError(f"need at least k + 2 = {k + 2} samples")
    sx = x.std() or 1.0
    sy = y.std() or 1.0
    x = x + 1e-10 * sx * _keyed_jitter(n, _JITTER_X)
    y = y + 1e-10 * sy * _keyed_jitter(n, _JITTER_Y)

    tree = cKDTree(np.column_stack([x, y]))
    eps = tree.query(np.column_stack([x, y]), k=k + 1, p=np.inf)[0][:, k]

    def strict_counts(values, radii):
        order = np.argsort(values)
        svals = values[order]
        lo = np.searchsorted(svals, values - radii, side="right")
        hi = np.searchsorted(svals, values + radii, side="left")
        return hi - lo - 1  # exclude the point itself

    nx = strict_counts(x, eps)
    ny = strict_counts(y, eps)
    return float(digamma(k) + digamma(n) - np.mean(digamma(nx + 1) + digamma(ny + 1)))
