"""Per-channel two-axis metrics.

Local axis: how much of the layer's input a channel captures (``input_capture``,
a Gaussian MI proxy from signal power over a per-layer noise floor) and how
much its peers already cover it (``peer_overlap``, mean pairwise Gaussian MI).

Target axis: how much task information a channel carries alone (``task_mi``),
how much of that is shared with its strongest peers (``target_redundancy``),
and how much extra appears only jointly (``target_synergy``). Redundancy and
synergy are computed against a channel's top-m task-relevant partners; the
joint two-channel MI comes from a ridge-stabilized least-squares fit in
correlation space.

All MI values are in nats. Correlation magnitudes are clipped to 1 - clip
before the log so exact duplicates stay finite.
"""

from dataclasses import dataclass, field

import numpy as np

from ._util import parallel_map, rng_for
from .errors import BundleValidationError, DegenerateDataError

PARTNER_RULES = ("top_task", "top_joint", "top_synergy", "random_top_pool")
TARGET_KINDS = ("gt_margin", "pred_margin", "correct_logit", "pred_logit", "neg_loss", "ovr_label")


def mi_from_corr(rho, clip=1e-6):
    """Gaussian MI (nats) for correlation rho: -0.5 log(1 - rho^2).

    |rho| is clipped to 1 - clip so duplicated channels give a large finite
    value instead of infinity. Accepts scalars or arrays.
    """
    rho = np.clip(np.abs(np.asarray(rho, dtype=float)), 0.0, 1.0 - clip)
    return -0.5 * np.log1p(-(rho**2))


# ---------------------------------------------------------------------------
# Local axis
# ---------------------------------------------------------------------------


def input_capture(weight, patches, eps_cov=0.0):
    """Input-capture proxy I_X per channel.

    Signal power s_i = w_i . Sigma . w_i under the sample covariance of the
    layer's input patches; the per-layer noise floor sigma0^2 is the median
    of the strictly positive s_i. Returns a dict with s, rq (Rayleigh
    quotient s / |w|^2), w_norm_sq, sigma0_sq, i_x, and the indices excluded
    for zero weight. Raises DegenerateDataError when no channel has positive
    signal power.
    """
    weight = np.asarray(weight, dtype=float)
    patches = np.asarray(patches, dtype=float)
    sigma = np.cov(patches, rowvar=False)
    sigma = np.atleast_2d(sigma)
    if eps_cov:
        sigma = sigma + eps_cov * np.eye(sigma.shape[0])
    s = np.einsum("nf,fg,ng->n", weight, sigma, weight)
    s = np.maximum(s, 0.0)  # guard tiny negative round-off from near-singular sigma
    w_norm_sq = np.einsum("nf,nf->n", weight, weight)
    excluded = np.flatnonzero(w_norm_sq == 0)
    rq = np.divide(s, w_norm_sq, out=np.zeros_like(s), where=w_norm_sq > 0)
    positive = s[s > 0]
    if positive.size == 0:
        raise DegenerateDataError("no channel has positive signal power; sigma0_sq undefined")
    sigma0_sq = float(np.median(positive))
    i_x = 0.5 * np.log1p(s / sigma0_sq)
    i_x[excluded] = 0.0
    return {
        "s": s,
        "rq": rq,
        "w_norm_sq": w_norm_sq,
        "sigma0_sq": sigma0_sq,
        "i_x": i_x,
        "excluded": excluded,
    }


def peer_overlap(acts, clip=1e-6):
    """Mean pairwise Gaussian MI per channel from an activation matrix [M, N].

    Zero-variance channels are excluded from the peer means and flagged.
    Returns (r_bar [N], corr [N, N], excluded indices). corr rows/columns of
    excluded channels are zero.
    """
    acts = np.asarray(acts, dtype=float)
    if acts.ndim != 2:
        raise ValueError("acts must be [M, N]")
    n = acts.shape[1]
    std = acts.std(axis=0)
    excluded = np.flatnonzero(std == 0)
    valid = np.flatnonzero(std > 0)
    corr = np.zeros((n, n))
    if valid.size >= 2:
        corr_valid = np.corrcoef(acts[:, valid], rowvar=False)
        corr_valid = 0.5 * (corr_valid + corr_valid.T)  # BLAS matmul is not exactly symmetric
        corr[np.ix_(valid, valid)] = corr_valid
    elif valid.size == 1:
        corr[valid[0], valid[0]] = 1.0
    np.fill_diagonal(corr, np.where(std > 0, 1.0, 0.0))
    r_bar = np.zeros(n)
    if valid.size >= 2:
        g = mi_from_corr(corr[np.ix_(valid, valid)], clip=clip)
        np.fill_diagonal(g, 0.0)
        r_bar[valid] = g.sum(axis=1) / (valid.size - 1)
    return r_bar, corr, excluded


# ---------------------------------------------------------------------------
# Targets
# ---------------------------------------------------------------------------


def task_targets(logits, labels=None, loss=None, kind="gt_margin", class_index=0):
    """Build a scalar per-sample target from classifier outputs.

    kinds: gt_margin (true-class logit minus best other logit), pred_margin
    (top-1 minus top-2 logit), correct_logit, pred_logit, neg_loss, and
    ovr_label (+1 where label == class_index else -1).
    """
    if kind not in TARGET_KINDS:
        raise ValueError(f"unknown target kind {kind!r}")
    if kind == "neg_loss":
        if loss is None:
            raise ValueError("neg_loss needs a loss vector")
        return -np.asarray(loss, dtype=float)
    logits = np.asarray(logits, dtype=float)
    if logits.ndim != 2 or logits.shape[1] < 2:
        raise ValueError("logits must be [B, C] with C >= 2")
    b = logits.shape[0]
    if kind == "pred_logit":
        return logits.max(axis=1)
    if kind == "pred_margin":
        part = np.sort(logits, axis=1)
        return part[:, -1] - part[:, -2]
    if labels is None:
        raise ValueError(f"{kind} needs labels")
    labels = np.asarray(labels, dtype=int)
    if labels.shape != (b,):
        raise ValueError("labels must be [B]")
    if kind == "ovr_label":
        return np.where(labels == class_index, 1.0, -1.0)
    true_logit = logits[np.arange(b), labels]
    if kind == "correct_logit":
        return true_logit
    # gt_margin: true-class logit minus the best competing logit.
    masked = logits.copy()
    masked[np.arange(b), labels] = -np.inf
    return true_logit - masked.max(axis=1)


def task_mi(pooled, target, clip=1e-6):
    """Singleton task MI I(T; Y_i) per channel (nats) plus the raw correlations.

    Constant targets are degenerate. Zero-variance channels get MI 0 and are
    flagged; everything else is -0.5 log(1 - corr(T, Y_i)^2).
    """
    pooled = np.asarray(pooled, dtype=float)
    target = np.asarray(target, dtype=float).ravel()
    if pooled.shape[0] != target.size:
        raise ValueError(f"batch mismatch: acts {pooled.shape[0]} vs target {target.size}")
    if np.ptp(target) == 0:
        raise DegenerateDataError("target is constant; task MI undefined")
    std = pooled.std(axis=0)
    excluded = np.flatnonzero(std == 0)
    t_centered = target - target.mean()
    a_centered = pooled - pooled.mean(axis=0)
    denom = np.sqrt((a_centered**2).sum(axis=0) * (t_centered**2).sum())
    cov = a_centered.T @ t_centered
    rho = np.divide(cov, denom, out=np.zeros_like(cov), where=denom > 0)
    rho = np.clip(rho, -1.0, 1.0)
    i_ty = mi_from_corr(rho, clip=clip)
    i_ty[excluded] = 0.0
    return i_ty, rho, excluded


def joint_mi_pairs(corr, rho_ty, pairs, ridge=1e-12, clip=1e-6):
    """I(T; [Y_i, Y_j]) in nats for an array of index pairs [K, 2].

    Uses the two-variable least-squares fit in correlation space with a ridge
    on the Gram matrix: R^2 = beta . rho where (G + ridge I) beta = rho.
    """
    pairs = np.asarray(pairs, dtype=int)
    if pairs.size == 0:
        return np.zeros(0)
    i, j = pairs[:, 0], pairs[:, 1]
    rij = corr[i, j]
    ti, tj = rho_ty[i], rho_ty[j]
    # Work with delta = 1 - |rij| so duplicated channels (rij -> 1) do not
    # cancel catastrophically against the ridge term.
    sign = np.sign(rij)
    delta = 1.0 - np.abs(rij)
    det = (delta + ridge) * (2.0 - delta + ridge)
    numer_i = (ti - sign * tj) + sign * delta * tj + ridge * ti
    numer_j = (tj - sign * ti) + sign * delta * ti + ridge * tj
    r2 = (numer_i * ti + numer_j * tj) / det
    r2 = np.clip(r2, 0.0, 1.0 - clip)
    return -0.5 * np.log1p(-r2)


def joint_mi_sets(corr, rho_ty, sets, ridge=1e-12, clip=1e-6):
    """I(T; Y_S) for small channel sets via the same ridge regression in corr space."""
    out = np.zeros(len(sets))
    for idx, members in enumerate(sets):
        members = np.asarray(members, dtype=int)
        gram = corr[np.ix_(members, members)] + ridge * np.eye(members.size)
        rho = rho_ty[members]
        beta = np.linalg.solve(gram, rho)
        r2 = float(np.clip(beta @ rho, 0.0, 1.0 - clip))
        out[idx] = -0.5 * np.log1p(-r2)
    return out


def target_redundancy_synergy(
    i_ty,
    corr,
    rho_ty,
    m=10,
    partner_rule="top_task",
    seed=0,
    ridge=1e-12,
    clip=1e-6,
    excluded=(),
):
    """Per-channel target redundancy and synergy against top-m partners.

    Partners for channel i are chosen among non-excluded j != i: by singleton
    task MI (top_task, the default), by joint MI with i (top_joint), by pair
    synergy with i (top_synergy), or m draws from the top-2m task-MI pool
    (random_top_pool, seeded deterministically per channel).

    Red_T(i) averages min(I_i, I_j) over partners; Syn(i) averages
    I(T; [Y_i, Y_j]) - max(I_i, I_j), left unclipped so sampling noise can
    make it slightly negative. Returns (red, syn, partner_sets).
    """
    if partner_rule not in PARTNER_RULES:
        raise ValueError(f"unknown partner rule {partner_rule!r}")
    i_ty = np.asarray(i_ty, dtype=float)
    n = i_ty.size
    excluded = set(int(i) for i in excluded)
    valid = [i for i in range(n) if i not in excluded]
    red = np.zeros(n)
    syn = np.zeros(n)
    partner_sets = [[] for _ in range(n)]
    if len(valid) < 2:
        return red, syn, partner_sets
    order = sorted(valid, key=lambda j: (-i_ty[j], j))
    for i in valid:
        ranked = [j for j in order if j != i]
        m_i = min(m, len(ranked))
        if partner_rule == "top_task":
            partners = ranked[:m_i]
        elif partner_rule == "random_top_pool":
            pool = ranked[: min(2 * m, len(ranked))]
            rng = rng_for(seed, 41, i)
            pick = rng.choice(len(pool), size=m_i, replace=False)
            partners = [pool[k] for k in sorted(pick)]
        else:
            pairs = np.array([(i, j) for j in ranked])
            joint = joint_mi_pairs(corr, rho_ty, pairs, ridge=ridge, clip=clip)
            if partner_rule == "top_joint":
                score = joint
            else:  # top_synergy
                score = joint - np.maximum(i_ty[i], i_ty[np.asarray(ranked)])
            pick = sorted(range(len(ranked)), key=lambda k: (-score[k], ranked[k]))[:m_i]
            partners = [ranked[k] for k in pick]
        partner_sets[i] = partners
        if not partners:
            continue
        pairs = np.array([(i, j) for j in partners])
        joint = joint_mi_pairs(corr, rho_ty, pairs, ridge=ridge, clip=clip)
        pj = i_ty[np.asarray(partners)]
        red[i] = float(np.minimum(i_ty[i], pj).mean())
        syn[i] = float((joint - np.maximum(i_ty[i], pj)).mean())
    return red, syn, partner_sets


# ---------------------------------------------------------------------------
# Bundle-level table
# ---------------------------------------------------------------------------


@dataclass
class LayerMetrics:
    name: str
    relative_depth: float
    s: np.ndarray
    rq: np.ndarray
    w_norm_sq: np.ndarray
    sigma0_sq: float
    i_x: np.ndarray
    corr: np.ndarray
    corr_source: str
    r_bar_x: np.ndarray
    i_ty: dict[str, np.ndarray]
    rho_ty: dict[str, np.ndarray]
    red_t: np.ndarray
    syn: np.ndarray
    partner_sets: list[list[int]]
    excluded: list[int]

    @property
    def num_channels(self):
        return int(self.i_x.size)


@dataclass
class ChannelMetricTable:
    layers: dict[str, LayerMetrics]
    targets: list[str]
    redundancy_target: str
    m: int
    partner_rule: str

    def layer(self, name):
        return self.layers[name]


def compute_metrics(
    bundle,
    targets=None,
    m=10,
    partner_rule="top_task",
    redundancy_target=None,
    clip=1e-6,
    eps_cov=0.0,
    ridge=1e-12,
    seed=0,
    workers=1,
):
    """Full two-axis metric table for every layer of a bundle.

    targets defaults to every target stored in the bundle; redundancy/synergy
    are computed against redundancy_target (default: gt_margin when present,
    else the first target). The correlation matrix uses spatial_acts when a
    layer provides them, falling back to pooled_acts.
    """
    if targets is None:
        targets = list(bundle.targets)
    if not targets:
        raise BundleValidationError("bundle has no targets; metrics need at least one", field="targets")
    for tname in targets:
        if tname not in bundle.targets:
            raise BundleValidationError(f"unknown target {tname!r}", field="targets")
    if redundancy_target is None:
        redundancy_target = "gt_margin" if "gt_margin" in targets else targets[0]
    if redundancy_target not in targets:
        raise BundleValidationError(f"redundancy target {redundancy_target!r} not among targets", field="targets")

    def one_layer(rec):
        cap = input_capture(rec.weight, rec.input_patches, eps_cov=eps_cov)
        if rec.spatial_acts is not None:
            acts_for_corr = rec.spatial_acts
            corr_source = "spatial"
        else:
            acts_for_corr = rec.pooled_acts
            corr_source = "pooled"
        r_bar, corr, var_excluded = peer_overlap(acts_for_corr, clip=clip)
        i_ty = {}
        rho_ty = {}
        mi_excluded = np.zeros(0, dtype=int)
        for tname in targets:
            vals, rho, mi_excluded = task_mi(rec.pooled_acts, bundle.targets[tname], clip=clip)
            i_ty[tname] = vals
            rho_ty[tname] = rho
        excluded = sorted(set(cap["excluded"].tolist()) | set(var_excluded.tolist()) | set(mi_excluded.tolist()))
        red, syn, partner_sets = target_redundancy_synergy(
            i_ty[redundancy_target],
            corr,
            rho_ty[redundancy_target],
            m=m,
            partner_rule=partner_rule,
            seed=seed,
            ridge=ridge,
            clip=clip,
            excluded=excluded,
        )
        return LayerMetrics(
            name=rec.name,
            relative_depth=rec.relative_depth,
            s=cap["s"],
            rq=cap["rq"],
            w_norm_sq=cap["w_norm_sq"],
            sigma0_sq=cap["sigma0_sq"],
            i_x=cap["i_x"],
            corr=corr,
            corr_source=corr_source,
            r_bar_x=r_bar,
            i_ty=i_ty,
            rho_ty=rho_ty,
            red_t=red,
            syn=syn,
            partner_sets=partner_sets,
            excluded=excluded,
        )

    results = parallel_map(one_layer, bundle.layers, workers=workers)
    return ChannelMetricTable(
        layers={lm.name: lm for lm in results},
        targets=list(targets),
        redundancy_target=redundancy_target,
        m=m,
        partner_rule=partner_rule,
    )
