"""Replaceability structure: explanation hulls, peer reconstruction, lesions.

A channel's *hull* is the smallest set of same-layer peers whose linear span
explains (1 - eps) of whatever fraction of its variance peers can explain at
all. Hull size and explained fraction summarize how locally redundant the
channel is; combined with low input capture this yields the local
compactness score used to flag safely removable channels.

The lesion machinery runs the causal version of the same question on a
linear-Gaussian model: zero a channel, measure the readout loss increase,
then substitute the best ridge reconstruction from its top peers and measure
how much of the damage that recovers. ``matched_task_analysis`` compares
predictors of recovery fairly by rank-residualizing within task-MI bins, so
a predictor cannot win simply by tracking task relevance.
"""

from dataclasses import dataclass

import numpy as np
from scipy.linalg import cho_factor, cho_solve
from scipy.stats import rankdata

from ._util import rng_for
from .errors import DegenerateDataError
from .stats_core import wilson_ci

HULL_STATUSES = ("singleton", "compact", "saturated", "irreplaceable")


def peer_explanation(corr, channel, members, reg=1e-6):
    """Fraction of channel variance explained by the span of `members`.

    E = rho' (Sigma_SS + reg I)^{-1} rho in correlation space, clipped to
    [0, 1]. Raises DegenerateDataError if the regularized system still fails
    to factor (reported with a condition estimate).
    """
    members = list(members)
    if not members:
        return 0.0
    gram = corr[np.ix_(members, members)] + reg * np.eye(len(members))
    rho = corr[channel, members]
    try:
        factor = cho_factor(gram)
    except (np.linalg.LinAlgError, ValueError) as exc:
        cond = np.linalg.cond(gram) if np.all(np.isfinite(gram)) else float("inf")
        raise DegenerateDataError(f"peer gram matrix not factorable (cond ~ {cond:.3g})") from exc
    e = float(rho @ cho_solve(factor, rho))
    return float(np.clip(e, 0.0, 1.0))


@dataclass
class Hull:
    channel: int
    members: list[int]
    e_trace: list[float]
    e_full: float
    status: str


def greedy_hull(corr, channel, eps=0.05, cap=10, pool_size=32, reg=1e-6, floor=0.01, excluded=()):
    """Greedy minimal explanation hull for one channel.

    The candidate pool is the top pool_size non-excluded peers by |corr|.
    E_full is the pool's explanation fraction; channels with E_full below
    `floor` are irreplaceable and get an empty hull. Otherwise peers are
    added greedily (largest explanation gain, ties to the earlier pool
    position) until E reaches (1 - eps) E_full or the hull hits `cap`
    members.
    """
    n = corr.shape[0]
    skip = set(int(v) for v in excluded) | {int(channel)}
    peers = [j for j in range(n) if j not in skip]
    peers.sort(key=lambda j: (-abs(corr[channel, j]), j))
    pool = peers[:pool_size]
    if not pool:
        return Hull(channel=int(channel), members=[], e_trace=[], e_full=0.0, status="irreplaceable")
    e_full = peer_explanation(corr, channel, pool, reg=reg)
    if e_full < floor:
        return Hull(channel=int(channel), members=[], e_trace=[], e_full=e_full, status="irreplaceable")
    target = (1.0 - eps) * e_full
    members = []
    trace = []
    current = 0.0
    remaining = list(pool)
    while current < target and len(members) < cap and remaining:
        best_j = None
        best_e = -1.0
        for j in remaining:
            e = peer_explanation(corr, channel, members + [j], reg=reg)
            if e > best_e + 1e-15:
                best_e = e
                best_j = j
        members.append(best_j)
        remaining.remove(best_j)
        current = best_e
        trace.append(current)
    if len(members) >= cap:
        status = "saturated"
    elif len(members) == 1:
        status = "singleton"
    else:
        status = "compact"
    return Hull(channel=int(channel), members=members, e_trace=trace, e_full=e_full, status=status)


def layer_hulls(corr, eps=0.05, cap=10, pool_size=32, reg=1e-6, floor=0.01, excluded=()):
    """Greedy hulls for every non-excluded channel of one layer."""
    n = corr.shape[0]
    skip = set(int(v) for v in excluded)
    return [
        greedy_hull(corr, i, eps=eps, cap=cap, pool_size=pool_size, reg=reg, floor=floor, excluded=excluded)
        for i in range(n)
        if i not in skip
    ]


def hull_summary(hulls):
    """Counts by status plus size and explanation statistics."""
    sizes = [len(h.members) for h in hulls if h.status != "irreplaceable"]
    return {
        "n": len(hulls),
        "status_counts": {s: sum(1 for h in hulls if h.status == s) for s in HULL_STATUSES},
        "median_size": float(np.median(sizes)) if sizes else 0.0,
        "mean_e_full": float(np.mean([h.e_full for h in hulls])) if hulls else 0.0,
    }


def _zscore(values, mask=None):
    values = np.asarray(values, dtype=float)
    if mask is None:
        mask = np.ones(values.size, dtype=bool)
    out = np.zeros(values.size)
    sub = values[mask]
    if sub.size and sub.std() > 0:
        out[mask] = (sub - sub.mean()) / sub.std()
    return out


def compact_scores(hulls, i_x):
    """Per-channel compactness and the combined local-compactness score.

    compact = E_full / max(1, hull size); irreplaceable channels get 0.
    local_compact = z(-I_X) + z(compact), standardized within the layer, so
    larger means "cheap to capture elsewhere and weakly input-coupled",
    i.e. safer to remove.
    """
    i_x = np.asarray(i_x, dtype=float)
    n = i_x.size
    compact = np.zeros(n)
    seen = np.zeros(n, dtype=bool)
    for h in hulls:
        seen[h.channel] = True
        if h.status == "irreplaceable":
            compact[h.channel] = 0.0
        else:
            compact[h.channel] = h.e_full / max(1, len(h.members))
    local_compact = _zscore(-i_x, seen) + _zscore(compact, seen)
    local_compact[~seen] = 0.0
    return compact, local_compact


# ---------------------------------------------------------------------------
# Peer reconstruction and lesions
# ---------------------------------------------------------------------------


def peer_reconstruction(acts, channel, k=8, ridge=1e-3, fit_frac=0.8, candidates=None):
    """Ridge reconstruction of one channel from its top-|corr| peers.

    Peers are selected and the fit performed on the first fit_frac of rows;
    the remainder is the evaluation split. The fit standardizes activations
    (fit-split statistics) and applies the ridge there, then maps the
    coefficients back to original units. Returns a dict with peers, weights,
    intercept, r2_fit, r2_eval, and the eval-split reconstruction.
    """
    acts = np.asarray(acts, dtype=float)
    n_rows, n_ch = acts.shape
    n_fit = max(2, int(round(fit_frac * n_rows)))
    if n_fit >= n_rows:
        raise ValueError("fit_frac leaves no evaluation rows")
    fit, hold = acts[:n_fit], acts[n_fit:]
    if candidates is None:
        candidates = [j for j in range(n_ch) if j != channel]
    candidates = [j for j in candidates if j != channel and fit[:, j].std() > 0]
    if not candidates:
        raise DegenerateDataError("no usable peers for reconstruction")
    y = fit[:, channel]
    if y.std() == 0:
        raise DegenerateDataError("channel is constant on the fit split")
    corr_iy = np.array([abs(np.corrcoef(fit[:, j], y)[0, 1]) for j in candidates])
    order = sorted(range(len(candidates)), key=lambda t: (-corr_iy[t], candidates[t]))
    peers = [candidates[t] for t in order[: min(k, len(candidates))]]

    mu = fit[:, peers].mean(axis=0)
    sd = fit[:, peers].std(axis=0)
    z = (fit[:, peers] - mu) / sd
    y_mu, y_sd = y.mean(), y.std()
    yz = (y - y_mu) / y_sd
    gram = z.T @ z / n_fit + ridge * np.eye(len(peers))
    beta_std = np.linalg.solve(gram, z.T @ yz / n_fit)
    weights = beta_std * y_sd / sd
    intercept = y_mu - float(weights @ mu)

    fit_pred = fit[:, peers] @ weights + intercept
    r2_fit = 1.0 - ((y - fit_pred) ** 2).sum() / ((y - y_mu) ** 2).sum()
    recon_eval = hold[:, peers] @ weights + intercept
    y_hold = hold[:, channel]
    denom = ((y_hold - y_hold.mean()) ** 2).sum()
    r2_eval = 1.0 - ((y_hold - recon_eval) ** 2).sum() / denom if denom > 0 else 0.0
    return {
        "peers": peers,
        "weights": weights,
        "intercept": float(intercept),
        "r2_fit": float(r2_fit),
        "r2_eval": float(r2_eval),
        "recon_eval": recon_eval,
    }


@dataclass
class LesionRecord:
    layer: str
    index: int
    delta_loss: float
    delta_loss_replaced: float
    recovery: float  # NaN when delta_loss is not positive
    peer_r2: float
    task_mi: float
    i_x: float


def lesion_experiment(model, channels=None, n_channels=None, seed=0, n_samples=4000, k=8, ridge=1e-3, fit_frac=0.8):
    """Zero channels of a linear-Gaussian model and measure peer recovery.

    For each selected channel: the readout loss increase from zeroing it
    (delta_loss), the loss increase when the zeroed activations are replaced
    by the top-k same-layer ridge reconstruction (delta_loss_replaced), and
    recovery = (delta_loss - delta_loss_replaced) / delta_loss. Population
    task MI and input capture from the model are attached for downstream
    controls. channels are global row indices; alternatively n_channels are
    sampled without replacement (seeded).
    """
    rng = rng_for(seed, 61)
    x, y, t = model.sample(n_samples, rng)
    n_total = model.num_channels
    if channels is None:
        count = n_total if n_channels is None else min(n_channels, n_total)
        channels = sorted(rng.choice(n_total, size=count, replace=False).tolist())
    slices = model.layer_slices or {"all": slice(0, n_total)}

    n_fit = max(2, int(round(fit_frac * n_samples)))
    eval_rows = slice(n_fit, n_samples)
    y_eval = y[eval_rows]
    t_eval = t[eval_rows]
    base_pred = y_eval @ model.readout
    base_loss = float(((t_eval - base_pred) ** 2).mean())

    pop_mi = model.pop_task_mi()
    pop_ix = model.pop_input_capture()

    records = []
    for c in channels:
        layer_name = next((nm for nm, sl in slices.items() if sl.start <= c < sl.stop), "all")
        sl = slices.get(layer_name, slice(0, n_total))
        lesion_pred = base_pred - y_eval[:, c] * model.readout[c]
        delta = float(((t_eval - lesion_pred) ** 2).mean()) - base_loss
        local_candidates = [j for j in range(sl.start, sl.stop) if j != c]
        try:
            recon = peer_reconstruction(y, c, k=k, ridge=ridge, fit_frac=fit_frac, candidates=local_candidates)
            replaced_pred = lesion_pred + recon["recon_eval"] * model.readout[c]
            delta_rep = float(((t_eval - replaced_pred) ** 2).mean()) - base_loss
            peer_r2 = recon["r2_eval"]
        except DegenerateDataError:
            delta_rep = delta
            peer_r2 = 0.0
        recovery = (delta - delta_rep) / delta if delta > 0 else float("nan")
        records.append(
            LesionRecord(
                layer=layer_name,
                index=int(c - sl.start),
                delta_loss=delta,
                delta_loss_replaced=delta_rep,
                recovery=recovery,
                peer_r2=float(peer_r2),
                task_mi=float(pop_mi[c]),
                i_x=float(pop_ix[c]),
            )
        )
    return records


def lesion_summary(records, thresholds=(1e-4, 1e-3, 5e-3)):
    """Recovery statistics over records whose lesion damage clears each threshold."""
    out = {}
    for thr in thresholds:
        kept = [r for r in records if r.delta_loss > thr and np.isfinite(r.recovery)]
        entry = {"threshold": thr, "n": len(kept)}
        if kept:
            rec = np.array([r.recovery for r in kept])
            entry["median_recovery"] = float(np.median(rec))
            entry["frac_recovered"] = float((rec > 0).mean())
            for field_name in ("peer_r2", "task_mi", "i_x"):
                vals = np.array([getattr(r, field_name) for r in kept])
                if np.ptp(vals) > 0 and np.ptp(rec) > 0:
                    rho = np.corrcoef(rankdata(vals), rankdata(rec))[0, 1]
                    entry[f"spearman_{field_name}"] = float(rho)
                else:
                    entry[f"spearman_{field_name}"] = None
        out[f"{thr:g}"] = entry
    return out


def matched_task_analysis(records, n_bins=5, damage_threshold=1e-4, predictors=("peer_r2", "task_mi", "i_x")):
    """Within task-MI quantile bins, how well does each predictor rank recovery?

    Records are grouped per layer, split into n_bins task-MI quantile bins,
    and ranks of recovery and each predictor are centered within every bin
    before pooling, removing task relevance as a confound. Also reports the
    matched-pair win rate for peer_r2 (fraction of within-bin pairs where
    the higher-peer-r2 channel recovers more; pairs tied on either
    coordinate are skipped) with a Wilson interval.
    """
    kept = [r for r in records if r.delta_loss > damage_threshold and np.isfinite(r.recovery)]
    if len(kept) < 4:
        raise DegenerateDataError("too few damaging lesions for matched analysis")
    by_layer = {}
    for r in kept:
        by_layer.setdefault(r.layer, []).append(r)

    pooled = {name: [] for name in predictors}
    pooled_recovery = []
    wins = 0
    pairs = 0
    for layer_records in by_layer.values():
        mi = np.array([r.task_mi for r in layer_records])
        edges = np.quantile(mi, np.linspace(0, 1, n_bins + 1)[1:-1]) if len(mi) > 1 else []
        bins = np.digitize(mi, edges) if len(mi) > 1 else np.zeros(len(mi), dtype=int)
        for b in np.unique(bins):
            group = [layer_records[idx] for idx in np.flatnonzero(bins == b)]
            if len(group) < 2:
                continue
            rec = np.array([g.recovery for g in group])
            rec_rank = rankdata(rec)
            pooled_recovery.extend(rec_rank - rec_rank.mean())
            for name in predictors:
                vals = rankdata([getattr(g, name) for g in group])
                pooled[name].extend(vals - vals.mean())
            r2 = np.array([g.peer_r2 for g in group])
            for a in range(len(group)):
                for c in range(a + 1, len(group)):
                    if r2[a] == r2[c] or rec[a] == rec[c]:
                        continue
                    pairs += 1
                    wins += (r2[a] > r2[c]) == (rec[a] > rec[c])

    pooled_recovery = np.asarray(pooled_recovery)
    result = {"n_records": len(kept), "n_pairs": int(pairs), "n_wins": int(wins)}
    for name in predictors:
        vals = np.asarray(pooled[name])
        if vals.size >= 2 and vals.std() > 0 and pooled_recovery.std() > 0:
            result[f"residual_spearman_{name}"] = float(np.corrcoef(vals, pooled_recovery)[0, 1])
        else:
            result[f"residual_spearman_{name}"] = None
    if pairs > 0:
        lo, hi = wilson_ci(wins, pairs)
        result["win_rate_peer_r2"] = wins / pairs
        result["win_rate_ci"] = [lo, hi]
    else:
        result["win_rate_peer_r2"] = None
        result["win_rate_ci"] = None
    return result
