"""Channel scoring, global-threshold masks, MAC accounting, and FLOPs-matched
pruning-score comparison.

All scores are keep-oriented: channels with the lowest scores are dropped
first by a single global threshold over pooled units. Coupling groups (tied
channel dimensions, e.g. residual branches or a depthwise layer with its
producer) prune as one unit scored by the member mean, so masks always stay
consistent across tied layers, and masks at increasing sparsity are nested
by construction.

Cost is counted in multiply-accumulates. A layer that reads masked
producers pays only for surviving input channels, which is what makes score
families comparable at matched cost: the sweep traces retention against the
surviving MAC fraction and the area under that curve on the common cost
interval is the headline number.
"""

import math
from dataclasses import dataclass

import numpy as np
from scipy.spatial.distance import cdist

from ._util import rng_for
from .crosslayer import consumer_blocks
from .errors import DegenerateDataError
from .replaceability import compact_scores, layer_hulls
from .stats_core import bootstrap_mean_diff

COMPUTED_METHODS = (
    "magnitude",
    "fpgm",
    "random",
    "act_rms",
    "i_x",
    "i_ty",
    "r_bar_x_neg",
    "ix_minus_red",
    "composite_ix",
    "mixed_mag_ix",
    "composite_pid",
    "local_compact",
)

METRIC_METHODS = (
    "i_x",
    "i_ty",
    "r_bar_x_neg",
    "ix_minus_red",
    "composite_ix",
    "mixed_mag_ix",
    "composite_pid",
    "local_compact",
)

Z_NORMALIZED_METHODS = ("composite_ix", "mixed_mag_ix", "composite_pid", "local_compact")

# Default method-to-family map for score comparison; a config may override it
# (e.g. to add a hybrid family for externally produced curves).
FAMILIES = {
    "local": ["i_x", "r_bar_x_neg", "composite_ix", "mixed_mag_ix", "ix_minus_red", "local_compact"],
    "target": ["i_ty", "composite_pid"],
    "baseline": ["magnitude", "taylor", "fpgm", "act_rms", "bn_scale", "random"],
}


@dataclass
class ScoreTable:
    method: str
    scores: dict[str, np.ndarray]
    normalization: str = "raw"

    def total_channels(self):
        return sum(v.size for v in self.scores.values())


def _z(v):
    v = np.asarray(v, dtype=float)
    sd = v.std()
    return (v - v.mean()) / sd if sd > 0 else np.zeros_like(v)


def available_methods(bundle):
    """Computed methods plus any per-channel scores stored in the bundle."""
    stored = set.intersection(*(set(rec.baseline_scores) for rec in bundle.layers)) if bundle.layers else set()
    return list(COMPUTED_METHODS) + sorted(stored)


def compute_scores(
    bundle,
    method,
    table=None,
    hulls=None,
    seed=0,
    alpha=1.0,
    beta=1.0,
    composite_alpha=2.0,
    composite_gamma=0.25,
):
    """Keep-oriented per-channel scores for one method.

    Metric-based methods need the metric table; local_compact also needs
    per-layer hulls (computed on demand from the table's correlations when
    not passed). Any other method name is read from the bundle's stored
    baseline scores (taylor, bn_scale, or an external name). ``alpha``
    weighs the capture term of mixed_mag_ix, ``beta`` the peer-overlap term
    of ix_minus_red; the composite weights are documented guesses.
    """
    if method in METRIC_METHODS and table is None:
        raise ValueError(f"method '{method}' needs a metric table")
    scores = {}
    for li, rec in enumerate(bundle.layers):
        if method == "magnitude":
            s = np.linalg.norm(rec.weight.astype(float), axis=1)
        elif method == "fpgm":
            w = rec.weight.astype(float)
            s = cdist(w, w).sum(axis=1)
        elif method == "random":
            s = rng_for(seed, 81, li).uniform(size=rec.num_channels)
        elif method == "act_rms":
            s = np.sqrt((rec.pooled_acts.astype(float) ** 2).mean(axis=0))
        elif method in METRIC_METHODS:
            lm = table.layer(rec.name)
            target = table.redundancy_target
            if method == "i_x":
                s = lm.i_x.copy()
            elif method == "i_ty":
                s = lm.i_ty[target].copy()
            elif method == "r_bar_x_neg":
                s = -lm.r_bar_x
            elif method == "ix_minus_red":
                s = lm.i_x - beta * lm.r_bar_x
            elif method == "composite_ix":
                s = composite_alpha * _z(lm.i_x) - composite_gamma * _z(lm.r_bar_x)
            elif method == "mixed_mag_ix":
                s = _z(np.linalg.norm(rec.weight.astype(float), axis=1)) + alpha * _z(lm.i_x)
            elif method == "composite_pid":
                s = _z(lm.i_ty[target]) + _z(lm.syn) - _z(lm.red_t)
            else:  # local_compact: high means cheap to replace, so negate to keep-orient
                layer_h = (hulls or {}).get(rec.name)
                if layer_h is None:
                    layer_h = layer_hulls(lm.corr, excluded=lm.excluded)
                _, local = compact_scores(layer_h, lm.i_x)
                s = -local
        elif method in rec.baseline_scores:
            s = rec.baseline_scores[method].astype(float).copy()
        else:
            raise ValueError(
                f"method '{method}' needs baseline_scores['{method}'], missing on layer '{rec.name}'"
            )
        scores[rec.name] = np.asarray(s, dtype=float)
    norm = "within_layer_z" if method in Z_NORMALIZED_METHODS else "raw"
    return ScoreTable(method=method, scores=scores, normalization=norm)


# ---------------------------------------------------------------------------
# Masks
# ---------------------------------------------------------------------------


@dataclass
class PruneMask:
    keep: dict[str, np.ndarray]
    target_dropped: int
    dropped: int
    sparsity_nominal: float = 0.0

    def kept_counts(self):
        return {name: int(k.sum()) for name, k in self.keep.items()}

    def total_channels(self):
        return sum(k.size for k in self.keep.values())

    def sparsity(self):
        total = self.total_channels()
        return self.dropped / total if total else 0.0

    def min_keep_bound(self):
        """True when the per-layer floor stopped the mask short of its target."""
        return self.dropped < self.target_dropped


def prune_units(bundle):
    """Pooled prune units: coupled channel tuples first, then free channels.

    Each unit is a list of (layer, index) members dropped together. The sort
    key (first member's layer position, channel index) makes pooling
    deterministic under score ties.
    """
    order = {name: i for i, name in enumerate(bundle.layer_names)}
    grouped = set()
    units = []
    for group in bundle.graph.coupling_groups:
        members = sorted(group, key=order.get)
        grouped.update(members)
        n = bundle.layer(members[0]).num_channels
        for idx in range(n):
            units.append([(m, idx) for m in members])
    for rec in bundle.layers:
        if rec.name in grouped:
            continue
        for idx in range(rec.num_channels):
            units.append([(rec.name, idx)])
    units.sort(key=lambda u: (order[u[0][0]], u[0][1]))
    return units


def global_threshold_mask(score_table, bundle, sparsity, min_keep=1):
    """Drop the globally lowest-scoring units until floor(sparsity * total).

    Unit score is the mean over members. A unit is skipped when dropping it
    would leave any member layer with fewer than min_keep kept channels.
    Because units are consumed in one fixed ascending order, masks for
    increasing sparsity are nested.
    """
    if not 0.0 <= sparsity < 1.0:
        raise ValueError("sparsity must be in [0, 1)")
    units = prune_units(bundle)
    order = {name: i for i, name in enumerate(bundle.layer_names)}
    scored = [
        (float(np.mean([score_table.scores[name][idx] for name, idx in unit])), order[unit[0][0]], unit[0][1], unit)
        for unit in units
    ]
    scored.sort(key=lambda t: t[:3])

    keep = {rec.name: np.ones(rec.num_channels, dtype=bool) for rec in bundle.layers}
    kept_count = {rec.name: rec.num_channels for rec in bundle.layers}
    total = sum(kept_count.values())
    target = math.floor(sparsity * total)
    dropped = 0
    for _, _, _, unit in scored:
        if dropped >= target:
            break
        if any(kept_count[name] - 1 < min_keep for name, _ in unit):
            continue
        for name, idx in unit:
            keep[name][idx] = False
            kept_count[name] -= 1
        dropped += len(unit)
    return PruneMask(keep=keep, target_dropped=target, dropped=dropped, sparsity_nominal=float(sparsity))


def hybrid_mask(count_table, rank_table, bundle, sparsity, min_keep=1):
    """Per-layer budgets from one score, channel choice from another.

    The count table fixes how many channels each layer (or coupled group)
    keeps via the usual global threshold; the rank table then picks which
    channels fill each budget (highest first, ties to the lower index).
    """
    budget_mask = global_threshold_mask(count_table, bundle, sparsity, min_keep=min_keep)
    units = prune_units(bundle)
    by_head = {}
    for unit in units:
        by_head.setdefault(unit[0][0], []).append(unit)

    keep = {rec.name: np.zeros(rec.num_channels, dtype=bool) for rec in bundle.layers}
    for head, head_units in by_head.items():
        n_keep = int(budget_mask.keep[head].sum())
        ranked = sorted(
            head_units,
            key=lambda u: (-float(np.mean([rank_table.scores[name][idx] for name, idx in u])), u[0][1]),
        )
        for unit in ranked[:n_keep]:
            for name, idx in unit:
                keep[name][idx] = True
    dropped = sum(int((~k).sum()) for k in keep.values())
    return PruneMask(
        keep=keep,
        target_dropped=budget_mask.target_dropped,
        dropped=dropped,
        sparsity_nominal=float(sparsity),
    )


# ---------------------------------------------------------------------------
# Cost accounting
# ---------------------------------------------------------------------------


def _layer_macs(bundle, keep):
    per_layer = {}
    for rec in bundle.layers:
        h, w_sp = bundle.graph.spatial_size(rec.name)
        area = h * w_sp
        n_kept = int(keep[rec.name].sum())
        kind = bundle.graph.kind(rec.name)
        producers = bundle.graph.producers(rec.name)
        if kind == "depthwise":
            per_layer[rec.name] = n_kept * rec.weight.shape[1] * area
        elif producers:
            _, k_area = consumer_blocks(bundle, rec.name)
            c_in_kept = sum(int(keep[src].sum()) for src in producers)
            per_layer[rec.name] = n_kept * c_in_kept * k_area * area
        else:
            per_layer[rec.name] = n_kept * rec.weight.shape[1] * area
    return per_layer


def flops(bundle, mask=None):
    """Multiply-accumulates per layer under an optional mask.

    Source layers pay n_kept * weight_width * H * W. Consumer layers pay
    n_kept * c_in_kept * k_area * H * W, so pruning a producer cheapens its
    consumers. Depthwise layers read one input channel each and pay
    n_kept * k_area * H * W. Linear layers are consumers with k_area 1.
    fraction_pruned compares against the unmasked cost.
    """
    full = {rec.name: np.ones(rec.num_channels, bool) for rec in bundle.layers}
    per_layer = _layer_macs(bundle, mask.keep if mask is not None else full)
    total = int(sum(per_layer.values()))
    if mask is None:
        fraction = 0.0
    else:
        base = sum(_layer_macs(bundle, full).values())
        fraction = (base - total) / base if base else 0.0
    return {"per_layer": per_layer, "total": total, "fraction_pruned": fraction}


# ---------------------------------------------------------------------------
# Retention and curves
# ---------------------------------------------------------------------------


def kept_indices(mask, bundle, layer_slices):
    """Global channel rows kept by a mask, in the model's stacking order."""
    idx = []
    for rec in bundle.layers:
        sl = layer_slices[rec.name]
        idx.extend((np.flatnonzero(mask.keep[rec.name]) + sl.start).tolist())
    return np.asarray(idx, dtype=int)


def population_retention(model, kept, ridge=1e-9):
    """Explained-variance ratio of the kept channels, no refit.

    R^2 of the population regression of the target on a channel subset,
    normalized by the all-channels R^2. Duplicated channels are free to
    drop (ratio stays 1); dropping sole carriers of target variance costs.
    """
    cov = model.cov_y()
    d = np.sqrt(np.maximum(np.diag(cov), 1e-300))
    corr = cov / np.outer(d, d)
    rho = model.corr_t_y()

    def r2(idx):
        idx = np.asarray(idx, dtype=int)
        if idx.size == 0:
            return 0.0
        gram = corr[np.ix_(idx, idx)] + ridge * np.eye(idx.size)
        return float(np.clip(np.linalg.solve(gram, rho[idx]) @ rho[idx], 0.0, 1.0))

    full = r2(np.arange(model.num_channels))
    if full <= 0:
        return 1.0
    return float(np.clip(r2(kept) / full, 0.0, 1.0))


class EmpiricalChannelStats:
    """Model stand-in built from a bundle's pooled activations and a target.

    Exposes the pieces population_retention and sweep need (channel
    covariance, target correlations, layer slices), estimated from samples
    instead of a known generative model, so curves can be produced for
    bundles exported from real networks.
    """

    def __init__(self, bundle, target=None):
        if target is None:
            target = "gt_margin" if "gt_margin" in bundle.targets else sorted(bundle.targets)[0]
        stacked = np.concatenate([rec.pooled_acts.astype(float) for rec in bundle.layers], axis=1)
        self.layer_slices = {}
        start = 0
        for rec in bundle.layers:
            self.layer_slices[rec.name] = slice(start, start + rec.num_channels)
            start += rec.num_channels
        self.num_channels = start
        self.target_name = target
        self._cov = np.cov(stacked, rowvar=False)
        t = np.asarray(bundle.targets[target], dtype=float)
        t_center = t - t.mean()
        y_center = stacked - stacked.mean(axis=0)
        denom = np.sqrt((y_center**2).mean(axis=0) * (t_center**2).mean())
        with np.errstate(invalid="ignore", divide="ignore"):
            rho = np.where(denom > 0, y_center.T @ t_center / stacked.shape[0] / denom, 0.0)
        self._rho = rho

    def cov_y(self):
        return self._cov

    def corr_t_y(self):
        return self._rho


@dataclass
class PruneCurve:
    method: str
    sparsities: list[float]
    flops_pruned: list[float]
    retention: list[float]
    seed: int = 0


def sweep(bundle, model, score_tables, sparsities=None, levels=10, min_keep=1, seed=0):
    """Retention vs pruned-cost curve per scoring method.

    The ladder defaults to a sparsity-0 point (retention exactly 1 at cost
    0) followed by `levels` evenly spaced nominal sparsities in [0.10, 0.95].
    x is the fraction of MACs removed.
    """
    if sparsities is None:
        sparsities = np.concatenate([[0.0], np.linspace(0.10, 0.95, levels)])
    curves = {}
    for method, st in score_tables.items():
        frac, ret = [], []
        for s in sparsities:
            mask = global_threshold_mask(st, bundle, float(s), min_keep=min_keep)
            frac.append(flops(bundle, mask)["fraction_pruned"])
            ret.append(population_retention(model, kept_indices(mask, bundle, model.layer_slices)))
        curves[method] = PruneCurve(
            method=method,
            sparsities=[float(s) for s in sparsities],
            flops_pruned=frac,
            retention=ret,
            seed=seed,
        )
    return curves


def auc_common_interval(curves):
    """Normalized area under retention vs pruned cost on the shared interval.

    Every curve is restricted to [max of min costs, min of max costs] with
    linear interpolation at the cut points; the trapezoid area is divided
    by the interval length, so a flat retention of 1 scores exactly 1.
    """
    items = list(curves.items())
    if not items:
        raise ValueError("no curves to compare")
    xs_sorted = {}
    for method, curve in items:
        pairs = sorted(zip(curve.flops_pruned, curve.retention))
        x = np.array([p[0] for p in pairs])
        y = np.array([p[1] for p in pairs])
        xs_sorted[method] = (x, y)
    lo = max(x[0] for x, _ in xs_sorted.values())
    hi = min(x[-1] for x, _ in xs_sorted.values())
    if hi <= lo:
        supports = {m: (float(x[0]), float(x[-1])) for m, (x, _) in xs_sorted.items()}
        raise DegenerateDataError(f"no common cost interval: supports {supports}")
    out = {}
    for method, (x, y) in xs_sorted.items():
        inner = x[(x > lo) & (x < hi)]
        grid = np.concatenate([[lo], inner, [hi]])
        vals = np.interp(grid, x, y)
        out[method] = float(np.trapezoid(vals, grid) / (hi - lo))
    return out


def compare_methods(auc_table, families=None, n_boot=2000, seed=0):
    """Per-family best methods and paired deltas of the local family's best.

    auc_table maps method -> per-seed AUC list (all the same length).
    families maps family name -> method names; every family must have at
    least one method present. When a 'local' family exists, its best method
    is compared against each other family's best with a paired bootstrap.
    """
    families = FAMILIES if families is None else families
    mean_auc = {m: float(np.mean(v)) for m, v in auc_table.items()}
    best_of = {}
    for fam, methods in families.items():
        present = [m for m in methods if m in auc_table]
        if not present:
            raise ValueError(f"family '{fam}' has no methods in the AUC table")
        best = min(present, key=lambda m: (-mean_auc[m], m))
        best_of[fam] = best
    result = {
        "mean_auc": mean_auc,
        "family_best": {fam: {"method": b, "mean_auc": mean_auc[b]} for fam, b in best_of.items()},
        "deltas": {},
    }
    if "local" in best_of:
        local_vals = np.asarray(auc_table[best_of["local"]], dtype=float)
        for fam, best in best_of.items():
            if fam == "local":
                continue
            delta, lo, hi = bootstrap_mean_diff(local_vals, auc_table[best], n_boot=n_boot, seed=seed)
            result["deltas"][f"local_vs_{fam}"] = {
                "methods": (best_of["local"], best),
                "mean": delta,
                "lo": lo,
                "hi": hi,
            }
    return result


def loso_selector(auc_table, family=None, comparators=()):
    """Leave-one-seed-out score selection within one family.

    For each held-out seed, the family method with the best held-in mean
    AUC is picked (ties to the lexicographically first name) and evaluated
    on the held-out seed. The oracle is the family's best method on the
    held-out seed itself; gap = picked − oracle (never positive). Optional
    comparator methods get per-fold deltas picked − comparator.
    """
    methods = sorted(auc_table) if family is None else [m for m in family if m in auc_table]
    if not methods:
        raise ValueError("family has no methods in the AUC table")
    n_seeds = len(next(iter(auc_table.values())))
    if n_seeds < 2:
        raise ValueError("leave-one-out needs at least two seeds")
    picks, held, oracle = [], [], []
    for fold in range(n_seeds):
        rest = [k for k in range(n_seeds) if k != fold]
        best = min(methods, key=lambda m: (-float(np.mean([auc_table[m][k] for k in rest])), m))
        picks.append(best)
        held.append(float(auc_table[best][fold]))
        oracle.append(max(float(auc_table[m][fold]) for m in methods))
    gaps = [h - o for h, o in zip(held, oracle)]
    out = {
        "picked": picks,
        "heldout_auc": held,
        "oracle_auc": oracle,
        "gap": gaps,
        "mean_heldout_auc": float(np.mean(held)),
        "mean_gap": float(np.mean(gaps)),
        "deltas_vs": {},
    }
    for comp in comparators:
        if comp not in auc_table:
            raise ValueError(f"comparator '{comp}' not in the AUC table")
        deltas = [held[k] - float(auc_table[comp][k]) for k in range(n_seeds)]
        out["deltas_vs"][comp] = {"per_seed": deltas, "mean": float(np.mean(deltas))}
    return out
