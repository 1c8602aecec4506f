"""Metric propagation along the wiring graph.

A consumer layer's weight tensor says how strongly each destination channel
reads each producer channel: reshaped to [n_dst, c_in, k_area], the
Frobenius norm of the [k_area] slice is the routing strength. Averaging a
producer-side metric with these strengths gives a routed summary per
destination channel, and rank-correlating routed summaries with the
destination's own metrics shows which axis information survives a layer of
processing.
"""

import numpy as np
from scipy.stats import rankdata

CROSS_METRICS = ("i_x", "r_bar_x", "i_ty", "syn")


def consumer_blocks(bundle, dst_name):
    """Producer blocks of a consumer's input channel axis, in edge order.

    Returns (blocks, k_area) where blocks is a list of (src_name, slice)
    into the c_in axis. The consumer weight width must factor as
    c_in_total * k_area with integer k_area.
    """
    producers = bundle.graph.producers(dst_name)
    if not producers:
        raise ValueError(f"layer '{dst_name}' has no producers in the graph")
    n_by_name = {rec.name: rec.num_channels for rec in bundle.layers}
    c_in = sum(n_by_name[p] for p in producers)
    width = bundle.layer(dst_name).weight.shape[1]
    if width % c_in != 0:
        raise ValueError(
            f"layer '{dst_name}' weight width {width} is not a multiple of its input channels {c_in}"
        )
    blocks = []
    offset = 0
    for p in producers:
        blocks.append((p, slice(offset, offset + n_by_name[p])))
        offset += n_by_name[p]
    return blocks, width // c_in


def routing_strengths(weight, c_in):
    """Frobenius norm of each destination/input-channel slice, [n_dst, c_in]."""
    weight = np.asarray(weight, dtype=float)
    n_dst = weight.shape[0]
    w3 = weight.reshape(n_dst, c_in, -1)
    return np.sqrt((w3**2).sum(axis=2))


def routed_source_summary(weight, source_values, valid=None):
    """Routing-strength-weighted average of a producer metric, per consumer.

    source_values has one entry per input channel (already concatenated in
    block order). Channels flagged invalid are dropped and the weights
    renormalized; consumers with no valid routing mass get NaN.
    """
    source_values = np.asarray(source_values, dtype=float)
    strengths = routing_strengths(weight, source_values.size)
    if valid is not None:
        strengths = strengths * np.asarray(valid, dtype=float)[None, :]
    mass = strengths.sum(axis=1)
    out = np.full(strengths.shape[0], np.nan)
    ok = mass > 0
    out[ok] = (strengths[ok] @ np.nan_to_num(source_values)) / mass[ok]
    return out


def _metric_vector(layer_metrics, name, target):
    if name == "i_ty":
        return np.asarray(layer_metrics.i_ty[target], dtype=float)
    return np.asarray(getattr(layer_metrics, name), dtype=float)


def _spearman(a, b):
    keep = np.isfinite(a) & np.isfinite(b)
    a, b = a[keep], b[keep]
    if a.size < 3:
        return np.nan
    ra, rb = rankdata(a), rankdata(b)
    if ra.std() == 0 or rb.std() == 0:
        return np.nan
    return float(np.corrcoef(ra, rb)[0, 1])


def propagation_matrix(bundle, table, metrics=CROSS_METRICS):
    """Per-edge and mean rank correlation between routed and native metrics.

    Entry [a, b] is spearman(routed source metric a, destination metric b)
    over destination channels. Destination channels flagged degenerate and
    producer channels flagged degenerate are excluded.
    """
    target = table.redundancy_target
    edges = {}
    for dst_name in bundle.layer_names:
        if not bundle.graph.producers(dst_name):
            continue
        blocks, _ = consumer_blocks(bundle, dst_name)
        dst_metrics = table.layer(dst_name)
        dst_keep = np.ones(dst_metrics.num_channels, dtype=bool)
        dst_keep[list(dst_metrics.excluded)] = False

        src_values = {name: [] for name in metrics}
        valid = []
        for src_name, _ in blocks:
            src_metrics = table.layer(src_name)
            ok = np.ones(src_metrics.num_channels, dtype=bool)
            ok[list(src_metrics.excluded)] = False
            valid.append(ok)
            for name in metrics:
                src_values[name].append(_metric_vector(src_metrics, name, target))
        valid = np.concatenate(valid)

        weight = bundle.layer(dst_name).weight
        mat = np.full((len(metrics), len(metrics)), np.nan)
        for a, name_a in enumerate(metrics):
            routed = routed_source_summary(weight, np.concatenate(src_values[name_a]), valid=valid)
            for b, name_b in enumerate(metrics):
                native = _metric_vector(dst_metrics, name_b, target).astype(float).copy()
                native[~dst_keep] = np.nan
                mat[a, b] = _spearman(routed, native)
        label = "+".join(src for src, _ in blocks) + "->" + dst_name
        edges[label] = mat
    if edges:
        stack = np.stack(list(edges.values()))
        with np.errstate(invalid="ignore"):
            mean = np.nanmean(stack, axis=0)
    else:
        mean = np.full((len(metrics), len(metrics)), np.nan)
    return {"metrics": list(metrics), "edges": edges, "mean": mean}
