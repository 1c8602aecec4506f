"""Tensor-bundle directory writer.

Emits the exchange format the analysis engine consumes: a ``manifest.json``
with sorted keys plus one headerless raw tensor file per array,
little-endian float32, row-major, shapes recorded only in the manifest.
This module intentionally reimplements the format from its published
contract so the directory layout stays the only coupling between the
exporter and the engine.
"""

import json
import os

import numpy as np

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"


def write_tensor(path, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    with open(path, "wb") as fh:
        fh.write(arr.tobytes(order="C"))
    return [int(v) for v in arr.shape]


def write_bundle_dir(out_dir, *, model_name, seed, layers, targets, graph, export_info):
    """Write layer dicts, target vectors, and the graph block; returns out_dir.

    ``layers`` is an ordered list of dicts with keys name, relative_depth,
    weight, input_patches, pooled_acts, optional spatial_acts, and a
    baseline_scores map. ``graph`` carries edges, layer_kind,
    coupling_groups, and spatial_sizes exactly as the manifest spells them.
    ``export_info`` is recorded under a top-level "export" key: the engine
    ignores keys it does not know, and the stage and subsampling provenance
    have to live somewhere a reader can find them.
    """
    os.makedirs(out_dir, exist_ok=True)
    layers_meta = []
    for i, rec in enumerate(layers):
        stem = f"{i:02d}"
        tensors = {}
        for field in ("weight", "input_patches", "pooled_acts", "spatial_acts"):
            arr = rec.get(field)
            if arr is None:
                continue
            fname = f"{stem}.{field}.f32"
            shape = write_tensor(os.path.join(out_dir, fname), arr)
            tensors[field] = {"file": fname, "shape": shape}
        meta = {
            "name": rec["name"],
            "relative_depth": float(rec["relative_depth"]),
            "num_channels": int(np.shape(rec["weight"])[0]),
            "tensors": tensors,
        }
        scores = rec.get("baseline_scores") or {}
        if scores:
            meta["baseline_scores"] = {}
            for score_name in sorted(scores):
                fname = f"{stem}.score.{score_name}.f32"
                shape = write_tensor(os.path.join(out_dir, fname), scores[score_name])
                meta["baseline_scores"][score_name] = {"file": fname, "shape": shape}
        layers_meta.append(meta)

    targets_meta = {}
    for name in sorted(targets):
        fname = f"target.{name}.f32"
        shape = write_tensor(os.path.join(out_dir, fname), targets[name])
        targets_meta[name] = {"file": fname, "shape": shape}

    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "model_name": model_name,
        "seed": int(seed),
        "layers": layers_meta,
        "targets": targets_meta,
        "graph": {
            "edges": [[src, dst] for src, dst in graph["edges"]],
            "layer_kind": dict(graph["layer_kind"]),
            "coupling_groups": [list(g) for g in graph["coupling_groups"]],
            "spatial_sizes": {k: [int(a), int(b)] for k, (a, b) in graph["spatial_sizes"].items()},
        },
        "export": export_info,
    }
    with open(os.path.join(out_dir, MANIFEST_NAME), "wb") as fh:
        fh.write((json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return out_dir
