"""Command-line client for the analysis service.

Every subcommand is a thin HTTP client: by default the requests drive the
service app in process through an ASGI transport, and --server points the
same requests at a running instance instead (started with `channel-axes
serve`). Report files are written locally, each with an embedded run
manifest, so a rerun with identical inputs reproduces the bytes exactly.

Exit codes: 0 success, 1 unknown subcommand or transport failure,
2 validation error (bad bundle, bad flags, malformed report inputs),
3 degenerate data (statistically unusable inputs).
"""

import argparse
import asyncio
import hashlib
import json
import os
import sys

import httpx

from .bundle_io import bundle_fingerprint
from .gaussian_dynamics import TRAJECTORY_COLUMNS
from .plots import PLOT_KINDS, render_plot
from .pruning import FAMILIES
from .reports import (
    atomic_write_text,
    build_manifest,
    csv_report,
    json_report,
    read_csv_rows,
)

_SUBCOMMANDS = (
    "validate",
    "synth",
    "metrics",
    "pid",
    "hulls",
    "lesion",
    "graphs",
    "traj",
    "crosslayer",
    "prune",
    "auc",
    "loso",
    "plot",
    "serve",
)

_VALUE_FLAGS = {"--seed", "--workers", "--out-dir", "--server"}


class CliFailure(Exception):
    def __init__(self, code, message):
        super().__init__(message)
        self.code = code


def _fail_validation(message):
    return CliFailure(2, message)


class Context:
    """Resolved global flags plus the transport to the service."""

    def __init__(self, server=None, seed=None, workers=None, out_dir="."):
        self.server = server
        self.seed = seed
        self.workers = workers if workers is not None else (os.cpu_count() or 1)
        self.out_dir = out_dir
        self._app = None

    def post(self, path, payload):
        if self.server:
            with httpx.Client(base_url=self.server, timeout=None) as client:
                response = client.post(path, json=payload)
        else:
            response = asyncio.run(self._post_inprocess(path, payload))
        if response.status_code == 200:
            return response.json()
        try:
            body = response.json()
        except ValueError:
            body = {"message": response.text}
        message = body.get("message", str(body))
        if body.get("layer"):
            message = f"{message} (layer {body['layer']})"
        if body.get("field"):
            message = f"{message} (field {body['field']})"
        code = {400: 2, 422: 3}.get(response.status_code, 1)
        raise CliFailure(code, message)

    async def _post_inprocess(self, path, payload):
        if self._app is None:
            from .service import create_app

            self._app = create_app()
        transport = httpx.ASGITransport(app=self._app)
        async with httpx.AsyncClient(
            transport=transport, base_url="http://channel-axes", timeout=None
        ) as client:
            return await client.post(path, json=payload)

    def resolve(self, path):
        return path if os.path.isabs(path) else os.path.join(self.out_dir, path)

    def write(self, path, text):
        full = self.resolve(path)
        atomic_write_text(full, text)
        print(f"wrote {full}")
        return full


def _read_json_file(path, what):
    try:
        with open(path, encoding="utf-8") as handle:
            return json.load(handle)
    except FileNotFoundError:
        raise _fail_validation(f"{what} file not found: {path}") from None
    except json.JSONDecodeError as exc:
        raise _fail_validation(f"{what} file is not valid JSON: {path} ({exc})") from None


def _read_text_file(path, what):
    try:
        with open(path, encoding="utf-8") as handle:
            return handle.read()
    except FileNotFoundError:
        raise _fail_validation(f"{what} file not found: {path}") from None


def _file_hash(path):
    with open(path, "rb") as handle:
        return hashlib.sha256(handle.read()).hexdigest()


def _bundle_hash(bundle_dir):
    """Fingerprint for the manifest; empty when the path is not local."""
    try:
        return bundle_fingerprint(bundle_dir)
    except Exception:
        return ""


def _manifest_config(payload):
    """Manifest config: the request minus execution details.

    Worker count cannot change any result (maps are order-preserving), so it
    must not change report bytes either. The bundle's location is likewise
    not part of the analysis; its content identity is the manifest's
    bundle_hash.
    """
    return {k: v for k, v in payload.items() if k not in ("workers", "bundle_dir")}


def _csv_list(raw):
    return [part.strip() for part in raw.split(",") if part.strip()]


def _parse_seeds(raw):
    try:
        return [int(part) for part in _csv_list(raw)]
    except ValueError:
        raise _fail_validation(f"bad seed list: {raw!r}") from None


def _parse_floats(raw, what):
    try:
        return [float(part) for part in _csv_list(raw)]
    except ValueError:
        raise _fail_validation(f"bad {what} list: {raw!r}") from None


# ---------------------------------------------------------------------------
# curve-row ingestion (auc / loso / prune_curves plot)

_CURVE_COLUMNS = ("method", "seed", "sparsity_nominal", "flops_fraction")


def _curve_rows(path):
    """Rows of a curves CSV, ours or an externally produced accuracy table."""
    header, rows = read_csv_rows(_read_text_file(path, "curves"))
    missing = [c for c in _CURVE_COLUMNS if c not in header]
    if missing:
        raise _fail_validation(f"curves CSV {path} lacks columns: {missing}")
    if "retention" not in header and "accuracy" not in header:
        raise _fail_validation(f"curves CSV {path} needs a retention or accuracy column")
    out = []
    for row in rows:
        item = {
            "method": str(row["method"]),
            "seed": int(row["seed"]),
            "sparsity_nominal": float(row["sparsity_nominal"]),
            "flops_fraction": float(row["flops_fraction"]),
        }
        for value_key in ("retention", "accuracy"):
            value = row.get(value_key, "")
            if isinstance(value, float):
                item[value_key] = value
        out.append(item)
    return out


def _families_arg(ns):
    if getattr(ns, "families", None):
        families = _read_json_file(ns.families, "families")
        if not isinstance(families, dict):
            raise _fail_validation("families file must map family name -> method list")
        return {str(k): [str(m) for m in v] for k, v in families.items()}
    return None


# ---------------------------------------------------------------------------
# subcommand handlers


def _cmd_validate(ns, ctx):
    info = ctx.post("/validate", {"bundle_dir": ns.bundle})
    print(
        f"bundle ok: model '{info['model_name']}', {len(info['layers'])} layers, "
        f"{info['total_channels']} channels, batch {info['batch']}"
    )
    print(f"targets: {', '.join(info['targets'])}")
    print(f"fingerprint: {info['fingerprint']}")
    return 0


def _cmd_synth(ns, ctx):
    spec = _read_json_file(ns.spec, "synth spec")
    out_dir = ctx.resolve(ns.out)
    info = ctx.post("/synth", {"spec": spec, "out_dir": out_dir, "seed": ctx.seed})
    print(f"wrote bundle {out_dir} ({info['total_channels']} channels)")
    print(f"fingerprint: {info['fingerprint']}")
    return 0


def _metrics_payload(ns, ctx):
    return {
        "bundle_dir": ns.bundle,
        "targets": _csv_list(ns.targets) if ns.targets else None,
        "m": ns.m,
        "partner_rule": ns.partner_rule,
        "redundancy_target": ns.redundancy_target,
        "seed": ctx.seed or 0,
        "workers": ctx.workers,
    }


def _cmd_metrics(ns, ctx):
    payload = _metrics_payload(ns, ctx)
    data = ctx.post("/metrics", payload)
    manifest = build_manifest(
        "metrics", _manifest_config(payload), bundle_hash=_bundle_hash(ns.bundle), seeds=[payload["seed"]]
    )
    ctx.write(ns.out, json_report("metrics/v1", data, manifest))

    targets = data["targets"]
    header = ["layer", "channel", "excluded", "s", "w_norm_sq", "i_x", "r_bar_x", "red_t", "syn"]
    header += [f"i_ty_{t}" for t in targets] + [f"rho_{t}" for t in targets]
    rows = []
    for layer in data["layers"]:
        excluded = set(layer["excluded"])
        for ch in range(len(layer["i_x"])):
            row = [
                layer["name"],
                ch,
                ch in excluded,
                layer["s"][ch],
                layer["w_norm_sq"][ch],
                layer["i_x"][ch],
                layer["r_bar_x"][ch],
                layer["red_t"][ch],
                layer["syn"][ch],
            ]
            row += [layer["i_ty"][t][ch] for t in targets]
            row += [layer["rho_ty"][t][ch] for t in targets]
            rows.append(row)
    ctx.write(ns.csv, csv_report("metrics-table/v1", header, rows, manifest))
    return 0


def _cmd_pid(ns, ctx):
    payload = {
        "bundle_dir": ns.bundle,
        "target": ns.target,
        "top_k": ns.top_k,
        "max_triples": ns.max_triples,
        "triplets": ns.triplets,
        "n_pairs": ns.pairs,
        "seed": ctx.seed or 0,
        "workers": ctx.workers,
    }
    data = ctx.post("/pid", payload)
    manifest = build_manifest(
        "pid", _manifest_config(payload), bundle_hash=_bundle_hash(ns.bundle), seeds=[payload["seed"]]
    )
    ctx.write(ns.out, json_report("pid/v1", data, manifest))
    for layer in data["layers"]:
        line = f"{layer['name']}: {len(layer['pairs'])} pairs"
        if layer.get("triplet"):
            line += f", triplet excess ratio {layer['triplet']['ratio']:.4f}"
        print(line)
    return 0


def _cmd_hulls(ns, ctx):
    payload = {
        "bundle_dir": ns.bundle,
        "eps": ns.eps,
        "cap": ns.cap,
        "pool_size": ns.pool_size,
        "floor": ns.floor,
        "seed": ctx.seed or 0,
        "workers": ctx.workers,
    }
    data = ctx.post("/hulls", payload)
    manifest = build_manifest(
        "hulls", _manifest_config(payload), bundle_hash=_bundle_hash(ns.bundle), seeds=[payload["seed"]]
    )
    ctx.write(ns.out, json_report("hulls/v1", data, manifest))
    for layer in data["layers"]:
        counts = layer["summary"]["status_counts"]
        print(f"{layer['name']}: median size {layer['summary']['median_size']}, {counts}")
    return 0


def _cmd_lesion(ns, ctx):
    spec = _read_json_file(ns.synth_spec, "synth spec")
    payload = {
        "spec": spec,
        "n_channels": ns.channels,
        "n_samples": ns.samples,
        "k": ns.k,
        "thresholds": _parse_floats(ns.thresholds, "threshold"),
        "matched": ns.matched,
        "seed": ctx.seed or 0,
        "workers": ctx.workers,
    }
    data = ctx.post("/lesion", payload)
    manifest = build_manifest(
        "lesion", _manifest_config(payload), bundle_hash=_file_hash(ns.synth_spec), seeds=[payload["seed"]]
    )
    header = [
        "layer",
        "index",
        "delta_loss",
        "delta_loss_replaced",
        "recovery",
        "peer_r2",
        "task_mi",
        "i_x",
    ]
    rows = [[rec[h] for h in header] for rec in data["records"]]
    ctx.write(ns.out, csv_report("lesions/v1", header, rows, manifest))
    summary_doc = {"summary": data["summary"], "matched": data["matched"]}
    ctx.write(ns.summary_out, json_report("lesion-summary/v1", summary_doc, manifest))
    return 0


def _cmd_graphs(ns, ctx):
    payload = {
        "bundle_dir": ns.bundle,
        "keep_frac": ns.top_frac,
        "target": ns.target,
        "n_perm": ns.n_perm,
        "seed": ctx.seed or 0,
        "workers": ctx.workers,
    }
    data = ctx.post("/graphs", payload)
    manifest = build_manifest(
        "graphs", _manifest_config(payload), bundle_hash=_bundle_hash(ns.bundle), seeds=[payload["seed"]]
    )
    header = [
        "layer",
        "q_r",
        "q_s",
        "gap",
        "n_communities_r",
        "n_communities_s",
        "ari_rs",
        "null_mean",
        "null_lo",
        "null_hi",
    ]
    rows = []
    for layer in data["layers"]:
        null = layer.get("null") or {}
        rows.append(
            [
                layer["name"],
                layer["q_r"],
                layer["q_s"],
                layer["gap"],
                layer["n_communities_r"],
                layer["n_communities_s"],
                layer["ari_rs"],
                null.get("mean"),
                null.get("lo"),
                null.get("hi"),
            ]
        )
    ctx.write(ns.out, csv_report("graphs/v1", header, rows, manifest))
    ctx.write(ns.json_out, json_report("graphs/v1", data, manifest))
    return 0


def _cmd_traj(ns, ctx):
    config = _read_json_file(ns.config, "trajectory config") if ns.config else {}
    payload = {"config": config, "seed": ctx.seed}
    data = ctx.post("/traj", payload)
    seed = config.get("seed", 0) if ctx.seed is None else ctx.seed
    manifest = build_manifest("traj", _manifest_config(payload), seeds=[seed])
    header = list(TRAJECTORY_COLUMNS)
    rows = [[row[h] for h in header] for row in data["rows"]]
    ctx.write(ns.out, csv_report("trajectory/v1", header, rows, manifest))
    ctx.write(ns.summary_out, json_report("traj-summary/v1", data["summary"], manifest))
    return 0


def _cmd_crosslayer(ns, ctx):
    payload = _metrics_payload(ns, ctx)
    data = ctx.post("/crosslayer", payload)
    manifest = build_manifest(
        "crosslayer", _manifest_config(payload), bundle_hash=_bundle_hash(ns.bundle), seeds=[payload["seed"]]
    )
    metrics = data["metrics"]
    header = ["edge", "src_metric", "dst_metric", "spearman"]
    rows = []
    for edge in sorted(data["edges"]):
        mat = data["edges"][edge]
        for a, src in enumerate(metrics):
            for b, dst in enumerate(metrics):
                rows.append([edge, src, dst, mat[a][b]])
    for a, src in enumerate(metrics):
        for b, dst in enumerate(metrics):
            rows.append(["(mean)", src, dst, data["mean"][a][b]])
    ctx.write(ns.out, csv_report("crosslayer/v1", header, rows, manifest))
    return 0


def _cmd_prune(ns, ctx):
    if (ns.bundle is None) == (ns.synth_spec is None):
        raise _fail_validation("prune needs a bundle directory or --synth-spec, not both")
    spec = _read_json_file(ns.synth_spec, "synth spec") if ns.synth_spec else None
    seeds = _parse_seeds(ns.seeds) if ns.seeds else [ctx.seed or 0]
    payload = {
        "bundle_dir": ns.bundle,
        "spec": spec,
        "methods": _csv_list(ns.methods),
        "levels": ns.levels,
        "sparsities": _parse_floats(ns.sparsities, "sparsity") if ns.sparsities else None,
        "min_keep": ns.min_keep,
        "seeds": seeds,
        "target": ns.target,
        "alpha": ns.alpha,
        "beta": ns.beta,
        "composite_alpha": ns.composite_alpha,
        "composite_gamma": ns.composite_gamma,
        "workers": ctx.workers,
    }
    data = ctx.post("/prune", payload)
    bundle_hash = _bundle_hash(ns.bundle) if ns.bundle else _file_hash(ns.synth_spec)
    manifest = build_manifest("prune", _manifest_config(payload), bundle_hash=bundle_hash, seeds=seeds)
    header = ["method", "seed", "sparsity_nominal", "flops_fraction", "retention"]
    rows = [[row[h] for h in header] for row in data["rows"]]
    ctx.write(ns.out, csv_report("prune-curves/v1", header, rows, manifest))
    return 0


def _cmd_auc(ns, ctx):
    rows = _curve_rows(ns.curves)
    payload = {
        "rows": rows,
        "families": _families_arg(ns),
        "n_boot": ns.n_boot,
        "seed": ctx.seed or 0,
    }
    data = ctx.post("/auc", payload)
    manifest = build_manifest(
        "auc",
        {k: payload[k] for k in ("families", "n_boot", "seed")},
        bundle_hash=_file_hash(ns.curves),
        seeds=data["seeds"],
    )
    ctx.write(ns.out, json_report("auc/v1", data, manifest))
    for method in sorted(data["mean_auc"], key=lambda m: -data["mean_auc"][m]):
        print(f"{method}: mean AUC {data['mean_auc'][method]:.4f}")
    comparison = data.get("comparison")
    if comparison:
        for name, delta in sorted(comparison["deltas"].items()):
            lo, hi = delta["lo"], delta["hi"]
            print(f"{name}: {delta['mean']:+.4f} [{lo:+.4f}, {hi:+.4f}]")
    return 0


def _cmd_loso(ns, ctx):
    rows = _curve_rows(ns.curves)
    family = None
    if ns.family:
        families = _families_arg(ns) or FAMILIES
        if ns.family in families:
            family = list(families[ns.family])
        elif "," in ns.family:
            family = _csv_list(ns.family)
        else:
            raise _fail_validation(
                f"unknown family '{ns.family}'; known: {sorted(families)} "
                "(or pass a comma-separated method list)"
            )
    payload = {
        "rows": rows,
        "family": family,
        "comparators": _csv_list(ns.comparators) if ns.comparators else [],
    }
    data = ctx.post("/loso", payload)
    manifest = build_manifest(
        "loso",
        {"family": family, "comparators": payload["comparators"]},
        bundle_hash=_file_hash(ns.curves),
        seeds=data["seeds"],
    )
    ctx.write(ns.out, json_report("loso/v1", data, manifest))
    print(f"picked per fold: {', '.join(data['picked'])}")
    print(f"mean held-out AUC {data['mean_heldout_auc']:.4f}, mean gap {data['mean_gap']:+.4f}")
    return 0


# ---------------------------------------------------------------------------
# plot input adapters


def _require_schema(doc, expected, path):
    schema = doc.get("schema", "")
    if schema != f"channel-axes/{expected}":
        raise _fail_validation(
            f"{path} has schema '{schema}', expected 'channel-axes/{expected}'"
        )
    return doc["data"]


def _plot_scatter(path):
    data = _require_schema(_read_json_file(path, "metrics report"), "metrics/v1", path)
    target = data["redundancy_target"]
    points = []
    for layer in data["layers"]:
        excluded = set(layer["excluded"])
        for ch, (x, y) in enumerate(zip(layer["r_bar_x"], layer["i_ty"][target])):
            if ch not in excluded:
                points.append({"x": x, "y": y, "group": layer["name"]})
    return {
        "points": points,
        "title": f"replaceability vs task MI ({target})",
        "x_label": "mean peer redundancy (nats)",
        "y_label": "task MI (nats)",
    }


def _plot_depth(path):
    data = _require_schema(_read_json_file(path, "metrics report"), "metrics/v1", path)
    target = data["redundancy_target"]
    layers = sorted(data["layers"], key=lambda rec: rec["relative_depth"])
    depths = [rec["relative_depth"] for rec in layers]

    def mean_of(key, sub=None):
        values = []
        for rec in layers:
            arr = rec[key][sub] if sub else rec[key]
            keep = [v for ch, v in enumerate(arr) if ch not in set(rec["excluded"])]
            values.append(sum(keep) / len(keep) if keep else 0.0)
        return values

    series = [
        {"name": "mean i_x", "x": depths, "y": mean_of("i_x")},
        {"name": "mean r_bar_x", "x": depths, "y": mean_of("r_bar_x")},
        {"name": f"mean i_ty ({target})", "x": depths, "y": mean_of("i_ty", target)},
        {"name": "mean syn", "x": depths, "y": mean_of("syn")},
    ]
    return {"series": series, "title": "metric means over depth"}


def _plot_ari(path):
    data = _require_schema(_read_json_file(path, "graphs report"), "graphs/v1", path)
    layers = data["layers"]
    nulls = [rec["null"] for rec in layers if rec.get("null")]
    if not nulls:
        raise _fail_validation(
            f"{path} has no permutation null; rerun graphs with --n-perm > 0"
        )
    return {
        "observed": [rec["ari_rs"] for rec in layers],
        "null_mean": sum(n["mean"] for n in nulls) / len(nulls),
        "null_lo": min(n["lo"] for n in nulls),
        "null_hi": max(n["hi"] for n in nulls),
        "title": "community agreement vs permutation null",
    }


def _plot_prune(path):
    rows = _curve_rows(path)
    seeds = sorted({row["seed"] for row in rows})
    groups = {}
    for row in rows:
        name = row["method"] if len(seeds) == 1 else f"{row['method']}/s{row['seed']}"
        value = row.get("retention", row.get("accuracy"))
        groups.setdefault(name, []).append((row["flops_fraction"], value))
    series = []
    for name in sorted(groups):
        pts = sorted(groups[name])
        series.append({"name": name, "x": [p[0] for p in pts], "y": [p[1] for p in pts]})
    return {"series": series, "x_label": "FLOPs fraction pruned", "y_label": "retention"}


def _plot_trajectory(path):
    header, rows = read_csv_rows(_read_text_file(path, "trajectory"))
    missing = [c for c in TRAJECTORY_COLUMNS if c not in header]
    if missing:
        raise _fail_validation(f"trajectory CSV {path} lacks columns: {missing}")
    return {"rows": rows}


_PLOT_BUILDERS = {
    "scatter_axes": _plot_scatter,
    "depth_profiles": _plot_depth,
    "ari_null": _plot_ari,
    "prune_curves": _plot_prune,
    "trajectory": _plot_trajectory,
}


def _cmd_plot(ns, ctx):
    data = _PLOT_BUILDERS[ns.kind](ns.input)
    manifest = build_manifest(
        "plot",
        {"kind": ns.kind, "input": os.path.basename(ns.input)},
        bundle_hash=_file_hash(ns.input),
    )
    ctx.write(ns.out, render_plot(ns.kind, data, manifest=manifest))
    return 0


def _cmd_serve(ns, ctx):
    import uvicorn

    from .service import create_app

    uvicorn.run(create_app(), host=ns.host, port=ns.port, log_level="warning")
    return 0


# ---------------------------------------------------------------------------
# parser


def build_parser():
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--seed", type=int, default=argparse.SUPPRESS, help="base RNG seed")
    common.add_argument(
        "--workers", type=int, default=argparse.SUPPRESS, help="worker count (default: all cores)"
    )
    common.add_argument(
        "--out-dir", default=argparse.SUPPRESS, help="directory for report files (default: .)"
    )
    common.add_argument(
        "--server", default=argparse.SUPPRESS, help="service URL (default: run in process)"
    )

    parser = argparse.ArgumentParser(
        prog="channel-axes",
        description="Two-axis channel information diagnostics and pruning-score evaluation.",
        parents=[common],
    )
    sub = parser.add_subparsers(dest="command", metavar="subcommand")

    def add(name, help_text):
        p = sub.add_parser(name, help=help_text, parents=[common])
        return p

    p = add("validate", "check a bundle directory and print its shape")
    p.add_argument("bundle")

    p = add("synth", "generate a synthetic Gaussian bundle")
    p.add_argument("--spec", required=True, help="synth spec JSON file")
    p.add_argument("--out", required=True, help="bundle directory to write")

    p = add("metrics", "per-channel two-axis metric table")
    p.add_argument("bundle")
    p.add_argument("--targets", help="comma-separated target names")
    p.add_argument("--m", type=int, default=10, help="partner-set size")
    p.add_argument("--partner-rule", default="top_task")
    p.add_argument("--redundancy-target")
    p.add_argument("--out", default="metrics.json")
    p.add_argument("--csv", default="metrics.csv")

    p = add("pid", "pairwise information atoms and triplet excess")
    p.add_argument("bundle")
    p.add_argument("--target")
    p.add_argument("--top-k", type=int, default=24)
    p.add_argument("--max-triples", type=int, default=1500)
    p.add_argument("--pairs", type=int, default=8)
    p.add_argument("--no-triplets", dest="triplets", action="store_false")
    p.add_argument("--out", default="pid.json")

    p = add("hulls", "greedy replaceability hulls per channel")
    p.add_argument("bundle")
    p.add_argument("--eps", type=float, default=0.05)
    p.add_argument("--cap", type=int, default=10)
    p.add_argument("--pool-size", type=int, default=32)
    p.add_argument("--floor", type=float, default=0.01)
    p.add_argument("--out", default="hulls.json")

    p = add("lesion", "single-channel lesions with peer replacement on a synthetic model")
    p.add_argument("--synth-spec", required=True, help="synth spec JSON file")
    p.add_argument("--channels", type=int, help="channels to lesion (default: all)")
    p.add_argument("--samples", type=int, default=4000)
    p.add_argument("--k", type=int, default=8, help="peers used for replacement")
    p.add_argument("--thresholds", default="1e-4,1e-3,5e-3")
    p.add_argument("--no-matched", dest="matched", action="store_false")
    p.add_argument("--out", default="lesions.csv")
    p.add_argument("--summary-out", default="lesion_summary.json")

    p = add("graphs", "redundancy/synergy community structure per layer")
    p.add_argument("bundle")
    p.add_argument("--top-frac", type=float, default=0.10, help="edge fraction kept")
    p.add_argument("--target")
    p.add_argument("--n-perm", type=int, default=0, help="permutation-null draws for ARI")
    p.add_argument("--out", default="graphs.csv")
    p.add_argument("--json-out", default="graphs.json")

    p = add("traj", "linear-Gaussian training simulation diagnostics")
    p.add_argument("--config", help="trajectory config JSON file")
    p.add_argument("--out", default="trace.csv")
    p.add_argument("--summary-out", default="traj.json")

    p = add("crosslayer", "routed vs native metric propagation across edges")
    p.add_argument("bundle")
    p.add_argument("--targets", help="comma-separated target names")
    p.add_argument("--m", type=int, default=10)
    p.add_argument("--partner-rule", default="top_task")
    p.add_argument("--redundancy-target")
    p.add_argument("--out", default="crosslayer.csv")

    p = add("prune", "retention vs FLOPs curves for scoring methods")
    p.add_argument("bundle", nargs="?", help="bundle directory (or use --synth-spec)")
    p.add_argument("--synth-spec", help="synth spec JSON file")
    p.add_argument("--methods", required=True, help="comma-separated method names")
    p.add_argument("--levels", type=int, default=10)
    p.add_argument("--sparsities", help="explicit comma-separated sparsity ladder")
    p.add_argument("--min-keep", type=int, default=1)
    p.add_argument("--seeds", help="comma-separated seeds (default: --seed)")
    p.add_argument("--target")
    p.add_argument("--alpha", type=float, default=1.0)
    p.add_argument("--beta", type=float, default=1.0)
    p.add_argument("--composite-alpha", type=float, default=2.0)
    p.add_argument("--composite-gamma", type=float, default=0.25)
    p.add_argument("--out", default="curves.csv")

    p = add("auc", "area under retention curves on the common FLOPs interval")
    p.add_argument("curves", help="curves CSV file")
    p.add_argument("--families", help="JSON file mapping family -> methods")
    p.add_argument("--n-boot", type=int, default=2000)
    p.add_argument("--out", default="auc.json")

    p = add("loso", "leave-one-seed-out score selection within a family")
    p.add_argument("curves", help="curves CSV file")
    p.add_argument("--family", help="family name or comma-separated methods")
    p.add_argument("--families", help="JSON file mapping family -> methods")
    p.add_argument("--comparators", help="comma-separated comparator methods")
    p.add_argument("--out", default="loso.json")

    p = add("plot", "render a report file to SVG")
    p.add_argument("input", help="report file (JSON or CSV) matching the kind")
    p.add_argument("--kind", required=True, choices=PLOT_KINDS)
    p.add_argument("--out", default="plot.svg")

    p = add("serve", "run the HTTP service")
    p.add_argument("--host", default="127.0.0.1")
    p.add_argument("--port", type=int, default=8000)

    return parser


_HANDLERS = {
    "validate": _cmd_validate,
    "synth": _cmd_synth,
    "metrics": _cmd_metrics,
    "pid": _cmd_pid,
    "hulls": _cmd_hulls,
    "lesion": _cmd_lesion,
    "graphs": _cmd_graphs,
    "traj": _cmd_traj,
    "crosslayer": _cmd_crosslayer,
    "prune": _cmd_prune,
    "auc": _cmd_auc,
    "loso": _cmd_loso,
    "plot": _cmd_plot,
    "serve": _cmd_serve,
}


def _first_positional(argv):
    skip = False
    for token in argv:
        if skip:
            skip = False
            continue
        if token.startswith("-"):
            if "=" not in token and token in _VALUE_FLAGS:
                skip = True
            continue
        return token
    return None


def main(argv=None):
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    first = _first_positional(argv)
    wants_help = any(token in ("-h", "--help") for token in argv)
    if first is None and not wants_help:
        parser.print_usage(sys.stderr)
        print("error: no subcommand given", file=sys.stderr)
        return 1
    if first is not None and first not in _SUBCOMMANDS:
        parser.print_usage(sys.stderr)
        print(f"error: unknown subcommand '{first}'", file=sys.stderr)
        return 1

    ns = parser.parse_args(argv)
    ctx = Context(
        server=getattr(ns, "server", None),
        seed=getattr(ns, "seed", None),
        workers=getattr(ns, "workers", None),
        out_dir=getattr(ns, "out_dir", "."),
    )
    try:
        return _HANDLERS[ns.command](ns, ctx)
    except CliFailure as exc:
        print(f"error: {exc}", file=sys.stderr)
        return exc.code
    except httpx.HTTPError as exc:
        print(f"error: service request failed: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
