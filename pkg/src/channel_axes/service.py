"""HTTP API over the analysis engine.

The command-line client drives this app in process through an ASGI
transport by default, or over the network when pointed at a running
instance, so both paths exercise the same request handling. Endpoints take
JSON requests and return JSON payloads; writing report files is the
client's job (synth is the one exception: it materializes a bundle
directory on the service host, which in the default in-process setup is
the local filesystem).

Error mapping, which the client turns into exit codes: malformed inputs
(bad bundle layout, unknown methods, inconsistent request bodies) answer
400, statistically unusable data answers 422.
"""

import dataclasses

import numpy as np
from fastapi import FastAPI
from fastapi.exceptions import RequestValidationError
from fastapi.responses import JSONResponse
from pydantic import BaseModel, ConfigDict

from . import __version__
from .axis_metrics import compute_metrics, joint_mi_pairs
from .bundle_io import SynthSpec, bundle_fingerprint, load_bundle, synth_bundle
from .crosslayer import propagation_matrix
from .errors import BundleValidationError, DegenerateDataError
from .gaussian_dynamics import (
    TrajConfig,
    simulate_training,
    trajectory_summary,
    trajectory_table,
)
from .graph_modularity import layer_graph_report
from .pid_tools import mmi_pid, triplet_excess
from .pruning import (
    EmpiricalChannelStats,
    FAMILIES,
    METRIC_METHODS,
    PruneCurve,
    auc_common_interval,
    compare_methods,
    compute_scores,
    loso_selector,
    sweep,
)
from .replaceability import (
    hull_summary,
    layer_hulls,
    lesion_experiment,
    lesion_summary,
    matched_task_analysis,
)
from .stats_core import permutation_null_ari
from ._util import parallel_map


def _floats(arr):
    return [float(v) for v in np.asarray(arr, dtype=float).ravel()]


def _finite_or_none(value):
    value = float(value)
    return value if np.isfinite(value) else None


def _matrix(mat):
    return [[_finite_or_none(v) for v in row] for row in np.asarray(mat, dtype=float)]


class StrictModel(BaseModel):
    model_config = ConfigDict(extra="forbid")


# ---------------------------------------------------------------------------
# requests


class BundleRequest(StrictModel):
    bundle_dir: str


class SynthRequest(StrictModel):
    spec: dict
    out_dir: str
    seed: int | None = None


class MetricsRequest(StrictModel):
    bundle_dir: str
    targets: list[str] | None = None
    m: int = 10
    partner_rule: str = "top_task"
    redundancy_target: str | None = None
    seed: int = 0
    workers: int = 1


class PidRequest(StrictModel):
    bundle_dir: str
    target: str | None = None
    top_k: int = 24
    max_triples: int = 1500
    triplets: bool = True
    n_pairs: int = 8
    seed: int = 0
    workers: int = 1


class HullsRequest(StrictModel):
    bundle_dir: str
    eps: float = 0.05
    cap: int = 10
    pool_size: int = 32
    floor: float = 0.01
    seed: int = 0
    workers: int = 1


class LesionRequest(StrictModel):
    spec: dict
    n_channels: int | None = None
    n_samples: int = 4000
    k: int = 8
    thresholds: list[float] = [1e-4, 1e-3, 5e-3]
    matched: bool = True
    n_bins: int = 5
    damage_threshold: float = 1e-4
    seed: int = 0
    workers: int = 1


class GraphsRequest(StrictModel):
    bundle_dir: str
    keep_frac: float = 0.10
    target: str | None = None
    n_perm: int = 0
    seed: int = 0
    workers: int = 1


class TrajRequest(StrictModel):
    config: dict = {}
    seed: int | None = None


class CrosslayerRequest(StrictModel):
    bundle_dir: str
    targets: list[str] | None = None
    m: int = 10
    partner_rule: str = "top_task"
    redundancy_target: str | None = None
    seed: int = 0
    workers: int = 1


class PruneRequest(StrictModel):
    bundle_dir: str | None = None
    spec: dict | None = None
    methods: list[str]
    levels: int = 10
    sparsities: list[float] | None = None
    min_keep: int = 1
    seeds: list[int] = [0]
    target: str | None = None
    alpha: float = 1.0
    beta: float = 1.0
    composite_alpha: float = 2.0
    composite_gamma: float = 0.25
    workers: int = 1


class CurveRow(StrictModel):
    method: str
    seed: int
    sparsity_nominal: float
    flops_fraction: float
    retention: float | None = None
    accuracy: float | None = None


class AucRequest(StrictModel):
    rows: list[CurveRow]
    families: dict[str, list[str]] | None = None
    n_boot: int = 2000
    seed: int = 0


class LosoRequest(StrictModel):
    rows: list[CurveRow]
    family: list[str] | None = None
    comparators: list[str] = []


# ---------------------------------------------------------------------------
# responses


class HealthResponse(StrictModel):
    status: str
    version: str


class LayerInfo(StrictModel):
    name: str
    relative_depth: float
    channels: int
    features: int
    kind: str
    has_spatial: bool
    baseline_scores: list[str]


class BundleInfo(StrictModel):
    fingerprint: str
    model_name: str
    seed: int
    batch: int
    total_channels: int
    layers: list[LayerInfo]
    targets: list[str]
    edges: list[tuple[str, str]]
    coupling_groups: list[list[str]]
    out_dir: str | None = None


class LayerMetricsPayload(StrictModel):
    name: str
    relative_depth: float
    sigma0_sq: float
    corr_source: str
    excluded: list[int]
    s: list[float]
    w_norm_sq: list[float]
    i_x: list[float]
    r_bar_x: list[float]
    red_t: list[float]
    syn: list[float]
    i_ty: dict[str, list[float]]
    rho_ty: dict[str, list[float]]
    partner_sets: list[list[int]]
    baseline_scores: dict[str, list[float]]


class MetricsResponse(StrictModel):
    targets: list[str]
    redundancy_target: str
    m: int
    partner_rule: str
    layers: list[LayerMetricsPayload]


class PidPair(StrictModel):
    i: int
    j: int
    red: float
    uniq_i: float
    uniq_j: float
    syn: float
    i_i: float
    i_j: float
    i_joint: float
    clamped: bool


class TripletPayload(StrictModel):
    channels: list[int]
    n_triples: int
    n_used: int
    n_skipped: int
    ratio: float
    mean_s3_pos: float
    mean_s2: float


class PidLayer(StrictModel):
    name: str
    pairs: list[PidPair]
    triplet: TripletPayload | None = None


class PidResponse(StrictModel):
    target: str
    layers: list[PidLayer]


class HullPayload(StrictModel):
    channel: int
    members: list[int]
    e_trace: list[float]
    e_full: float
    status: str


class HullsLayer(StrictModel):
    name: str
    hulls: list[HullPayload]
    summary: dict


class HullsResponse(StrictModel):
    layers: list[HullsLayer]


class LesionRow(StrictModel):
    layer: str
    index: int
    delta_loss: float
    delta_loss_replaced: float
    recovery: float | None
    peer_r2: float
    task_mi: float
    i_x: float


class LesionResponse(StrictModel):
    records: list[LesionRow]
    summary: dict
    matched: dict | None = None


class GraphsLayer(StrictModel):
    name: str
    q_r: float
    q_s: float
    gap: float
    n_communities_r: int
    n_communities_s: int
    ari_rs: float
    null: dict | None = None


class GraphsResponse(StrictModel):
    target: str
    layers: list[GraphsLayer]


class TrajResponse(StrictModel):
    rows: list[dict]
    summary: dict


class CrosslayerResponse(StrictModel):
    metrics: list[str]
    edges: dict[str, list[list[float | None]]]
    mean: list[list[float | None]]


class PruneResponse(StrictModel):
    rows: list[CurveRow]


class AucResponse(StrictModel):
    seeds: list[int]
    interval_by_seed: dict[str, tuple[float, float]]
    auc: dict[str, dict[str, float]]
    mean_auc: dict[str, float]
    comparison: dict | None = None


class LosoResponse(StrictModel):
    seeds: list[int]
    picked: list[str]
    heldout_auc: list[float]
    oracle_auc: list[float]
    gap: list[float]
    mean_heldout_auc: float
    mean_gap: float
    deltas_vs: dict[str, dict]


# ---------------------------------------------------------------------------
# payload builders


def _bundle_info(bundle, fingerprint="", out_dir=None):
    return BundleInfo(
        fingerprint=fingerprint,
        model_name=bundle.model_name,
        seed=bundle.seed,
        batch=bundle.batch_size,
        total_channels=sum(rec.num_channels for rec in bundle.layers),
        layers=[
            LayerInfo(
                name=rec.name,
                relative_depth=rec.relative_depth,
                channels=rec.num_channels,
                features=rec.num_features,
                kind=bundle.graph.kind(rec.name),
                has_spatial=rec.spatial_acts is not None,
                baseline_scores=sorted(rec.baseline_scores),
            )
            for rec in bundle.layers
        ],
        targets=sorted(bundle.targets),
        edges=[tuple(e) for e in bundle.graph.edges],
        coupling_groups=[list(g) for g in bundle.graph.coupling_groups],
        out_dir=out_dir,
    )


def _layer_payload(lm, baseline_scores):
    return LayerMetricsPayload(
        name=lm.name,
        relative_depth=lm.relative_depth,
        sigma0_sq=lm.sigma0_sq,
        corr_source=lm.corr_source,
        excluded=[int(i) for i in lm.excluded],
        s=_floats(lm.s),
        w_norm_sq=_floats(lm.w_norm_sq),
        i_x=_floats(lm.i_x),
        r_bar_x=_floats(lm.r_bar_x),
        red_t=_floats(lm.red_t),
        syn=_floats(lm.syn),
        i_ty={t: _floats(v) for t, v in lm.i_ty.items()},
        rho_ty={t: _floats(v) for t, v in lm.rho_ty.items()},
        partner_sets=[[int(j) for j in ps] for ps in lm.partner_sets],
        baseline_scores={k: _floats(v) for k, v in baseline_scores.items()},
    )


def _top_pairs(lm, target, top_k, n_pairs):
    """Strongest-|corr| partner pairs among the most task-relevant channels."""
    i_ty = np.asarray(lm.i_ty[target], dtype=float)
    excluded = set(lm.excluded)
    order = [int(i) for i in np.argsort(-i_ty, kind="stable") if int(i) not in excluded]
    top = order[: min(top_k, len(order))]
    keys = []
    for i in top[: min(n_pairs, len(top))]:
        others = [j for j in top if j != i]
        if not others:
            break
        j = max(others, key=lambda cand: (abs(float(lm.corr[i, cand])), -cand))
        key = (min(i, j), max(i, j))
        if key not in keys:
            keys.append(key)
    if not keys:
        return []
    joint = joint_mi_pairs(lm.corr, lm.rho_ty[target], np.asarray(keys))
    pairs = []
    for (a, b), mi in zip(keys, joint):
        atoms = mmi_pid(float(i_ty[a]), float(i_ty[b]), float(mi))
        pairs.append(
            PidPair(
                i=a,
                j=b,
                red=atoms.red,
                uniq_i=atoms.uniq1,
                uniq_j=atoms.uniq2,
                syn=atoms.syn,
                i_i=atoms.i1,
                i_j=atoms.i2,
                i_joint=atoms.i_joint,
                clamped=atoms.clamped,
            )
        )
    return pairs


def _curves_by_seed(rows):
    """Group flat curve rows into {seed: {method: PruneCurve}}.

    The value column is retention when present. Accuracy rows are
    normalized by the same curve's sparsity-0 accuracy when one exists,
    otherwise used as-is (AUC comparisons only need a common scale).
    """
    grouped = {}
    for row in rows:
        grouped.setdefault((row.method, int(row.seed)), []).append(row)
    curves = {}
    for (method, seed), pts in grouped.items():
        pts = sorted(pts, key=lambda p: (p.flops_fraction, p.sparsity_nominal))
        values = []
        for p in pts:
            if p.retention is not None:
                values.append(float(p.retention))
            elif p.accuracy is not None:
                values.append(float(p.accuracy))
            else:
                raise BundleValidationError(
                    f"curve row for method '{method}' seed {seed} has neither retention nor accuracy"
                )
        if all(p.retention is None for p in pts):
            base = next((v for p, v in zip(pts, values) if p.sparsity_nominal == 0.0), None)
            if base is not None and base > 0:
                values = [v / base for v in values]
        curves.setdefault(seed, {})[method] = PruneCurve(
            method=method,
            sparsities=[float(p.sparsity_nominal) for p in pts],
            flops_pruned=[float(p.flops_fraction) for p in pts],
            retention=values,
            seed=seed,
        )
    if not curves:
        raise BundleValidationError("no curve rows supplied")
    return curves


def _auc_table(curves_by_seed):
    """Per-seed AUCs aligned into {method: [auc per seed]} plus intervals."""
    seeds = sorted(curves_by_seed)
    methods = sorted(curves_by_seed[seeds[0]])
    for seed in seeds:
        if sorted(curves_by_seed[seed]) != methods:
            raise BundleValidationError(
                f"seed {seed} does not cover the same methods as seed {seeds[0]}"
            )
    per_seed = {}
    intervals = {}
    for seed in seeds:
        group = curves_by_seed[seed]
        per_seed[seed] = auc_common_interval(group)
        lo = max(min(c.flops_pruned) for c in group.values())
        hi = min(max(c.flops_pruned) for c in group.values())
        intervals[str(seed)] = (lo, hi)
    table = {m: [per_seed[s][m] for s in seeds] for m in methods}
    return seeds, table, intervals


# ---------------------------------------------------------------------------
# app


def create_app():
    app = FastAPI(title="channel-axes", version=__version__)

    @app.exception_handler(BundleValidationError)
    async def _validation(request, exc):
        detail = {"error": "validation", "message": str(exc)}
        if exc.layer is not None:
            detail["layer"] = exc.layer
        if exc.field is not None:
            detail["field"] = exc.field
        return JSONResponse(status_code=400, content=detail)

    @app.exception_handler(DegenerateDataError)
    async def _degenerate(request, exc):
        return JSONResponse(status_code=422, content={"error": "degenerate", "message": str(exc)})

    @app.exception_handler(ValueError)
    async def _value_error(request, exc):
        return JSONResponse(status_code=400, content={"error": "validation", "message": str(exc)})

    @app.exception_handler(RequestValidationError)
    async def _request_shape(request, exc):
        return JSONResponse(status_code=400, content={"error": "validation", "message": str(exc)})

    @app.get("/health", response_model=HealthResponse)
    async def health():
        return HealthResponse(status="ok", version=__version__)

    @app.post("/validate", response_model=BundleInfo)
    async def validate(req: BundleRequest):
        bundle = load_bundle(req.bundle_dir)
        return _bundle_info(bundle, fingerprint=bundle_fingerprint(req.bundle_dir))

    @app.post("/synth", response_model=BundleInfo)
    async def synth(req: SynthRequest):
        raw = dict(req.spec)
        if req.seed is not None:
            raw["seed"] = req.seed
        spec = SynthSpec.from_dict(raw)
        bundle, _ = synth_bundle(spec, out_dir=req.out_dir)
        return _bundle_info(
            bundle, fingerprint=bundle_fingerprint(req.out_dir), out_dir=req.out_dir
        )

    def _metrics_table(bundle, req):
        return compute_metrics(
            bundle,
            targets=req.targets,
            m=req.m,
            partner_rule=req.partner_rule,
            redundancy_target=req.redundancy_target,
            seed=req.seed,
            workers=req.workers,
        )

    @app.post("/metrics", response_model=MetricsResponse)
    async def metrics(req: MetricsRequest):
        bundle = load_bundle(req.bundle_dir)
        table = _metrics_table(bundle, req)
        layers = [
            _layer_payload(table.layer(name), bundle.layer(name).baseline_scores)
            for name in bundle.layer_names
        ]
        return MetricsResponse(
            targets=table.targets,
            redundancy_target=table.redundancy_target,
            m=table.m,
            partner_rule=table.partner_rule,
            layers=layers,
        )

    @app.post("/pid", response_model=PidResponse)
    async def pid(req: PidRequest):
        bundle = load_bundle(req.bundle_dir)
        table = compute_metrics(
            bundle,
            targets=[req.target] if req.target else None,
            redundancy_target=req.target,
            seed=req.seed,
            workers=req.workers,
        )
        target = table.redundancy_target

        def layer_report(name):
            lm = table.layer(name)
            pairs = _top_pairs(lm, target, req.top_k, req.n_pairs)
            triplet = None
            if req.triplets:
                raw = triplet_excess(
                    lm.i_ty[target],
                    lm.corr,
                    lm.rho_ty[target],
                    top_k=req.top_k,
                    max_triples=req.max_triples,
                    seed=req.seed,
                    excluded=lm.excluded,
                )
                used = raw["s2"] > 1e-9
                triplet = TripletPayload(
                    channels=[int(c) for c in raw["channels"]],
                    n_triples=len(raw["triples"]),
                    n_used=raw["n_used"],
                    n_skipped=raw["n_skipped"],
                    ratio=raw["ratio"],
                    mean_s3_pos=float(np.maximum(raw["s3"][used], 0.0).mean()) if used.any() else 0.0,
                    mean_s2=float(raw["s2"][used].mean()) if used.any() else 0.0,
                )
            return PidLayer(name=name, pairs=pairs, triplet=triplet)

        layers = parallel_map(layer_report, bundle.layer_names, workers=req.workers)
        return PidResponse(target=target, layers=layers)

    @app.post("/hulls", response_model=HullsResponse)
    async def hulls(req: HullsRequest):
        bundle = load_bundle(req.bundle_dir)
        table = compute_metrics(bundle, seed=req.seed, workers=req.workers)

        def layer_report(name):
            lm = table.layer(name)
            found = layer_hulls(
                lm.corr,
                eps=req.eps,
                cap=req.cap,
                pool_size=req.pool_size,
                floor=req.floor,
                excluded=lm.excluded,
            )
            return HullsLayer(
                name=name,
                hulls=[
                    HullPayload(
                        channel=h.channel,
                        members=list(h.members),
                        e_trace=[float(v) for v in h.e_trace],
                        e_full=h.e_full,
                        status=h.status,
                    )
                    for h in found
                ],
                summary=hull_summary(found),
            )

        layers = parallel_map(layer_report, bundle.layer_names, workers=req.workers)
        return HullsResponse(layers=layers)

    @app.post("/lesion", response_model=LesionResponse)
    async def lesion(req: LesionRequest):
        spec = SynthSpec.from_dict(dict(req.spec))
        _, model = synth_bundle(spec)
        records = lesion_experiment(
            model,
            n_channels=req.n_channels,
            seed=req.seed,
            n_samples=req.n_samples,
            k=req.k,
        )
        rows = [
            LesionRow(
                layer=r.layer,
                index=r.index,
                delta_loss=r.delta_loss,
                delta_loss_replaced=r.delta_loss_replaced,
                recovery=_finite_or_none(r.recovery),
                peer_r2=r.peer_r2,
                task_mi=r.task_mi,
                i_x=r.i_x,
            )
            for r in records
        ]
        summary = lesion_summary(records, thresholds=tuple(req.thresholds))
        matched = None
        if req.matched:
            matched = matched_task_analysis(
                records, n_bins=req.n_bins, damage_threshold=req.damage_threshold
            )
        return LesionResponse(records=rows, summary=summary, matched=matched)

    @app.post("/graphs", response_model=GraphsResponse)
    async def graphs(req: GraphsRequest):
        bundle = load_bundle(req.bundle_dir)
        table = compute_metrics(
            bundle,
            targets=[req.target] if req.target else None,
            redundancy_target=req.target,
            seed=req.seed,
            workers=req.workers,
        )
        target = table.redundancy_target

        def layer_report(name):
            lm = table.layer(name)
            report = layer_graph_report(
                lm.corr, lm.rho_ty[target], keep_frac=req.keep_frac, excluded=lm.excluded
            )
            part_r = report["redundancy"]["partition"]
            part_s = report["synergy"]["partition"]
            q_r = float(report["redundancy"]["q"])
            q_s = float(report["synergy"]["q"])
            null_values, observed = permutation_null_ari(
                part_r.labels, part_s.labels, n_perm=max(req.n_perm, 1), seed=req.seed
            )
            null = None
            if req.n_perm > 0:
                null = {
                    "n_perm": req.n_perm,
                    "mean": float(null_values.mean()),
                    "lo": float(np.quantile(null_values, 0.025)),
                    "hi": float(np.quantile(null_values, 0.975)),
                }
            return GraphsLayer(
                name=name,
                q_r=q_r,
                q_s=q_s,
                gap=q_r - q_s,
                n_communities_r=part_r.num_clusters,
                n_communities_s=part_s.num_clusters,
                ari_rs=float(observed),
                null=null,
            )

        layers = parallel_map(layer_report, bundle.layer_names, workers=req.workers)
        return GraphsResponse(target=target, layers=layers)

    @app.post("/traj", response_model=TrajResponse)
    async def traj(req: TrajRequest):
        raw = dict(req.config)
        known = {f.name for f in dataclasses.fields(TrajConfig)}
        unknown = sorted(set(raw) - known)
        if unknown:
            raise BundleValidationError(f"unknown trajectory config keys: {unknown}")
        if req.seed is not None:
            raw["seed"] = req.seed
        try:
            config = TrajConfig(**raw)
        except TypeError as exc:
            raise BundleValidationError(f"malformed trajectory config: {exc}") from exc
        trace = simulate_training(config)
        rows = trajectory_table(trace)
        summary = trajectory_summary(trace, seed=config.seed)
        summary = {
            "steps": summary["steps"],
            "coupling": _floats(summary["coupling"]),
            "coupling_permuted": _floats(summary["coupling_permuted"]),
            "rank_persistence": _floats(summary["rank_persistence"]),
            "delta_coupling": summary["delta_coupling"],
            "mean_abs_cos": _floats(summary["mean_abs_cos"]),
            "losses": _floats(summary["losses"]),
        }
        clean_rows = [{k: _finite_or_none(v) if k != "step" else int(v) for k, v in r.items()} for r in rows]
        return TrajResponse(rows=clean_rows, summary=summary)

    @app.post("/crosslayer", response_model=CrosslayerResponse)
    async def crosslayer(req: CrosslayerRequest):
        bundle = load_bundle(req.bundle_dir)
        table = _metrics_table(bundle, req)
        prop = propagation_matrix(bundle, table)
        return CrosslayerResponse(
            metrics=list(prop["metrics"]),
            edges={label: _matrix(mat) for label, mat in prop["edges"].items()},
            mean=_matrix(prop["mean"]),
        )

    @app.post("/prune", response_model=PruneResponse)
    async def prune(req: PruneRequest):
        if (req.bundle_dir is None) == (req.spec is None):
            raise BundleValidationError("prune needs exactly one of bundle_dir or spec")
        if not req.methods:
            raise BundleValidationError("prune needs at least one method")
        # Methods outside COMPUTED_METHODS are looked up as stored scores
        # (taylor, bn_scale, exporter extras) inside compute_scores.
        needs_table = bool(set(req.methods) & set(METRIC_METHODS))
        needs_hulls = "local_compact" in req.methods

        def run_seed(seed):
            if req.spec is not None:
                raw = dict(req.spec)
                raw["seed"] = seed
                bundle, model = synth_bundle(SynthSpec.from_dict(raw))
            else:
                bundle = load_bundle(req.bundle_dir)
                model = EmpiricalChannelStats(bundle, target=req.target)
            table = None
            hulls_by_layer = None
            if needs_table:
                table = compute_metrics(
                    bundle,
                    targets=[req.target] if req.target else None,
                    redundancy_target=req.target,
                    seed=seed,
                )
            if needs_hulls:
                hulls_by_layer = {
                    name: layer_hulls(table.layer(name).corr, excluded=table.layer(name).excluded)
                    for name in bundle.layer_names
                }
            tables = {
                method: compute_scores(
                    bundle,
                    method,
                    table=table,
                    hulls=hulls_by_layer,
                    seed=seed,
                    alpha=req.alpha,
                    beta=req.beta,
                    composite_alpha=req.composite_alpha,
                    composite_gamma=req.composite_gamma,
                )
                for method in req.methods
            }
            curves = sweep(
                bundle,
                model,
                tables,
                sparsities=req.sparsities,
                levels=req.levels,
                min_keep=req.min_keep,
                seed=seed,
            )
            return [
                CurveRow(
                    method=method,
                    seed=seed,
                    sparsity_nominal=s,
                    flops_fraction=f,
                    retention=r,
                )
                for method in req.methods
                for s, f, r in zip(
                    curves[method].sparsities,
                    curves[method].flops_pruned,
                    curves[method].retention,
                )
            ]

        per_seed = parallel_map(run_seed, list(dict.fromkeys(req.seeds)), workers=req.workers)
        return PruneResponse(rows=[row for rows in per_seed for row in rows])

    @app.post("/auc", response_model=AucResponse)
    async def auc(req: AucRequest):
        curves = _curves_by_seed(req.rows)
        seeds, table, intervals = _auc_table(curves)
        mean_auc = {m: float(np.mean(v)) for m, v in table.items()}
        comparison = None
        if req.families is not None:
            comparison = compare_methods(
                table, families=req.families, n_boot=req.n_boot, seed=req.seed
            )
        else:
            present = {
                fam: [m for m in methods if m in table]
                for fam, methods in FAMILIES.items()
            }
            present = {fam: methods for fam, methods in present.items() if methods}
            if "local" in present and len(present) >= 2:
                comparison = compare_methods(
                    table, families=present, n_boot=req.n_boot, seed=req.seed
                )
        return AucResponse(
            seeds=seeds,
            interval_by_seed=intervals,
            auc={m: {str(s): v for s, v in zip(seeds, vals)} for m, vals in table.items()},
            mean_auc=mean_auc,
            comparison=comparison,
        )

    @app.post("/loso", response_model=LosoResponse)
    async def loso(req: LosoRequest):
        curves = _curves_by_seed(req.rows)
        seeds, table, _ = _auc_table(curves)
        family = req.family
        if family is not None:
            family = [m for m in family if m in table]
            if not family:
                raise BundleValidationError("no family method appears in the curve rows")
        missing = sorted(set(req.comparators) - set(table))
        if missing:
            raise BundleValidationError(f"comparator methods not in the curve rows: {missing}")
        out = loso_selector(table, family=family, comparators=tuple(req.comparators))
        return LosoResponse(
            seeds=seeds,
            picked=out["picked"],
            heldout_auc=[float(v) for v in out["heldout_auc"]],
            oracle_auc=[float(v) for v in out["oracle_auc"]],
            gap=[float(v) for v in out["gap"]],
            mean_heldout_auc=float(out["mean_heldout_auc"]),
            mean_gap=float(out["mean_gap"]),
            deltas_vs=out["deltas_vs"],
        )

    return app
