"""Bundle format: on-disk layout, validation, and synthetic generation.

A *bundle* is a directory holding everything the engine needs to analyze one
model snapshot:

    manifest.json          metadata, shapes, graph structure, file references
    *.f32                  raw little-endian float32 tensors, row-major,
                           headerless; shapes live only in the manifest

Per layer the manifest references four tensors (``spatial_acts`` optional):

    weight          [N, F]   flattened channel kernels (N channels)
    input_patches   [P, F]   subsampled unfolded inputs seen by the layer
    pooled_acts     [B, N]   spatially pooled activations per sample
    spatial_acts    [M, N]   optional subsampled per-position activations

plus optional named ``baseline_scores`` vectors of length N (taylor, bn_scale,
and similar scores computed at export time). Bundle-level entries are the
``targets`` map (name -> float vector of length B) and a ``graph`` section:
producer/consumer edges (a DAG), per-layer kind (standard / depthwise /
linear), coupling groups (layers whose channel masks must match), and
per-layer output spatial sizes used by FLOPs accounting.

``synth_bundle`` builds bundles from a linear-Gaussian generator with planted
correlation structure, and returns the generator alongside so tests and
simulations can compare estimates against population values.
"""

import hashlib
import json
import os
import re
from dataclasses import dataclass, field

import numpy as np

from ._util import rng_for
from .errors import BundleValidationError

MANIFEST_VERSION = 1
MANIFEST_NAME = "manifest.json"
LAYER_KINDS = ("standard", "depthwise", "linear")
_TARGET_NAME_RE = re.compile(r"^[A-Za-z0-9_.-]+$")


# ---------------------------------------------------------------------------
# Types
# ---------------------------------------------------------------------------


@dataclass
class LayerRecord:
    """One analyzed layer: kernels, sampled inputs, activations, export-time scores."""

    name: str
    relative_depth: float
    weight: np.ndarray
    input_patches: np.ndarray
    pooled_acts: np.ndarray
    spatial_acts: np.ndarray | None = None
    baseline_scores: dict[str, np.ndarray] = field(default_factory=dict)

    @property
    def num_channels(self):
        return int(self.weight.shape[0])

    @property
    def num_features(self):
        return int(self.weight.shape[1])


@dataclass
class GraphSpec:
    """Producer/consumer structure of the exported layers.

    edges are (producer, consumer) name pairs and must form a DAG. Layers
    absent from layer_kind default to "standard". coupling_groups list layers
    whose channel dimensions are tied (residual sums, depthwise follows its
    producer): masks must keep identical channel sets across members.
    spatial_sizes maps layer name -> (H_out, W_out) for FLOPs accounting;
    layers absent from it default to (1, 1).
    """

    edges: list[tuple[str, str]] = field(default_factory=list)
    layer_kind: dict[str, str] = field(default_factory=dict)
    coupling_groups: list[list[str]] = field(default_factory=list)
    spatial_sizes: dict[str, tuple[int, int]] = field(default_factory=dict)

    def kind(self, name):
        return self.layer_kind.get(name, "standard")

    def producers(self, name):
        return [src for src, dst in self.edges if dst == name]

    def consumers(self, name):
        return [dst for src, dst in self.edges if src == name]

    def spatial_size(self, name):
        return tuple(self.spatial_sizes.get(name, (1, 1)))


@dataclass
class TensorBundle:
    """A fully loaded bundle. Arrays are read-only float32 views."""

    manifest_version: int
    model_name: str
    seed: int
    layers: list[LayerRecord]
    targets: dict[str, np.ndarray]
    graph: GraphSpec

    def layer(self, name):
        for rec in self.layers:
            if rec.name == name:
                return rec
        raise KeyError(f"no layer named '{name}'")

    @property
    def layer_names(self):
        return [rec.name for rec in self.layers]

    @property
    def batch_size(self):
        return int(self.layers[0].pooled_acts.shape[0])


@dataclass
class LinearGaussianModel:
    """Linear-Gaussian channel model: Y = W x + channel noise, T = readout . Y + noise.

    sigma_x is the input covariance [F, F]; w stacks every channel's kernel
    row [N, F] (all layers concatenated; layer_slices recovers the split);
    c = cov(x, T) [F]; readout holds the target weights per channel; noise_t
    is the target noise standard deviation. noise_mixer encodes planted
    duplication: the effective channel noise is noise_scale * (E @ mixer.T)
    for iid standard normal E, so duplicated channels share noise draws and
    correlate exactly.
    """

    sigma_x: np.ndarray
    w: np.ndarray
    c: np.ndarray
    sigma0_sq: float
    sigma_t_sq: float
    readout: np.ndarray
    noise_t: float
    noise_scale: float = 0.0
    noise_mixer: np.ndarray | None = None
    noise_jitter: np.ndarray | None = None
    layer_slices: dict[str, slice] = field(default_factory=dict)

    @property
    def num_channels(self):
        return int(self.w.shape[0])

    def signal_power(self):
        """Per-channel s_i = w_i . sigma_x . w_i."""
        return np.einsum("nf,fg,ng->n", self.w, self.sigma_x, self.w)

    def cov_y(self):
        cov = self.w @ self.sigma_x @ self.w.T
        if self.noise_scale > 0 and self.noise_mixer is not None:
            cov = cov + (self.noise_scale**2) * (self.noise_mixer @ self.noise_mixer.T)
        if self.noise_scale > 0 and self.noise_jitter is not None:
            cov = cov + (self.noise_scale**2) * np.diag(self.noise_jitter**2)
        return cov

    def cov_y_t(self):
        """cov(Y_i, T) for every channel."""
        return self.cov_y() @ self.readout

    def corr_t_y(self):
        var_y = np.diag(self.cov_y())
        return self.cov_y_t() / np.sqrt(np.maximum(var_y, 1e-300) * self.sigma_t_sq)

    def pop_input_capture(self):
        """Population I_X per channel using the model's sigma0_sq."""
        return 0.5 * np.log1p(self.signal_power() / self.sigma0_sq)

    def pop_task_mi(self):
        """Population I(T; Y_i) per channel in nats."""
        rho = np.clip(self.corr_t_y(), -1 + 1e-12, 1 - 1e-12)
        return -0.5 * np.log1p(-rho**2)

    def sample(self, n, seed):
        """Draw n joint samples; returns (x [n,F], y [n,N], t [n])."""
        rng = np.random.default_rng(seed) if not isinstance(seed, np.random.Generator) else seed
        chol = np.linalg.cholesky(self.sigma_x + 1e-12 * np.eye(self.sigma_x.shape[0]))
        x = rng.standard_normal((n, self.sigma_x.shape[0])) @ chol.T
        y = x @ self.w.T
        if self.noise_scale > 0 and self.noise_mixer is not None:
            y = y + self.noise_scale * (rng.standard_normal((n, self.num_channels)) @ self.noise_mixer.T)
        if self.noise_scale > 0 and self.noise_jitter is not None and np.any(self.noise_jitter > 0):
            y = y + self.noise_scale * self.noise_jitter * rng.standard_normal((n, self.num_channels))
        t = y @ self.readout + self.noise_t * rng.standard_normal(n)
        return x, y, t


# ---------------------------------------------------------------------------
# Reading and writing
# ---------------------------------------------------------------------------


def _atomic_write_bytes(path, data):
    tmp = path + ".tmp"
    with open(tmp, "wb") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_tensor(path, arr):
    arr = np.ascontiguousarray(arr, dtype="<f4")
    _atomic_write_bytes(path, arr.tobytes(order="C"))


def _read_tensor(bundle_dir, entry, *, layer=None, fieldname=None):
    if not isinstance(entry, dict) or "file" not in entry or "shape" not in entry:
        raise BundleValidationError("tensor entry needs 'file' and 'shape'", layer=layer, field=fieldname)
    shape = tuple(int(v) for v in entry["shape"])
    if any(v < 1 for v in shape):
        raise BundleValidationError(f"non-positive dimension in shape {shape}", layer=layer, field=fieldname)
    path = os.path.join(bundle_dir, entry["file"])
    if not os.path.isfile(path):
        raise BundleValidationError(f"missing tensor file '{entry['file']}'", layer=layer, field=fieldname)
    expected = int(np.prod(shape)) * 4
    actual = os.path.getsize(path)
    if actual != expected:
        raise BundleValidationError(
            f"tensor file '{entry['file']}' holds {actual} bytes, expected {expected} for shape {shape}",
            layer=layer,
            field=fieldname,
        )
    return np.memmap(path, dtype="<f4", mode="r", shape=shape)


def _layer_file_stem(index):
    return f"{index:02d}"


def _target_file_name(name):
    return f"target.{name}.f32"


def write_bundle(bundle, out_dir):
    """Serialize a TensorBundle to out_dir; returns the manifest path.

    Identical bundles serialize to identical bytes (sorted-key manifest,
    fixed file naming), so write -> load -> write round-trips exactly.
    """
    os.makedirs(out_dir, exist_ok=True)
    layers_meta = []
    for i, rec in enumerate(bundle.layers):
        stem = _layer_file_stem(i)
        tensors = {}
        for fieldname, arr in (
            ("weight", rec.weight),
            ("input_patches", rec.input_patches),
            ("pooled_acts", rec.pooled_acts),
            ("spatial_acts", rec.spatial_acts),
        ):
            if arr is None:
                continue
            fname = f"{stem}.{fieldname}.f32"
            _write_tensor(os.path.join(out_dir, fname), arr)
            tensors[fieldname] = {"file": fname, "shape": [int(v) for v in np.shape(arr)]}
        scores_meta = {}
        for score_name in sorted(rec.baseline_scores):
            fname = f"{stem}.score.{score_name}.f32"
            _write_tensor(os.path.join(out_dir, fname), rec.baseline_scores[score_name])
            scores_meta[score_name] = {"file": fname, "shape": [rec.num_channels]}
        meta = {
            "name": rec.name,
            "relative_depth": float(rec.relative_depth),
            "num_channels": rec.num_channels,
            "tensors": tensors,
        }
        if scores_meta:
            meta["baseline_scores"] = scores_meta
        layers_meta.append(meta)

    targets_meta = {}
    for name in sorted(bundle.targets):
        fname = _target_file_name(name)
        _write_tensor(os.path.join(out_dir, fname), bundle.targets[name])
        targets_meta[name] = {"file": fname, "shape": [int(len(bundle.targets[name]))]}

    manifest = {
        "manifest_version": MANIFEST_VERSION,
        "model_name": bundle.model_name,
        "seed": int(bundle.seed),
        "layers": layers_meta,
        "targets": targets_meta,
        "graph": {
            "edges": [[src, dst] for src, dst in bundle.graph.edges],
            "layer_kind": dict(bundle.graph.layer_kind),
            "coupling_groups": [list(g) for g in bundle.graph.coupling_groups],
            "spatial_sizes": {k: [int(a), int(b)] for k, (a, b) in bundle.graph.spatial_sizes.items()},
        },
    }
    manifest_path = os.path.join(out_dir, MANIFEST_NAME)
    _atomic_write_bytes(manifest_path, (json.dumps(manifest, indent=2, sort_keys=True) + "\n").encode("utf-8"))
    return manifest_path


def _check_acyclic(names, edges):
    indeg = {n: 0 for n in names}
    adj = {n: [] for n in names}
    for src, dst in edges:
        indeg[dst] += 1
        adj[src].append(dst)
    queue = [n for n in names if indeg[n] == 0]
    seen = 0
    while queue:
        node = queue.pop()
        seen += 1
        for nxt in adj[node]:
            indeg[nxt] -= 1
            if indeg[nxt] == 0:
                queue.append(nxt)
    if seen != len(names):
        raise BundleValidationError("graph edges contain a cycle", field="graph.edges")


def load_bundle(bundle_dir):
    """Load and validate a bundle directory; raises BundleValidationError on any defect."""
    manifest_path = os.path.join(bundle_dir, MANIFEST_NAME)
    if not os.path.isfile(manifest_path):
        raise BundleValidationError(f"no {MANIFEST_NAME} in '{bundle_dir}'")
    try:
        with open(manifest_path, "rb") as fh:
            manifest = json.loads(fh.read().decode("utf-8"))
    except (ValueError, UnicodeDecodeError) as exc:
        raise BundleValidationError(f"manifest does not parse: {exc}") from exc

    if manifest.get("manifest_version") != MANIFEST_VERSION:
        raise BundleValidationError(
            f"unsupported manifest_version {manifest.get('manifest_version')!r}", field="manifest_version"
        )
    model_name = manifest.get("model_name")
    if not isinstance(model_name, str) or not model_name:
        raise BundleValidationError("model_name must be a non-empty string", field="model_name")
    seed = manifest.get("seed")
    if not isinstance(seed, int):
        raise BundleValidationError("seed must be an integer", field="seed")

    layers_meta = manifest.get("layers")
    if not isinstance(layers_meta, list) or not layers_meta:
        raise BundleValidationError("layers must be a non-empty list", field="layers")

    layers = []
    batch = None
    seen_names = set()
    for meta in layers_meta:
        name = meta.get("name")
        if not isinstance(name, str) or not name:
            raise BundleValidationError("layer name must be a non-empty string", field="name")
        if name in seen_names:
            raise BundleValidationError("duplicate layer name", layer=name, field="name")
        seen_names.add(name)
        depth = meta.get("relative_depth")
        if not isinstance(depth, (int, float)) or not 0.0 <= float(depth) <= 1.0:
            raise BundleValidationError(f"relative_depth {depth!r} outside [0, 1]", layer=name, field="relative_depth")
        tensors = meta.get("tensors", {})
        for required in ("weight", "input_patches", "pooled_acts"):
            if required not in tensors:
                raise BundleValidationError("required tensor missing", layer=name, field=required)
        weight = _read_tensor(bundle_dir, tensors["weight"], layer=name, fieldname="weight")
        if weight.ndim != 2:
            raise BundleValidationError("weight must be 2-D [N, F]", layer=name, field="weight")
        n_ch, n_feat = weight.shape
        if meta.get("num_channels") != n_ch:
            raise BundleValidationError(
                f"num_channels {meta.get('num_channels')!r} != weight rows {n_ch}", layer=name, field="num_channels"
            )
        patches = _read_tensor(bundle_dir, tensors["input_patches"], layer=name, fieldname="input_patches")
        if patches.ndim != 2 or patches.shape[1] != n_feat:
            raise BundleValidationError(
                f"input_patches shape {tuple(patches.shape)} incompatible with weight [*, {n_feat}]",
                layer=name,
                field="input_patches",
            )
        if patches.shape[0] < 2:
            raise BundleValidationError("input_patches needs at least 2 rows", layer=name, field="input_patches")
        pooled = _read_tensor(bundle_dir, tensors["pooled_acts"], layer=name, fieldname="pooled_acts")
        if pooled.ndim != 2 or pooled.shape[1] != n_ch:
            raise BundleValidationError(
                f"pooled_acts shape {tuple(pooled.shape)} incompatible with {n_ch} channels",
                layer=name,
                field="pooled_acts",
            )
        if pooled.shape[0] < 2:
            raise BundleValidationError("pooled_acts needs at least 2 rows", layer=name, field="pooled_acts")
        if batch is None:
            batch = pooled.shape[0]
        elif pooled.shape[0] != batch:
            raise BundleValidationError(
                f"pooled_acts batch {pooled.shape[0]} != {batch} seen on earlier layers",
                layer=name,
                field="pooled_acts",
            )
        spatial = None
        if "spatial_acts" in tensors:
            spatial = _read_tensor(bundle_dir, tensors["spatial_acts"], layer=name, fieldname="spatial_acts")
            if spatial.ndim != 2 or spatial.shape[1] != n_ch:
                raise BundleValidationError(
                    f"spatial_acts shape {tuple(spatial.shape)} incompatible with {n_ch} channels",
                    layer=name,
                    field="spatial_acts",
                )
        scores = {}
        for score_name, entry in (meta.get("baseline_scores") or {}).items():
            vec = _read_tensor(bundle_dir, entry, layer=name, fieldname=f"baseline_scores.{score_name}")
            if vec.shape != (n_ch,):
                raise BundleValidationError(
                    f"baseline score '{score_name}' shape {tuple(vec.shape)} != ({n_ch},)",
                    layer=name,
                    field=f"baseline_scores.{score_name}",
                )
            scores[score_name] = vec
        layers.append(
            LayerRecord(
                name=name,
                relative_depth=float(depth),
                weight=weight,
                input_patches=patches,
                pooled_acts=pooled,
                spatial_acts=spatial,
                baseline_scores=scores,
            )
        )

    targets = {}
    for tname, entry in (manifest.get("targets") or {}).items():
        if not _TARGET_NAME_RE.match(tname):
            raise BundleValidationError(f"invalid target name {tname!r}", field="targets")
        vec = _read_tensor(bundle_dir, entry, layer=None, fieldname=f"targets.{tname}")
        if vec.shape != (batch,):
            raise BundleValidationError(
                f"target '{tname}' length {vec.shape} != batch {batch}", field=f"targets.{tname}"
            )
        targets[tname] = vec

    graph_meta = manifest.get("graph") or {}
    names = [rec.name for rec in layers]
    name_set = set(names)
    n_by_name = {rec.name: rec.num_channels for rec in layers}

    edges = []
    seen_edges = set()
    for pair in graph_meta.get("edges", []):
        if not isinstance(pair, (list, tuple)) or len(pair) != 2:
            raise BundleValidationError(f"edge {pair!r} is not a pair", field="graph.edges")
        src, dst = pair
        if src not in name_set or dst not in name_set:
            raise BundleValidationError(f"edge ({src!r}, {dst!r}) references unknown layer", field="graph.edges")
        if src == dst:
            raise BundleValidationError(f"self-edge on {src!r}", field="graph.edges")
        if (src, dst) in seen_edges:
            raise BundleValidationError(f"duplicate edge ({src!r}, {dst!r})", field="graph.edges")
        seen_edges.add((src, dst))
        edges.append((src, dst))
    _check_acyclic(names, edges)

    layer_kind = {}
    for lname, kind in (graph_meta.get("layer_kind") or {}).items():
        if lname not in name_set:
            raise BundleValidationError(f"layer_kind references unknown layer {lname!r}", field="graph.layer_kind")
        if kind not in LAYER_KINDS:
            raise BundleValidationError(f"unknown layer kind {kind!r}", layer=lname, field="graph.layer_kind")
        layer_kind[lname] = kind

    coupling = []
    for group in graph_meta.get("coupling_groups", []):
        if not isinstance(group, list) or len(group) < 2:
            raise BundleValidationError("coupling group needs at least 2 members", field="graph.coupling_groups")
        sizes = set()
        for member in group:
            if member not in name_set:
                raise BundleValidationError(
                    f"coupling group references unknown layer {member!r}", field="graph.coupling_groups"
                )
            sizes.add(n_by_name[member])
        if len(sizes) != 1:
            raise BundleValidationError(
                f"coupling group {group!r} mixes channel counts {sorted(sizes)}", field="graph.coupling_groups"
            )
        coupling.append(list(group))

    spatial_sizes = {}
    for lname, pair in (graph_meta.get("spatial_sizes") or {}).items():
        if lname not in name_set:
            raise BundleValidationError(f"spatial_sizes references unknown layer {lname!r}", field="graph.spatial_sizes")
        if not isinstance(pair, (list, tuple)) or len(pair) != 2 or any(int(v) < 1 for v in pair):
            raise BundleValidationError(f"spatial size {pair!r} must be two positive ints", layer=lname, field="graph.spatial_sizes")
        spatial_sizes[lname] = (int(pair[0]), int(pair[1]))

    graph = GraphSpec(edges=edges, layer_kind=layer_kind, coupling_groups=coupling, spatial_sizes=spatial_sizes)
    for lname, kind in layer_kind.items():
        if kind == "depthwise":
            producers = graph.producers(lname)
            if len(producers) != 1:
                raise BundleValidationError("depthwise layer needs exactly one producer", layer=lname, field="graph.edges")
            if n_by_name[producers[0]] != n_by_name[lname]:
                raise BundleValidationError(
                    "depthwise layer channel count must match its producer", layer=lname, field="graph.edges"
                )

    return TensorBundle(
        manifest_version=MANIFEST_VERSION,
        model_name=model_name,
        seed=seed,
        layers=layers,
        targets=targets,
        graph=graph,
    )


def bundle_fingerprint(bundle_dir):
    """sha256 over the manifest and every referenced tensor file, as hex."""
    manifest_path = os.path.join(bundle_dir, MANIFEST_NAME)
    digest = hashlib.sha256()
    with open(manifest_path, "rb") as fh:
        manifest_bytes = fh.read()
    digest.update(manifest_bytes)
    manifest = json.loads(manifest_bytes.decode("utf-8"))
    files = []
    for meta in manifest.get("layers", []):
        for entry in (meta.get("tensors") or {}).values():
            files.append(entry["file"])
        for entry in (meta.get("baseline_scores") or {}).values():
            files.append(entry["file"])
    for entry in (manifest.get("targets") or {}).values():
        files.append(entry["file"])
    for fname in sorted(files):
        path = os.path.join(bundle_dir, fname)
        with open(path, "rb") as fh:
            for chunk in iter(lambda: fh.read(1 << 20), b""):
                digest.update(chunk)
    return digest.hexdigest()


# ---------------------------------------------------------------------------
# Synthetic generation
# ---------------------------------------------------------------------------


@dataclass
class SynthLayerSpec:
    name: str
    num_channels: int
    relative_depth: float | None = None


@dataclass
class DuplicationRule:
    """Make channel `target` an exact linear combination of `sources` (same layer).

    Coefficients default to 1/sqrt(len(sources)) each, so a single source
    yields an exact duplicate and two sources yield the planted-average case.
    `jitter` adds that much fresh independent noise on top, for near- rather
    than exact duplicates.
    """

    layer: str
    target: int
    sources: list[int]
    coeffs: list[float] | None = None
    jitter: float = 0.0


@dataclass
class SynthSpec:
    """Configuration for synth_bundle. All randomness derives from `seed`."""

    layers: list[SynthLayerSpec]
    features: int = 24
    batch: int = 4096
    patches: int = 4096
    channel_basis: str = "random"  # "random" | "orthogonal"
    eig_decay: float = 1.0
    channel_noise: float = 0.1
    target_noise: float = 0.5
    target_alignment: float = 0.0
    readout_layers: list[str] | None = None
    duplication_plan: list[DuplicationRule] = field(default_factory=list)
    model_name: str = "synth"
    seed: int = 0

    @staticmethod
    def from_dict(raw):
        try:
            layers = [
                SynthLayerSpec(
                    name=str(entry["name"]),
                    num_channels=int(entry["num_channels"]),
                    relative_depth=entry.get("relative_depth"),
                )
                for entry in raw["layers"]
            ]
            plan = [
                DuplicationRule(
                    layer=str(rule["layer"]),
                    target=int(rule["target"]),
                    sources=[int(s) for s in rule["sources"]],
                    coeffs=[float(cv) for cv in rule["coeffs"]] if rule.get("coeffs") is not None else None,
                    jitter=float(rule.get("jitter", 0.0)),
                )
                for rule in raw.get("duplication_plan", [])
            ]
        except (KeyError, TypeError, ValueError) as exc:
            raise BundleValidationError(f"malformed synth spec: {exc}") from exc
        kwargs = {k: raw[k] for k in (
            "features", "batch", "patches", "channel_basis", "eig_decay", "channel_noise",
            "target_noise", "target_alignment", "readout_layers", "model_name", "seed",
        ) if k in raw}
        return SynthSpec(layers=layers, duplication_plan=plan, **kwargs)


def _validate_synth_spec(spec):
    if not spec.layers:
        raise BundleValidationError("synth spec needs at least one layer", field="layers")
    names = [ls.name for ls in spec.layers]
    if len(set(names)) != len(names):
        raise BundleValidationError("synth layer names must be unique", field="layers")
    for ls in spec.layers:
        if ls.num_channels < 2:
            raise BundleValidationError("num_channels must be >= 2", layer=ls.name, field="num_channels")
    for dim_name in ("features", "batch", "patches"):
        if getattr(spec, dim_name) < 2:
            raise BundleValidationError(f"{dim_name} must be >= 2", field=dim_name)
    if spec.channel_basis not in ("random", "orthogonal"):
        raise BundleValidationError(f"unknown channel_basis {spec.channel_basis!r}", field="channel_basis")
    if not 0.0 <= spec.target_alignment <= 1.0:
        raise BundleValidationError("target_alignment must lie in [0, 1]", field="target_alignment")
    if spec.channel_noise < 0 or spec.target_noise < 0:
        raise BundleValidationError("noise scales must be non-negative", field="channel_noise")
    if spec.readout_layers is not None:
        unknown = set(spec.readout_layers) - set(names)
        if unknown:
            raise BundleValidationError(f"readout_layers reference unknown layers {sorted(unknown)}", field="readout_layers")
    n_by_name = {ls.name: ls.num_channels for ls in spec.layers}
    used_targets = set()
    for rule in spec.duplication_plan:
        if rule.layer not in n_by_name:
            raise BundleValidationError(f"duplication rule references unknown layer {rule.layer!r}", field="duplication_plan")
        n = n_by_name[rule.layer]
        idxs = [rule.target, *rule.sources]
        if any(ix < 0 or ix >= n for ix in idxs):
            raise BundleValidationError(f"duplication indices {idxs} out of range for N={n}", layer=rule.layer, field="duplication_plan")
        if rule.target in rule.sources:
            raise BundleValidationError("duplication target cannot be its own source", layer=rule.layer, field="duplication_plan")
        if not rule.sources:
            raise BundleValidationError("duplication rule needs at least one source", layer=rule.layer, field="duplication_plan")
        key = (rule.layer, rule.target)
        if key in used_targets:
            raise BundleValidationError(f"channel {rule.target} is duplicated twice", layer=rule.layer, field="duplication_plan")
        used_targets.add(key)
        if rule.coeffs is not None and len(rule.coeffs) != len(rule.sources):
            raise BundleValidationError("coeffs length must match sources", layer=rule.layer, field="duplication_plan")
        if rule.jitter < 0:
            raise BundleValidationError("jitter must be non-negative", layer=rule.layer, field="duplication_plan")
    for rule in spec.duplication_plan:
        for src in rule.sources:
            if (rule.layer, src) in used_targets:
                raise BundleValidationError(
                    "duplication source is itself a duplication target", layer=rule.layer, field="duplication_plan"
                )


def _mix_matrices(spec):
    """Per-layer (mixer, jitter) pairs encoding the duplication plan."""
    out = {}
    for ls in spec.layers:
        n = ls.num_channels
        mixer = np.eye(n)
        jitter = np.zeros(n)
        for rule in spec.duplication_plan:
            if rule.layer != ls.name:
                continue
            coeffs = rule.coeffs
            if coeffs is None:
                coeffs = [1.0 / np.sqrt(len(rule.sources))] * len(rule.sources)
            mixer[rule.target] = 0.0
            for src, cv in zip(rule.sources, coeffs):
                mixer[rule.target, src] = cv
            jitter[rule.target] = rule.jitter
        out[ls.name] = (mixer, jitter)
    return out


def synth_bundle(spec, out_dir=None):
    """Build a synthetic bundle from a linear-Gaussian generator.

    Every layer reads the same latent input x ~ N(0, sigma_x). Layer L's
    channels are y = mixer @ (W0 x + noise) so the duplication plan holds
    exactly in the samples, not just in expectation. The target is
    readout . y (summed over readout layers) plus Gaussian noise. Returns
    (TensorBundle, LinearGaussianModel); the model describes the concatenated
    channel stack with layer_slices marking each layer's rows. When out_dir
    is given the bundle is also written there.
    """
    _validate_synth_spec(spec)
    f = spec.features
    rng_sigma = rng_for(spec.seed, 1)

    lam = (1.0 + np.arange(f)) ** (-float(spec.eig_decay))
    lam = lam * (f / lam.sum())
    basis, _ = np.linalg.qr(rng_sigma.standard_normal((f, f)))
    sigma_x = (basis * lam) @ basis.T
    sigma_x = 0.5 * (sigma_x + sigma_x.T)
    chol = np.linalg.cholesky(sigma_x + 1e-12 * np.eye(f))

    mixers = _mix_matrices(spec)
    n_layers = len(spec.layers)

    w_blocks = {}
    for li, ls in enumerate(spec.layers):
        rng_w = rng_for(spec.seed, 2, li)
        scale = np.exp(rng_w.normal(0.0, 0.5, size=ls.num_channels))
        if spec.channel_basis == "orthogonal":
            if ls.num_channels > f:
                raise BundleValidationError(
                    "orthogonal basis needs num_channels <= features", layer=ls.name, field="channel_basis"
                )
            order = np.argsort(lam)[::-1]
            w0 = basis[:, order[: ls.num_channels]].T.copy()
        else:
            w0 = rng_w.standard_normal((ls.num_channels, f)) / np.sqrt(f)
        mixer, _ = mixers[ls.name]
        w_blocks[ls.name] = mixer @ (w0 * scale[:, None])

    readout_names = spec.readout_layers if spec.readout_layers is not None else [ls.name for ls in spec.layers]
    readouts = {}
    for li, ls in enumerate(spec.layers):
        rng_r = rng_for(spec.seed, 3, li)
        base = rng_r.standard_normal(ls.num_channels)
        if ls.name not in readout_names:
            readouts[ls.name] = np.zeros(ls.num_channels)
            continue
        w_eff = w_blocks[ls.name]
        s = np.einsum("nf,fg,ng->n", w_eff, sigma_x, w_eff)
        power_weight = s / max(s.mean(), 1e-300)
        r = base * (1.0 - spec.target_alignment + spec.target_alignment * power_weight)
        mixer, jitter = mixers[ls.name]
        cov_l = w_eff @ sigma_x @ w_eff.T + (spec.channel_noise**2) * (mixer @ mixer.T + np.diag(jitter**2))
        denom = float(r @ cov_l @ r)
        readouts[ls.name] = r / np.sqrt(max(denom, 1e-300))

    # Samples: one latent draw shared by all layers, per-layer channel noise.
    rng_x = rng_for(spec.seed, 4)
    x = rng_x.standard_normal((spec.batch, f)) @ chol.T
    pooled = {}
    for li, ls in enumerate(spec.layers):
        rng_e = rng_for(spec.seed, 5, li)
        mixer, jitter = mixers[ls.name]
        noise = spec.channel_noise * (rng_e.standard_normal((spec.batch, ls.num_channels)) @ mixer.T)
        if np.any(jitter > 0):
            noise = noise + spec.channel_noise * jitter * rng_e.standard_normal((spec.batch, ls.num_channels))
        pooled[ls.name] = x @ w_blocks[ls.name].T + noise

    rng_t = rng_for(spec.seed, 6)
    t = sum(pooled[name] @ readouts[name] for name in pooled)
    t = t + spec.target_noise * rng_t.standard_normal(spec.batch)

    layers = []
    for li, ls in enumerate(spec.layers):
        rng_p = rng_for(spec.seed, 7, li)
        patches = rng_p.standard_normal((spec.patches, f)) @ chol.T
        depth = ls.relative_depth
        if depth is None:
            depth = li / (n_layers - 1) if n_layers > 1 else 0.0
        layers.append(
            LayerRecord(
                name=ls.name,
                relative_depth=float(depth),
                weight=np.asarray(w_blocks[ls.name], dtype="<f4"),
                input_patches=np.asarray(patches, dtype="<f4"),
                pooled_acts=np.asarray(pooled[ls.name], dtype="<f4"),
            )
        )

    graph = GraphSpec(
        edges=[],
        layer_kind={ls.name: "standard" for ls in spec.layers},
        coupling_groups=[],
        spatial_sizes={ls.name: (1, 1) for ls in spec.layers},
    )
    bundle = TensorBundle(
        manifest_version=MANIFEST_VERSION,
        model_name=spec.model_name,
        seed=spec.seed,
        layers=layers,
        targets={"synth": np.asarray(t, dtype="<f4")},
        graph=graph,
    )

    # Population model over the concatenated channel stack.
    w_all = np.vstack([w_blocks[ls.name] for ls in spec.layers])
    readout_all = np.concatenate([readouts[ls.name] for ls in spec.layers])
    offset = 0
    slices = {}
    total_n = sum(ls.num_channels for ls in spec.layers)
    mixer_all = np.zeros((total_n, total_n))
    jitter_all = np.zeros(total_n)
    for ls in spec.layers:
        mixer, jitter = mixers[ls.name]
        mixer_all[offset : offset + ls.num_channels, offset : offset + ls.num_channels] = mixer
        jitter_all[offset : offset + ls.num_channels] = jitter
        slices[ls.name] = slice(offset, offset + ls.num_channels)
        offset += ls.num_channels

    c = sigma_x @ w_all.T @ readout_all
    cov_y = w_all @ sigma_x @ w_all.T + (spec.channel_noise**2) * (
        mixer_all @ mixer_all.T + np.diag(jitter_all**2)
    )
    sigma_t_sq = float(readout_all @ cov_y @ readout_all + spec.target_noise**2)
    s_all = np.einsum("nf,fg,ng->n", w_all, sigma_x, w_all)
    positive = s_all[s_all > 0]
    sigma0_sq = float(np.median(positive)) if positive.size else 1.0

    model = LinearGaussianModel(
        sigma_x=sigma_x,
        w=w_all,
        c=c,
        sigma0_sq=sigma0_sq,
        sigma_t_sq=sigma_t_sq,
        readout=readout_all,
        noise_t=float(spec.target_noise),
        noise_scale=float(spec.channel_noise),
        noise_mixer=mixer_all,
        noise_jitter=jitter_all,
        layer_slices=slices,
    )

    if out_dir is not None:
        write_bundle(bundle, out_dir)
    return bundle, model
