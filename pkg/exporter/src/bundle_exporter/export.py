"""Run a model over a fixed calibration subset and write its tensor bundle.

The capture is batch-sequential: one forward (and one gradient) pass per
batch, accumulating per-layer pooled and spatial activations, unfolded
input patches, first-order saliency, and the logit-derived target vectors.
Nothing here touches the engine; the bundle directory is the whole
interface.
"""

from dataclasses import dataclass, field

import numpy as np
import torch
from torch.nn import functional as F

from .errors import ExportError
from .models import REGISTRY, build_model, calibration_source
from .trace import select_layers, trace_model
from .writer import write_bundle_dir

STAGES = ("preBN", "postBN")
SCORE_NAMES = ("taylor", "act_rms", "bn_scale")

_PATCH_NOTE = (
    "input_patches are a uniform random subsample of the unfolded patch rows "
    "(seeded, without replacement); conv bias terms, when present, are not part "
    "of the flattened weights"
)


@dataclass(frozen=True)
class ExportConfig:
    """What to capture: model, calibration subset, hook stage, and caps.

    Calibration indices are deduplicated and sorted on construction, so two
    configs naming the same image set compare equal. ``layers`` limits the
    export to a subset of the model's convolutions (None takes all of
    them); ``data`` points at an .npz overriding the builtin calibration
    images.
    """

    model: str
    calib_indices: tuple
    ckpt: str = None
    stage: str = "preBN"
    patch_cap: int = 1024
    layers: tuple = None
    scores: tuple = ("taylor", "act_rms")
    seed: int = 0
    batch_size: int = 32
    data: str = None

    def __post_init__(self):
        if self.stage not in STAGES:
            raise ExportError(f"unknown stage '{self.stage}'; choose one of {', '.join(STAGES)}")
        if self.patch_cap < 2:
            raise ExportError(f"patch cap must keep at least 2 rows, got {self.patch_cap}")
        if self.batch_size < 1:
            raise ExportError("batch size must be positive")
        try:
            indices = tuple(sorted({int(i) for i in self.calib_indices}))
        except (TypeError, ValueError) as exc:
            raise ExportError(f"calibration indices must be integers: {exc}") from exc
        if len(indices) < 2:
            raise ExportError("need at least 2 distinct calibration indices")
        if indices[0] < 0:
            raise ExportError(f"calibration index {indices[0]} is negative")
        object.__setattr__(self, "calib_indices", indices)
        for name in self.scores:
            if name not in SCORE_NAMES:
                raise ExportError(f"unknown score '{name}'; available: {', '.join(SCORE_NAMES)}")
        object.__setattr__(self, "scores", tuple(self.scores))
        if self.layers is not None:
            object.__setattr__(self, "layers", tuple(self.layers))


@dataclass
class _LayerCapture:
    pooled: list = field(default_factory=list)
    spatial: list = field(default_factory=list)
    patches: list = field(default_factory=list)
    taylor: list = field(default_factory=list)
    sq_sum: np.ndarray = None
    positions: int = 0
    spatial_size: tuple = None


def _patch_rows(conv, x):
    cols = F.unfold(x, kernel_size=conv.kernel_size, dilation=conv.dilation, padding=conv.padding, stride=conv.stride)
    b, cf, length = cols.shape
    f_per_group = cf // conv.groups
    cols = cols.reshape(b, conv.groups, f_per_group, length)
    return cols.permute(0, 1, 3, 2).reshape(-1, f_per_group)


def _run_capture(config):
    """One pass over the calibration subset; returns everything a bundle needs."""
    model, _ = build_model(config.model, ckpt=config.ckpt)
    plan = trace_model(model)
    if not plan.layers:
        raise ExportError(f"model '{config.model}' has no exportable convolutions")
    selected = select_layers(plan, model, config.layers)
    if not selected:
        raise ExportError("no layers selected")
    if "bn_scale" in config.scores:
        for name in selected:
            if not plan.layer(name).bn:
                raise ExportError(
                    f"bn_scale requested but layer '{name}' of model '{config.model}' "
                    "has no trailing BatchNorm"
                )

    images, labels = calibration_source(config.model, config.data)
    if config.calib_indices[-1] >= len(images):
        raise ExportError(
            f"calibration index {config.calib_indices[-1]} out of range "
            f"(calibration set holds {len(images)} images)"
        )
    images = torch.from_numpy(images[list(config.calib_indices)])
    labels = torch.from_numpy(labels[list(config.calib_indices)])

    modules = dict(model.named_modules())
    caps = {name: _LayerCapture() for name in selected}
    conv_input = {}
    acts = {}
    hooks = []

    def conv_hook(name, grab_output):
        def hook(_mod, args, out):
            conv_input[name] = args[0]
            if grab_output:
                acts[name] = out

        return hook

    def bn_hook(name):
        def hook(_mod, _args, out):
            acts[name] = out

        return hook

    for name in selected:
        bn = plan.layer(name).bn
        use_bn = bool(bn) and config.stage == "postBN"
        hooks.append(modules[name].register_forward_hook(conv_hook(name, not use_bn)))
        if use_bn:
            hooks.append(modules[bn].register_forward_hook(bn_hook(name)))

    logits_parts = []
    try:
        for start in range(0, len(images), config.batch_size):
            xb = images[start : start + config.batch_size]
            yb = labels[start : start + config.batch_size]
            conv_input.clear()
            acts.clear()
            logits = model(xb)
            loss = F.cross_entropy(logits, yb)
            grads = torch.autograd.grad(loss, [acts[n] for n in selected])
            logits_parts.append(logits.detach())
            for name, grad in zip(selected, grads):
                cap = caps[name]
                act = acts[name].detach()
                n_ch = act.shape[1]
                cap.pooled.append(act.mean(dim=(2, 3)).numpy())
                cap.spatial.append(act.permute(0, 2, 3, 1).reshape(-1, n_ch).numpy())
                cap.patches.append(_patch_rows(modules[name], conv_input[name].detach()).numpy())
                cap.taylor.append((act * grad).sum(dim=(0, 2, 3)).abs().numpy())
                sq = (act**2).sum(dim=(0, 2, 3)).numpy()
                cap.sq_sum = sq if cap.sq_sum is None else cap.sq_sum + sq
                cap.positions += act.shape[0] * act.shape[2] * act.shape[3]
                cap.spatial_size = (int(act.shape[2]), int(act.shape[3]))
    finally:
        for handle in hooks:
            handle.remove()

    logits = torch.cat(logits_parts)
    return model, plan, selected, caps, logits, labels


def _targets(logits, labels):
    """Per-image scalars derived from logits and labels, float32 each."""
    correct = logits[torch.arange(len(labels)), labels]
    top2 = logits.topk(2, dim=1).values
    masked = logits.clone()
    masked[torch.arange(len(labels)), labels] = float("-inf")
    neg_loss = -F.cross_entropy(logits, labels, reduction="none")
    vectors = {
        "gt_margin": correct - masked.max(dim=1).values,
        "pred_margin": top2[:, 0] - top2[:, 1],
        "correct_logit": correct,
        "pred_logit": top2[:, 0],
        "neg_loss": neg_loss,
    }
    return {name: vec.numpy().astype(np.float32) for name, vec in vectors.items()}


def _layer_scores(config, plan, modules, name, cap):
    out = {}
    if "taylor" in config.scores:
        out["taylor"] = np.mean(cap.taylor, axis=0)
    if "act_rms" in config.scores:
        out["act_rms"] = np.sqrt(cap.sq_sum / cap.positions)
    if "bn_scale" in config.scores:
        out["bn_scale"] = np.abs(modules[plan.layer(name).bn].weight.detach().numpy())
    return out


def export_baseline_scores(config):
    """Just the per-channel score vectors, keyed layer then score name."""
    model, plan, selected, caps, _, _ = _run_capture(config)
    modules = dict(model.named_modules())
    return {name: _layer_scores(config, plan, modules, name, caps[name]) for name in selected}


def export_bundle(config, out_dir):
    """Capture per ``config`` and write the bundle directory; returns out_dir."""
    model, plan, selected, caps, logits, labels = _run_capture(config)
    modules = dict(model.named_modules())
    all_names = plan.names()
    depth_span = max(len(all_names) - 1, 1)

    layers = []
    spatial_sizes = {}
    for name in selected:
        cap = caps[name]
        conv = modules[name]
        weight = conv.weight.detach().reshape(conv.out_channels, -1).numpy()
        patches = np.concatenate(cap.patches)
        if len(patches) > config.patch_cap:
            rng = np.random.default_rng((config.seed, all_names.index(name)))
            keep = np.sort(rng.choice(len(patches), size=config.patch_cap, replace=False))
            patches = patches[keep]
        layers.append(
            {
                "name": name,
                "relative_depth": all_names.index(name) / depth_span,
                "weight": weight,
                "input_patches": patches,
                "pooled_acts": np.concatenate(cap.pooled),
                "spatial_acts": np.concatenate(cap.spatial),
                "baseline_scores": _layer_scores(config, plan, modules, name, cap),
            }
        )
        spatial_sizes[name] = cap.spatial_size

    keep_set = set(selected)
    groups = []
    for group in plan.coupling_groups:
        trimmed = [n for n in group if n in keep_set]
        if len(trimmed) >= 2:
            groups.append(trimmed)
    graph = {
        "edges": [(s, d) for s, d in plan.edges if s in keep_set and d in keep_set],
        "layer_kind": {name: plan.layer(name).kind for name in selected},
        "coupling_groups": groups,
        "spatial_sizes": spatial_sizes,
    }
    export_info = {
        "stage": config.stage,
        "model": config.model,
        "images": int(len(labels)),
        "patch_cap": int(config.patch_cap),
        "patch_seed": int(config.seed),
        "note": _PATCH_NOTE,
    }
    return write_bundle_dir(
        out_dir,
        model_name=config.model,
        seed=config.seed,
        layers=layers,
        targets=_targets(logits, labels),
        graph=graph,
        export_info=export_info,
    )


def available_models():
    return sorted(REGISTRY)
