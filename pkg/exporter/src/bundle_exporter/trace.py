"""Connectivity extraction by symbolic tracing.

For every convolution we need to know which earlier convolutions own the
channel dimension of its input. Walking the traced graph once and
propagating that ownership through channel-preserving ops gives the
producer/consumer edges; elementwise adds tie the channel counts of their
operands' owners together (residual coupling), and a depthwise convolution
ties to its single producer the same way.
"""

import operator
from dataclasses import dataclass

import torch
from torch import nn
from torch.fx import symbolic_trace
from torch.nn import functional as F

from .errors import UnsupportedLayerError

_PASS_MODULES = (
    nn.BatchNorm2d,
    nn.ReLU,
    nn.MaxPool2d,
    nn.AvgPool2d,
    nn.AdaptiveAvgPool2d,
    nn.Dropout,
    nn.Identity,
)
_PASS_FUNCTIONS = {F.relu, torch.relu, F.max_pool2d, F.avg_pool2d, F.gelu, torch.sigmoid, torch.tanh}
_ADD_FUNCTIONS = {operator.add, operator.iadd, torch.add}
_PASS_METHODS = {"relu", "contiguous", "clone"}


@dataclass(frozen=True)
class LayerPlan:
    name: str
    kind: str
    bn: str


@dataclass(frozen=True)
class ModelPlan:
    """All exportable convolutions in forward order, plus their wiring."""

    layers: tuple
    edges: tuple
    coupling_groups: tuple

    def names(self):
        return [lp.name for lp in self.layers]

    def layer(self, name):
        for lp in self.layers:
            if lp.name == name:
                return lp
        raise KeyError(name)


def _conv_kind(name, mod):
    if mod.groups == 1:
        return "standard"
    if mod.groups == mod.in_channels == mod.out_channels:
        return "depthwise"
    raise UnsupportedLayerError(
        f"layer '{name}': grouped convolution with groups={mod.groups} is not supported "
        "(standard and depthwise only)"
    )


def _node_sources(node, sources):
    """Union of channel owners over every graph-node argument."""
    out = frozenset()
    stack = list(node.args) + list(node.kwargs.values())
    while stack:
        arg = stack.pop()
        if isinstance(arg, (tuple, list)):
            stack.extend(arg)
        elif isinstance(arg, torch.fx.Node):
            out = out | sources.get(arg, frozenset())
    return out


def _merge_groups(groups):
    """Merge coupling groups that share a member; adds can chain."""
    merged = []
    for group in groups:
        group = set(group)
        keep = []
        for old in merged:
            if old & group:
                group |= old
            else:
                keep.append(old)
        keep.append(group)
        merged = keep
    return tuple(tuple(sorted(g)) for g in merged)


def trace_model(model):
    """Walk the traced graph and return the exportable-layer plan.

    Unsupported layer kinds raise only when they would have to be captured;
    a Linear head or a flatten simply ends channel ownership, it does not
    fail the trace.
    """
    gm = symbolic_trace(model)
    modules = dict(gm.named_modules())
    sources = {}
    layers = []
    edges = []
    groups = []

    for node in gm.graph.nodes:
        if node.op == "call_module":
            mod = modules[node.target]
            if isinstance(mod, nn.Conv2d):
                kind = _conv_kind(node.target, mod)
                feeds = _node_sources(node, sources)
                for src in sorted(feeds):
                    edges.append((src, node.target))
                if kind == "depthwise":
                    if len(feeds) != 1:
                        raise UnsupportedLayerError(
                            f"layer '{node.target}': depthwise convolution needs exactly one "
                            f"producing convolution, found {len(feeds)}"
                        )
                    groups.append((next(iter(feeds)), node.target))
                bn = ""
                users = list(node.users)
                if len(users) == 1 and users[0].op == "call_module":
                    follower = modules.get(users[0].target)
                    if isinstance(follower, nn.BatchNorm2d):
                        bn = users[0].target
                layers.append(LayerPlan(name=node.target, kind=kind, bn=bn))
                sources[node] = frozenset({node.target})
            elif isinstance(mod, _PASS_MODULES):
                sources[node] = _node_sources(node, sources)
            else:
                sources[node] = frozenset()
        elif node.op == "call_function":
            if node.target in _ADD_FUNCTIONS:
                joined = _node_sources(node, sources)
                if len(joined) >= 2:
                    groups.append(tuple(sorted(joined)))
                sources[node] = joined
            elif node.target in _PASS_FUNCTIONS:
                sources[node] = _node_sources(node, sources)
            else:
                sources[node] = frozenset()
        elif node.op == "call_method":
            sources[node] = _node_sources(node, sources) if node.target in _PASS_METHODS else frozenset()
        else:
            sources[node] = frozenset()

    return ModelPlan(layers=tuple(layers), edges=tuple(edges), coupling_groups=_merge_groups(groups))


def select_layers(plan, model, requested):
    """Validate a layer subset against the plan, naming anything unusable."""
    if requested is None:
        return list(plan.names())
    known = set(plan.names())
    modules = dict(model.named_modules())
    picked = []
    for name in requested:
        if name in known:
            if name not in picked:
                picked.append(name)
            continue
        if name in modules:
            raise UnsupportedLayerError(
                f"layer '{name}': {type(modules[name]).__name__} is not exportable (convolutions only)"
            )
        raise UnsupportedLayerError(f"unknown layer '{name}'; exportable: {', '.join(plan.names())}")
    return [n for n in plan.names() if n in picked]
