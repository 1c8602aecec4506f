"""Static SVG rendering of the headline report shapes.

Plots are standalone SVG 1.1 documents built from text and path elements
only, so tests can parse coordinates without an image library and output
bytes are deterministic for fixed input. The data-to-pixel transform is the
plain affine map from the data min/max onto the plot box (no padding), and
all coordinates are formatted with two decimals.

Kinds: scatter_axes (per-channel axis scatter), ari_null (observed ARIs vs
a permutation null band), depth_profiles (metric means over relative
depth), prune_curves (retention vs FLOPs fraction), trajectory (coupling
and gradient-cosine diagnostics over training steps).
"""

import math

from .reports import canonical_json

PLOT_KINDS = ("scatter_axes", "ari_null", "depth_profiles", "prune_curves", "trajectory")

WIDTH = 640
HEIGHT = 440
BOX = (60.0, 30.0, 600.0, 390.0)  # left, top, right, bottom

PALETTE = (
    "#1f77b4",
    "#d62728",
    "#2ca02c",
    "#9467bd",
    "#ff7f0e",
    "#8c564b",
    "#17becf",
    "#7f7f7f",
)

_TEXT = '<text x="{x}" y="{y}" font-family="sans-serif" font-size="{size}" fill="#333"{extra}>{s}</text>'


def _fmt(v):
    return f"{float(v):.2f}"


def _span(values):
    lo, hi = min(values), max(values)
    if hi == lo:
        lo, hi = lo - 0.5, hi + 0.5
    return float(lo), float(hi)


class _Frame:
    """Affine data-to-pixel transform over the plot box."""

    def __init__(self, xs, ys, box=BOX):
        self.left, self.top, self.right, self.bottom = box
        self.x_lo, self.x_hi = _span(xs)
        self.y_lo, self.y_hi = _span(ys)

    def x(self, v):
        frac = (float(v) - self.x_lo) / (self.x_hi - self.x_lo)
        return self.left + frac * (self.right - self.left)

    def y(self, v):
        frac = (float(v) - self.y_lo) / (self.y_hi - self.y_lo)
        return self.bottom - frac * (self.bottom - self.top)


def _path(d, stroke, width=1.5, fill="none", dash=None, opacity=None):
    extra = ""
    if dash:
        extra += f' stroke-dasharray="{dash}"'
    if opacity is not None:
        extra += f' fill-opacity="{opacity}"'
    return f'<path d="{d}" stroke="{stroke}" stroke-width="{width}" fill="{fill}"{extra}/>'


def _text(x, y, s, size=11, anchor=None, rotate=None):
    extra = ""
    if anchor:
        extra += f' text-anchor="{anchor}"'
    if rotate is not None:
        extra += f' transform="rotate({rotate} {_fmt(x)} {_fmt(y)})"'
    return _TEXT.format(x=_fmt(x), y=_fmt(y), size=size, extra=extra, s=s)


def _line_d(points):
    return " ".join(("M" if k == 0 else "L") + f" {_fmt(x)},{_fmt(y)}" for k, (x, y) in enumerate(points))


def _cross_d(x, y, r=3.0):
    return f"M {_fmt(x - r)},{_fmt(y)} L {_fmt(x + r)},{_fmt(y)} M {_fmt(x)},{_fmt(y - r)} L {_fmt(x)},{_fmt(y + r)}"


def _axes(frame, x_label, y_label, n_ticks=5):
    parts = [
        _path(
            f"M {_fmt(frame.left)},{_fmt(frame.top)} L {_fmt(frame.left)},{_fmt(frame.bottom)} "
            f"L {_fmt(frame.right)},{_fmt(frame.bottom)}",
            "#333",
            1.0,
        )
    ]
    for k in range(n_ticks):
        fx = frame.x_lo + (frame.x_hi - frame.x_lo) * k / (n_ticks - 1)
        px = frame.x(fx)
        parts.append(_path(f"M {_fmt(px)},{_fmt(frame.bottom)} L {_fmt(px)},{_fmt(frame.bottom + 4)}", "#333", 1.0))
        parts.append(_text(px, frame.bottom + 16, f"{fx:.4g}", size=10, anchor="middle"))
        fy = frame.y_lo + (frame.y_hi - frame.y_lo) * k / (n_ticks - 1)
        py = frame.y(fy)
        parts.append(_path(f"M {_fmt(frame.left - 4)},{_fmt(py)} L {_fmt(frame.left)},{_fmt(py)}", "#333", 1.0))
        parts.append(_text(frame.left - 6, py + 3, f"{fy:.4g}", size=10, anchor="end"))
    parts.append(_text((frame.left + frame.right) / 2, frame.bottom + 32, x_label, anchor="middle"))
    parts.append(_text(16, (frame.top + frame.bottom) / 2, y_label, anchor="middle", rotate=-90))
    return parts


def _legend(frame, names):
    parts = []
    for k, name in enumerate(names):
        color = PALETTE[k % len(PALETTE)]
        y = frame.top + 12 + 14 * k
        parts.append(_path(f"M {_fmt(frame.right - 110)},{_fmt(y - 3)} L {_fmt(frame.right - 96)},{_fmt(y - 3)}", color, 2.0))
        parts.append(_text(frame.right - 92, y, name, size=10))
    return parts


def _no_data(title):
    return [
        _text(WIDTH / 2, HEIGHT / 2, "no data", size=16, anchor="middle"),
        _text(WIDTH / 2, 20, title, anchor="middle"),
    ]


def _line_chart(series, x_label, y_label, title, box=BOX, markers=False):
    series = [s for s in series if len(s.get("x", [])) > 0]
    if not series:
        return _no_data(title)
    xs = [v for s in series for v in s["x"]]
    ys = [v for s in series for v in s["y"]]
    frame = _Frame(xs, ys, box=box)
    parts = _axes(frame, x_label, y_label)
    parts.append(_text((frame.left + frame.right) / 2, frame.top - 10, title, anchor="middle"))
    for k, s in enumerate(series):
        color = PALETTE[k % len(PALETTE)]
        points = [(frame.x(x), frame.y(y)) for x, y in zip(s["x"], s["y"])]
        parts.append(_path(_line_d(points), color))
        if markers:
            for px, py in points:
                parts.append(_path(_cross_d(px, py), color, 1.0))
    parts.extend(_legend(frame, [s["name"] for s in series]))
    return parts


def _render_scatter_axes(data):
    points = data.get("points", [])
    title = data.get("title", "channel axes")
    if not points:
        return _no_data(title)
    frame = _Frame([p["x"] for p in points], [p["y"] for p in points])
    parts = _axes(frame, data.get("x_label", "local axis (nats)"), data.get("y_label", "task MI (nats)"))
    parts.append(_text((frame.left + frame.right) / 2, frame.top - 10, title, anchor="middle"))
    groups = []
    for p in points:
        g = p.get("group", "")
        if g not in groups:
            groups.append(g)
    for p in points:
        color = PALETTE[groups.index(p.get("group", "")) % len(PALETTE)]
        parts.append(_path(_cross_d(frame.x(p["x"]), frame.y(p["y"])), color, 1.0))
    if groups != [""]:
        parts.extend(_legend(frame, groups))
    return parts


def _render_ari_null(data):
    observed = data.get("observed", [])
    title = data.get("title", "ARI vs permutation null")
    if not observed:
        return _no_data(title)
    lo, hi = data["null_lo"], data["null_hi"]
    frame = _Frame(list(observed) + [lo, hi, data["null_mean"]], [0.0, 1.0])
    parts = _axes(frame, data.get("x_label", "ARI"), "")
    parts.append(_text((frame.left + frame.right) / 2, frame.top - 10, title, anchor="middle"))
    x0, x1 = frame.x(lo), frame.x(hi)
    band = (
        f"M {_fmt(x0)},{_fmt(frame.top)} L {_fmt(x1)},{_fmt(frame.top)} "
        f"L {_fmt(x1)},{_fmt(frame.bottom)} L {_fmt(x0)},{_fmt(frame.bottom)} Z"
    )
    parts.append(_path(band, "none", 0.0, fill="#bbbbbb", opacity=0.4))
    xm = frame.x(data["null_mean"])
    parts.append(_path(f"M {_fmt(xm)},{_fmt(frame.top)} L {_fmt(xm)},{_fmt(frame.bottom)}", "#666", 1.0, dash="4 3"))
    for k, v in enumerate(observed):
        y = 0.1 + 0.8 * (k + 0.5) / len(observed)
        parts.append(_path(_cross_d(frame.x(v), frame.y(y)), PALETTE[0], 1.2))
    parts.append(_text(xm, frame.top - 2, "null mean", size=9, anchor="middle"))
    return parts


def _render_trajectory(data):
    rows = data.get("rows", [])
    title = data.get("title", "training trajectory")
    if not rows:
        return _no_data(title)
    top_box = (BOX[0], 30.0, BOX[2], 195.0)
    bottom_box = (BOX[0], 245.0, BOX[2], 390.0)

    def series_for(key):
        # Cosine columns can be undefined at a snapshot (zero gradients);
        # such cells are skipped rather than poisoning the axis range.
        xs, ys = [], []
        for r in rows:
            try:
                y = float(r[key])
            except (TypeError, ValueError):
                continue
            if math.isfinite(y):
                xs.append(r["step"])
                ys.append(y)
        return {"name": key, "x": xs, "y": ys}

    unitless = [series_for(k) for k in ("coupling", "cos_ix_it", "cos_update_ix", "cos_update_it")]
    nats = [series_for(k) for k in ("mean_I_X", "mean_I_TY")]
    parts = _line_chart(unitless, "step", "rank corr / cosine", title, box=top_box)
    parts.extend(_line_chart(nats, "step", "nats", "", box=bottom_box))
    return parts


def render_plot(kind, data, manifest=None):
    """Render one report payload to a complete SVG document string."""
    if kind == "scatter_axes":
        body = _render_scatter_axes(data)
    elif kind == "ari_null":
        body = _render_ari_null(data)
    elif kind == "depth_profiles":
        body = _line_chart(
            data.get("series", []),
            data.get("x_label", "relative depth"),
            data.get("y_label", "nats"),
            data.get("title", "depth profiles"),
            markers=True,
        )
    elif kind == "prune_curves":
        body = _line_chart(
            data.get("series", []),
            data.get("x_label", "FLOPs fraction"),
            data.get("y_label", "population retention"),
            data.get("title", "pruning curves"),
            markers=True,
        )
    elif kind == "trajectory":
        body = _render_trajectory(data)
    else:
        raise ValueError(f"unknown plot kind: {kind!r}; expected one of {PLOT_KINDS}")
    desc = ""
    if manifest is not None:
        desc = "<desc>" + canonical_json(manifest.as_dict()) + "</desc>"
    return (
        '<?xml version="1.0" encoding="UTF-8"?>\n'
        f'<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{WIDTH}" height="{HEIGHT}" '
        f'viewBox="0 0 {WIDTH} {HEIGHT}">'
        + desc
        + f'<path d="M 0,0 L {WIDTH},0 L {WIDTH},{HEIGHT} L 0,{HEIGHT} Z" stroke="none" fill="#ffffff"/>'
        + "".join(body)
        + "</svg>\n"
    )
