"""Static SVG renderings of the analysis outputs.

Everything here is deterministic: a fixed input produces a byte-identical
SVG string, so plots can be checksummed alongside the CSV tables. The
drawings are deliberately plain (lines, rects, circles, text) and carry no
external dependencies.
"""

import os
import tempfile
from xml.sax.saxutils import escape

import numpy as np

from .errors import DataError

CLUSTER_COLORS = {
    "SD1": "#d62728",
    "SD2": "#ff7f0e",
    "SR1": "#1f77b4",
    "SR2": "#2ca02c",
}

_AXIS = "#444444"
_GRID = "#dddddd"
_BAR_DEFAULT = "#888888"
_FONT = "font-family=\"sans-serif\""


def _num(x):
    """Format a coordinate compactly but deterministically."""
    text = f"{float(x):.2f}"
    if text == "-0.00":
        text = "0.00"
    return text


def _val(x):
    """Format a data value for tick labels."""
    return f"{float(x):.4g}"


def _ticks(lo, hi, count=5):
    """Evenly spaced tick values including both ends."""
    if hi <= lo:
        hi = lo + 1.0
    return [lo + (hi - lo) * i / (count - 1) for i in range(count)]


def _svg_open(width, height):
    return (
        f"<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" "
        f"height=\"{height}\" viewBox=\"0 0 {width} {height}\">\n"
        f"<rect width=\"{width}\" height=\"{height}\" fill=\"white\"/>\n"
    )


def _text(x, y, s, size=10, anchor="middle", color="#222222", rotate=None):
    transform = ""
    if rotate is not None:
        transform = f" transform=\"rotate({rotate} {_num(x)} {_num(y)})\""
    return (
        f"<text x=\"{_num(x)}\" y=\"{_num(y)}\" font-size=\"{size}\" "
        f"text-anchor=\"{anchor}\" fill=\"{color}\" {_FONT}{transform}>{escape(str(s))}</text>\n"
    )


def _line(x1, y1, x2, y2, color=_AXIS, width=1.0):
    return (
        f"<line x1=\"{_num(x1)}\" y1=\"{_num(y1)}\" x2=\"{_num(x2)}\" y2=\"{_num(y2)}\" "
        f"stroke=\"{color}\" stroke-width=\"{width}\"/>\n"
    )


def save_svg(path, text):
    """Write an SVG atomically (temp file + rename)."""
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "w") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def label_colors(labels, clusters, palette=None):
    """Map each label to its cluster color; unknown labels get gray.

    ``clusters`` maps cluster name -> iterable of labels, as in
    ``tasks.CLUSTERS``.
    """
    palette = palette or CLUSTER_COLORS
    by_label = {}
    for name, members in clusters.items():
        for member in members:
            by_label[member] = palette.get(name, _BAR_DEFAULT)
    return [by_label.get(label, _BAR_DEFAULT) for label in labels]


def dendrogram_svg(dendrogram, labels=None, colors=None, width=640, height=420, title=None):
    """Draw a bottom-up dendrogram with leaves in the stored leaf order.

    ``labels`` names the original rows (defaults to their indices) and
    ``colors`` optionally colors each leaf label, index-aligned with
    ``labels``.
    """
    merges = dendrogram.merges
    n = len(merges) + 1
    order = dendrogram.leaf_order
    if labels is None:
        labels = list(range(n))
    if len(labels) != n:
        raise DataError(f"expected {n} labels, got {len(labels)}")
    if colors is not None and len(colors) != n:
        raise DataError(f"expected {n} colors, got {len(colors)}")

    left, right, top, bottom = 56.0, 16.0, 28.0, 40.0
    plot_w = width - left - right
    plot_h = height - top - bottom
    base_y = height - bottom
    y_max = max(m[2] for m in merges)
    if y_max <= 0.0:
        y_max = 1.0

    def to_y(value):
        return base_y - (value / y_max) * plot_h

    slot = {leaf: i for i, leaf in enumerate(order)}
    x_of = {leaf: left + (slot[leaf] + 0.5) * plot_w / n for leaf in order}
    y_of = {leaf: base_y for leaf in order}

    parts = [_svg_open(width, height)]
    if title:
        parts.append(_text(width / 2.0, 16, title, size=12))
    for tick in _ticks(0.0, y_max):
        y = to_y(tick)
        parts.append(_line(left, y, width - right, y, color=_GRID, width=0.5))
        parts.append(_text(left - 6, y + 3, _val(tick), size=9, anchor="end"))
    parts.append(_line(left, top, left, base_y))
    parts.append(_line(left, base_y, width - right, base_y))

    for step, (a, b, dist, _size) in enumerate(merges):
        xa, xb = x_of[a], x_of[b]
        ym = to_y(dist)
        parts.append(
            f"<path d=\"M {_num(xa)} {_num(y_of[a])} L {_num(xa)} {_num(ym)} "
            f"L {_num(xb)} {_num(ym)} L {_num(xb)} {_num(y_of[b])}\" "
            f"fill=\"none\" stroke=\"{_AXIS}\" stroke-width=\"1.2\" class=\"merge\"/>\n"
        )
        new_id = n + step
        x_of[new_id] = (xa + xb) / 2.0
        y_of[new_id] = ym

    for i, leaf in enumerate(order):
        color = colors[leaf] if colors is not None else "#222222"
        parts.append(_text(x_of[leaf], base_y + 14, labels[leaf], size=9, color=color))
    parts.append(_text(14, top + plot_h / 2.0, "merge distance", size=10, rotate=-90))
    parts.append("</svg>\n")
    return "".join(parts)


def pca_scatter_svg(result, labels, colors=None, width=480, height=480, title=None):
    """Scatter the first two principal-component projections.

    Each row becomes a labeled dot; ``colors`` (index-aligned with
    ``labels``) typically carries the four cluster colors.
    """
    proj = np.asarray(result.projections, dtype=np.float64)
    if proj.ndim != 2 or proj.shape[1] < 2:
        raise DataError(f"need at least 2 projection columns, got shape {proj.shape}")
    n = proj.shape[0]
    if len(labels) != n:
        raise DataError(f"expected {n} labels, got {len(labels)}")
    if colors is not None and len(colors) != n:
        raise DataError(f"expected {n} colors, got {len(colors)}")
    if colors is None:
        colors = [_BAR_DEFAULT] * n

    xs, ys = proj[:, 0], proj[:, 1]
    pad_x = 0.08 * (xs.max() - xs.min() or 1.0)
    pad_y = 0.08 * (ys.max() - ys.min() or 1.0)
    x_lo, x_hi = xs.min() - pad_x, xs.max() + pad_x
    y_lo, y_hi = ys.min() - pad_y, ys.max() + pad_y

    left, right, top, bottom = 56.0, 16.0, 28.0, 44.0
    plot_w = width - left - right
    plot_h = height - top - bottom

    def to_x(v):
        return left + (v - x_lo) / (x_hi - x_lo) * plot_w

    def to_y(v):
        return top + (y_hi - v) / (y_hi - y_lo) * plot_h

    ratios = np.asarray(result.explained_ratio, dtype=np.float64)
    parts = [_svg_open(width, height)]
    if title:
        parts.append(_text(width / 2.0, 16, title, size=12))
    for tick in _ticks(x_lo, x_hi):
        x = to_x(tick)
        parts.append(_line(x, top, x, top + plot_h, color=_GRID, width=0.5))
        parts.append(_text(x, top + plot_h + 14, _val(tick), size=9))
    for tick in _ticks(y_lo, y_hi):
        y = to_y(tick)
        parts.append(_line(left, y, left + plot_w, y, color=_GRID, width=0.5))
        parts.append(_text(left - 6, y + 3, _val(tick), size=9, anchor="end"))
    if x_lo < 0.0 < x_hi:
        parts.append(_line(to_x(0.0), top, to_x(0.0), top + plot_h, color="#bbbbbb", width=0.8))
    if y_lo < 0.0 < y_hi:
        parts.append(_line(left, to_y(0.0), left + plot_w, to_y(0.0), color="#bbbbbb", width=0.8))
    parts.append(_line(left, top, left, top + plot_h))
    parts.append(_line(left, top + plot_h, left + plot_w, top + plot_h))

    for i in range(n):
        x, y = to_x(xs[i]), to_y(ys[i])
        parts.append(
            f"<circle cx=\"{_num(x)}\" cy=\"{_num(y)}\" r=\"4\" fill=\"{colors[i]}\" "
            f"fill-opacity=\"0.85\" class=\"point\"/>\n"
        )
        parts.append(_text(x, y - 6, labels[i], size=9, color=colors[i]))

    parts.append(_text(left + plot_w / 2.0, height - 8, f"PC1 ({100.0 * ratios[0]:.1f}%)", size=10))
    parts.append(_text(14, top + plot_h / 2.0, f"PC2 ({100.0 * ratios[1]:.1f}%)", size=10, rotate=-90))
    parts.append("</svg>\n")
    return "".join(parts)


def slope_bars_svg(slopes, labels, colors=None, width=640, height=320, title=None):
    """Bar chart of per-task slopes; bars below the axis mark negative slopes."""
    values = np.asarray(slopes.slopes if hasattr(slopes, "slopes") else slopes, dtype=np.float64)
    if values.ndim != 1 or values.size == 0:
        raise DataError(f"slopes must be a non-empty vector, got shape {values.shape}")
    n = values.size
    if len(labels) != n:
        raise DataError(f"expected {n} labels, got {len(labels)}")
    if colors is not None and len(colors) != n:
        raise DataError(f"expected {n} colors, got {len(colors)}")
    if colors is None:
        colors = [_BAR_DEFAULT] * n

    left, right, top, bottom = 56.0, 16.0, 28.0, 40.0
    plot_w = width - left - right
    plot_h = height - top - bottom
    v_max = float(np.abs(values).max())
    if v_max <= 0.0:
        v_max = 1.0
    lo, hi = -v_max, v_max

    def to_y(v):
        return top + (hi - v) / (hi - lo) * plot_h

    zero_y = to_y(0.0)
    parts = [_svg_open(width, height)]
    if title:
        parts.append(_text(width / 2.0, 16, title, size=12))
    for tick in _ticks(lo, hi):
        y = to_y(tick)
        parts.append(_line(left, y, width - right, y, color=_GRID, width=0.5))
        parts.append(_text(left - 6, y + 3, _val(tick), size=9, anchor="end"))
    parts.append(_line(left, top, left, top + plot_h))
    parts.append(_line(left, zero_y, width - right, zero_y))

    step = plot_w / n
    bar_w = 0.7 * step
    for i, value in enumerate(values):
        x = left + (i + 0.5) * step - bar_w / 2.0
        y_val = to_y(float(value))
        y0, y1 = (y_val, zero_y) if value >= 0.0 else (zero_y, y_val)
        parts.append(
            f"<rect x=\"{_num(x)}\" y=\"{_num(y0)}\" width=\"{_num(bar_w)}\" "
            f"height=\"{_num(y1 - y0)}\" fill=\"{colors[i]}\" class=\"bar\"/>\n"
        )
        parts.append(_text(left + (i + 0.5) * step, top + plot_h + 14, labels[i], size=9))
    parts.append(_text(14, top + plot_h / 2.0, "accuracy-ratio slope", size=10, rotate=-90))
    parts.append("</svg>\n")
    return "".join(parts)
