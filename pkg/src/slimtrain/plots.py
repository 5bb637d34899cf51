"""Minimal SVG plots written straight from the run CSVs."""
import math

import numpy as np

_PALETTE = ["#440154", "#3b528b", "#21918c", "#5ec962", "#fde725"]
_SERIES = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"]


def _color(t):
    """Map ``t`` in [0, 1] onto a viridis-like ramp."""
    t = min(max(t, 0.0), 1.0) * (len(_PALETTE) - 1)
    i = min(int(t), len(_PALETTE) - 2)
    a = np.array([int(_PALETTE[i][j:j + 2], 16) for j in (1, 3, 5)])
    b = np.array([int(_PALETTE[i + 1][j:j + 2], 16) for j in (1, 3, 5)])
    rgb = np.rint(a + (t - i) * (b - a)).astype(int)
    return "#%02x%02x%02x" % tuple(rgb)


def _svg(width, height, body):
    return (f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
            f'viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="11">\n'
            f'<rect width="{width}" height="{height}" fill="white"/>\n'
            + "\n".join(body) + "\n</svg>\n")


def line_plot(series, title="", xlabel="", ylabel="", log_y=True, width=480, height=320):
    """``series`` maps a label to ``(x, y)``; non-finite or non-positive (log) points are skipped."""
    left, right, top, bottom = 60, 110, 30, 40
    pw, ph = width - left - right, height - top - bottom
    pts = {}
    for label, (x, y) in series.items():
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        ok = np.isfinite(x) & np.isfinite(y) & ((y > 0) if log_y else True)
        pts[label] = (x[ok], np.log10(y[ok]) if log_y else y[ok])
    xs = np.concatenate([p[0] for p in pts.values()] or [np.zeros(0)])
    ys = np.concatenate([p[1] for p in pts.values()] or [np.zeros(0)])
    body = [f'<text x="{width / 2}" y="18" text-anchor="middle">{title}</text>']
    if xs.size == 0:
        return _svg(width, height, body + ['<text x="20" y="60">no data</text>'])
    x0, x1 = xs.min(), max(xs.max(), xs.min() + 1e-12)
    y0, y1 = ys.min(), max(ys.max(), ys.min() + 1e-12)

    def px(x):
        return left + pw * (x - x0) / (x1 - x0)

    def py(y):
        return top + ph * (1 - (y - y0) / (y1 - y0))

    body.append(f'<rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="black"/>')
    for v in np.linspace(y0, y1, 5):
        lab = f"1e{v:.1f}" if log_y else f"{v:.3g}"
        body.append(f'<text x="{left - 4}" y="{py(v) + 4:.1f}" text-anchor="end">{lab}</text>')
    for v in np.linspace(x0, x1, 5):
        body.append(f'<text x="{px(v):.1f}" y="{top + ph + 14}" text-anchor="middle">{v:.3g}</text>')
    body.append(f'<text x="{left + pw / 2}" y="{height - 6}" text-anchor="middle">{xlabel}</text>')
    body.append(f'<text x="14" y="{top + ph / 2}" transform="rotate(-90 14 {top + ph / 2})" '
                f'text-anchor="middle">{ylabel}</text>')
    for i, (label, (x, y)) in enumerate(pts.items()):
        color = _SERIES[i % len(_SERIES)]
        if x.size:
            path = " ".join(f"{px(a):.1f},{py(b):.1f}" for a, b in zip(x, y))
            body.append(f'<polyline points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        ly = top + 14 * (i + 1)
        body.append(f'<line x1="{left + pw + 8}" y1="{ly}" x2="{left + pw + 24}" y2="{ly}" '
                    f'stroke="{color}" stroke-width="2"/>')
        body.append(f'<text x="{left + pw + 28}" y="{ly + 4}">{label}</text>')
    return _svg(width, height, body)


def heatmap(values, title="", xlabel="epoch", ylabel="iteration in epoch", cell=4):
    """Image of ``log10(values)`` (rows: iteration in epoch, columns: epoch).

    Non-positive or missing entries are drawn grey.
    """
    V = np.asarray(values, dtype=float)
    rows, cols = V.shape
    ok = np.isfinite(V) & (V > 0)
    logv = np.where(ok, np.log10(np.where(ok, V, 1.0)), np.nan)
    lo = np.nanmin(logv) if ok.any() else 0.0
    hi = np.nanmax(logv) if ok.any() else 1.0
    span = hi - lo if hi > lo else 1.0
    left, top = 50, 30
    w = max(cols * cell, 40)
    h = max(rows * cell, 40)
    sx, sy = w / cols, h / rows
    body = [f'<text x="{left + w / 2}" y="18" text-anchor="middle">{title}</text>']
    for i in range(rows):
        for j in range(cols):
            fill = _color((logv[i, j] - lo) / span) if ok[i, j] else "#bbbbbb"
            body.append(f'<rect x="{left + j * sx:.2f}" y="{top + i * sy:.2f}" width="{sx:.2f}" '
                        f'height="{sy:.2f}" fill="{fill}"/>')
    # colorbar
    bx = left + w + 16
    for k in range(50):
        body.append(f'<rect x="{bx}" y="{top + h * (1 - (k + 1) / 50):.2f}" width="12" '
                    f'height="{h / 50 + 0.5:.2f}" fill="{_color(k / 49)}"/>')
    body.append(f'<text x="{bx + 16}" y="{top + 8}">1e{hi:.1f}</text>')
    body.append(f'<text x="{bx + 16}" y="{top + h}">1e{lo:.1f}</text>')
    body.append(f'<text x="{left + w / 2}" y="{top + h + 18}" text-anchor="middle">{xlabel}</text>')
    body.append(f'<text x="14" y="{top + h / 2}" transform="rotate(-90 14 {top + h / 2})" '
                f'text-anchor="middle">{ylabel}</text>')
    return _svg(left + w + 90, top + h + 30, body)


def fold_by_epoch(epochs, values):
    """Arrange per-iteration values into an (iterations per epoch) x (epochs) array."""
    epochs = np.asarray(epochs, dtype=int)
    if epochs.size == 0:
        return np.full((1, 1), math.nan)
    uniq = np.unique(epochs)
    per = max(int(np.sum(epochs == e)) for e in uniq)
    out = np.full((per, uniq.size), math.nan)
    for j, e in enumerate(uniq):
        v = np.asarray(values, dtype=float)[epochs == e]
        out[:v.size, j] = v
    return out
