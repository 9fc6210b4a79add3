"""Plain-text SVG charts (line, bar and scatter).

Output is a deterministic function of the input (fixed number formatting,
no timestamps), so identical data gives identical bytes.
"""
from __future__ import annotations

import math
from xml.sax.saxutils import escape

W, H = 640, 400
ML, MR, MT, MB = 70, 20, 40, 50
COLORS = ("#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f")


def _f(v):
    return f"{v:.2f}"


def _range(values):
    vals = [v for v in values if math.isfinite(v)]
    if not vals:
        return 0.0, 1.0
    lo, hi = min(vals), max(vals)
    if hi == lo:
        pad = abs(lo) * 0.05 or 0.5
        return lo - pad, hi + pad
    pad = 0.05 * (hi - lo)
    return lo - pad, hi + pad


class _Frame:
    def __init__(self, xr, yr, title, xlabel="", ylabel=""):
        self.x0, self.x1 = xr
        self.y0, self.y1 = yr
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">',
            f'<rect width="{W}" height="{H}" fill="white"/>',
            f'<text x="{W / 2}" y="22" text-anchor="middle" font-family="sans-serif" font-size="15">{escape(title)}</text>',
            f'<rect x="{ML}" y="{MT}" width="{W - ML - MR}" height="{H - MT - MB}" fill="none" stroke="#333"/>',
        ]
        for i in range(5):
            fx = self.x0 + (self.x1 - self.x0) * i / 4
            fy = self.y0 + (self.y1 - self.y0) * i / 4
            self.parts.append(f'<text x="{_f(self.px(fx))}" y="{H - MB + 16}" text-anchor="middle" '
                              f'font-family="sans-serif" font-size="10">{fx:.4g}</text>')
            self.parts.append(f'<text x="{ML - 6}" y="{_f(self.py(fy) + 3)}" text-anchor="end" '
                              f'font-family="sans-serif" font-size="10">{fy:.4g}</text>')
        if xlabel:
            self.parts.append(f'<text x="{W / 2}" y="{H - 10}" text-anchor="middle" font-family="sans-serif" '
                              f'font-size="12">{escape(xlabel)}</text>')
        if ylabel:
            self.parts.append(f'<text x="14" y="{H / 2}" text-anchor="middle" font-family="sans-serif" '
                              f'font-size="12" transform="rotate(-90 14 {H / 2})">{escape(ylabel)}</text>')

    def px(self, x):
        return ML + (x - self.x0) / (self.x1 - self.x0) * (W - ML - MR)

    def py(self, y):
        return H - MB - (y - self.y0) / (self.y1 - self.y0) * (H - MT - MB)

    def legend(self, names):
        for i, name in enumerate(names):
            c = COLORS[i % len(COLORS)]
            y = MT + 14 + 14 * i
            self.parts.append(f'<rect x="{W - MR - 150}" y="{y - 8}" width="10" height="10" fill="{c}"/>')
            self.parts.append(f'<text x="{W - MR - 135}" y="{y + 1}" font-family="sans-serif" '
                              f'font-size="11">{escape(name)}</text>')

    def done(self):
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def line_plot(series, title, xlabel="", ylabel=""):
    """``series`` maps a name to ``(xs, ys)``; non-finite points are skipped."""
    xs = [x for v in series.values() for x in v[0]]
    ys = [y for v in series.values() for y in v[1]]
    fr = _Frame(_range(xs), _range(ys), title, xlabel, ylabel)
    for i, (name, (x, y)) in enumerate(series.items()):
        pts = " ".join(f"{_f(fr.px(a))},{_f(fr.py(b))}" for a, b in zip(x, y)
                       if math.isfinite(a) and math.isfinite(b))
        if pts:
            fr.parts.append(f'<polyline fill="none" stroke="{COLORS[i % len(COLORS)]}" stroke-width="1.5" '
                            f'points="{pts}"/>')
    fr.legend(list(series))
    return fr.done()


def bar_chart(labels, values, baselines=None, title="", ylabel=""):
    """One bar per label; optional baseline bars drawn beside them."""
    allv = list(values) + [b for b in (baselines or []) if b is not None] + [0.0]
    fr = _Frame((0.0, float(max(1, len(labels)))), _range(allv), title, "", ylabel)
    slot = (W - ML - MR) / max(1, len(labels))
    width = slot * (0.4 if baselines else 0.7)
    zero = fr.py(0.0) if fr.y0 <= 0.0 <= fr.y1 else fr.py(fr.y0)
    for i, label in enumerate(labels):
        bars = [(values[i], COLORS[0])]
        if baselines and baselines[i] is not None:
            bars.append((baselines[i], COLORS[1]))
        for j, (v, c) in enumerate(bars):
            x = ML + i * slot + 0.1 * slot + j * width
            top, bot = sorted((fr.py(v), zero))
            fr.parts.append(f'<rect x="{_f(x)}" y="{_f(top)}" width="{_f(width)}" height="{_f(bot - top)}" '
                            f'fill="{c}"/>')
        fr.parts.append(f'<text x="{_f(ML + (i + 0.5) * slot)}" y="{H - MB + 30}" text-anchor="middle" '
                        f'font-family="sans-serif" font-size="8">{escape(label[:28])}</text>')
    fr.legend(["zero-shot", "random latent"] if baselines else ["value"])
    return fr.done()


def scatter(points, groups=None, title="", xlabel="", ylabel=""):
    """2-D points; ``groups`` gives an integer color index per point."""
    xs = [p[0] for p in points]
    ys = [p[1] for p in points]
    fr = _Frame(_range(xs), _range(ys), title, xlabel, ylabel)
    for k, (x, y) in enumerate(zip(xs, ys)):
        c = COLORS[(groups[k] if groups is not None else 0) % len(COLORS)]
        fr.parts.append(f'<circle cx="{_f(fr.px(x))}" cy="{_f(fr.py(y))}" r="3" fill="{c}"/>')
    return fr.done()


def write(path, svg):
    with open(path, "w") as fh:
        fh.write(svg)
