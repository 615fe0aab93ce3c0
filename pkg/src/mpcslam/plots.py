"""Static SVG figures: trajectory, feature map and per-track distances.

The SVG is written by hand so that the output is byte-stable (no dates, ids
or renderer versions) and every estimated agent is one polyline vertex.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .table import DistanceTable

WIDTH, HEIGHT, MARGIN = 640, 480, 40
PALETTE = ("#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2")


def _fmt(v: float) -> str:
    s = f"{v:.2f}"
    return "0.00" if s == "-0.00" else s


class _Canvas:
    """Maps data coordinates into a fixed pixel box, preserving aspect if asked."""

    def __init__(self, xs, ys, equal: bool = True, title: str = ""):
        xs = np.asarray(xs, float)
        ys = np.asarray(ys, float)
        x0, x1 = (float(xs.min()), float(xs.max())) if xs.size else (0.0, 1.0)
        y0, y1 = (float(ys.min()), float(ys.max())) if ys.size else (0.0, 1.0)
        if x1 - x0 < 1e-9:
            x0, x1 = x0 - 0.5, x1 + 0.5
        if y1 - y0 < 1e-9:
            y0, y1 = y0 - 0.5, y1 + 0.5
        sx = (WIDTH - 2 * MARGIN) / (x1 - x0)
        sy = (HEIGHT - 2 * MARGIN) / (y1 - y0)
        if equal:
            sx = sy = min(sx, sy)
        self.x0, self.y0, self.sx, self.sy = x0, y0, sx, sy
        self.parts = [
            f'<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" '
            f'viewBox="0 0 {WIDTH} {HEIGHT}">',
            f'<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>',
        ]
        if title:
            self.parts.append(f'<text x="{MARGIN}" y="{MARGIN // 2}" font-size="14">{title}</text>')

    def px(self, x, y):
        return MARGIN + (x - self.x0) * self.sx, HEIGHT - MARGIN - (y - self.y0) * self.sy

    def polyline(self, xs, ys, cls: str, stroke: str, dash: str | None = None, width=1.5):
        pts = " ".join(f"{_fmt(a)},{_fmt(b)}" for a, b in (self.px(x, y) for x, y in zip(xs, ys)))
        extra = f' stroke-dasharray="{dash}"' if dash else ""
        self.parts.append(f'<polyline class="{cls}" points="{pts}" fill="none" stroke="{stroke}" '
                          f'stroke-width="{width}"{extra}/>')

    def marker(self, x, y, cls: str, shape: str, color: str, size=5.0):
        cx, cy = self.px(x, y)
        if shape == "square":
            self.parts.append(f'<rect class="{cls}" x="{_fmt(cx - size)}" y="{_fmt(cy - size)}" '
                              f'width="{_fmt(2 * size)}" height="{_fmt(2 * size)}" fill="{color}"/>')
        elif shape == "cross":
            d = (f"M{_fmt(cx - size)},{_fmt(cy - size)}L{_fmt(cx + size)},{_fmt(cy + size)}"
                 f"M{_fmt(cx - size)},{_fmt(cy + size)}L{_fmt(cx + size)},{_fmt(cy - size)}")
            self.parts.append(f'<path class="{cls}" d="{d}" stroke="{color}" stroke-width="2"/>')
        else:
            self.parts.append(f'<circle class="{cls}" cx="{_fmt(cx)}" cy="{_fmt(cy)}" r="{_fmt(size)}" '
                              f'fill="none" stroke="{color}"/>')

    def legend(self, entries):
        y = MARGIN
        for label, color in entries:
            self.parts.append(f'<rect x="{WIDTH - 150}" y="{y - 8}" width="10" height="10" fill="{color}"/>')
            self.parts.append(f'<text x="{WIDTH - 135}" y="{y + 1}" font-size="11">{label}</text>')
            y += 16

    def svg(self) -> str:
        return "\n".join(self.parts + ["</svg>"]) + "\n"


def trajectory_svg(estimate, truth=None, title: str = "Agent trajectory") -> str:
    """Estimated trajectory (one vertex per agent) with the truth dashed."""
    est = np.asarray(estimate, float).reshape(-1, 3)
    pts = [est] if truth is None else [est, np.asarray(truth, float).reshape(-1, 3)]
    allp = np.vstack(pts)
    c = _Canvas(allp[:, 0], allp[:, 1], equal=True, title=title)
    entries = [("estimate", PALETTE[0])]
    if truth is not None:
        t = pts[1]
        c.polyline(t[:, 0], t[:, 1], "truth", "#888888", dash="4,3")
        entries.append(("ground truth", "#888888"))
    c.polyline(est[:, 0], est[:, 1], "estimate", PALETTE[0])
    c.legend(entries)
    return c.svg()


def feature_map_svg(features: dict, pa_id: int = 0, truth_features=None, agents=None,
                    title: str = "Feature map") -> str:
    """PA as a filled square, VAs as crosses; truth features as open circles."""
    ids = sorted(features)
    F = np.array([features[k] for k in ids], float).reshape(-1, 3)
    pts = [F[:, :2]]
    if truth_features is not None:
        pts.append(np.asarray(truth_features, float).reshape(-1, 3)[:, :2])
    if agents is not None:
        pts.append(np.asarray(agents, float).reshape(-1, 3)[:, :2])
    allp = np.vstack(pts)
    c = _Canvas(allp[:, 0], allp[:, 1], equal=True, title=title)
    if agents is not None:
        A = np.asarray(agents, float).reshape(-1, 3)
        c.polyline(A[:, 0], A[:, 1], "agents", "#bbbbbb", width=1.0)
    if truth_features is not None:
        for p in np.asarray(truth_features, float).reshape(-1, 3):
            c.marker(p[0], p[1], "truth-feature", "circle", "#888888", 7.0)
    for k, p in zip(ids, F):
        if k == pa_id:
            c.marker(p[0], p[1], "pa", "square", PALETTE[1])
        else:
            c.marker(p[0], p[1], "va", "cross", PALETTE[0])
    entries = [("PA", PALETTE[1]), ("VA", PALETTE[0])]
    if truth_features is not None:
        entries.append(("expected", "#888888"))
    c.legend(entries)
    return c.svg()


def distance_svg(table: DistanceTable, tracks=None, title: str = "Tracked distances") -> str:
    """Distance against time, one polyline per track."""
    tracks = table.tracks() if tracks is None else list(tracks)
    c = _Canvas(table.n if len(table) else [0, 1], table.d if len(table) else [0, 1],
                equal=False, title=title)
    for i, k in enumerate(tracks):
        n, d = table.track(k)
        if len(n):
            c.polyline(n, d, f"track track-{k}", PALETTE[i % len(PALETTE)], width=1.0)
    return c.svg()


def write_svg(path, text: str) -> None:
    Path(path).write_text(text, encoding="utf-8")
