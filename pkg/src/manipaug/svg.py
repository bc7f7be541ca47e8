"""Plain SVG scene panels: obstacles, original and augmented trajectories.

Planar scenes are drawn top-down (x, y); rope scenes from the front (x, z).
Numbers are written with fixed precision so the output is byte-stable.
"""

from __future__ import annotations

from xml.sax.saxutils import escape

import numpy as np

from .datamodel import Example, decompose_moving
from .geometry import Box, Disc, EnvironmentField

SIZE = 480
PAD = 20
COLORS = {"orig": "#1f5fbf", "aug": "#e07020", "obstacle": "#888888", "object": "#c8c8c8"}


def _axes(dim: int):
    return (0, 1) if dim == 2 else (0, 2)


class _View:
    def __init__(self, lower, upper):
        lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
        span = float(np.max(upper - lower)) or 1.0
        self.lower = lower
        self.scale = (SIZE - 2 * PAD) / span
        self.height = (upper[1] - lower[1]) * self.scale + 2 * PAD
        self.width = (upper[0] - lower[0]) * self.scale + 2 * PAD

    def xy(self, p):
        x = PAD + (p[0] - self.lower[0]) * self.scale
        y = self.height - PAD - (p[1] - self.lower[1]) * self.scale
        return f"{x:.2f}", f"{y:.2f}"

    def length(self, r):
        return f"{r * self.scale:.2f}"


def _primitive(view: _View, prim, ax, cls: str, color: str) -> str:
    if isinstance(prim, Disc):
        cx, cy = view.xy(prim.center[list(ax)])
        return (f'<circle class="{cls}" cx="{cx}" cy="{cy}" r="{view.length(prim.radius)}" '
                f'fill="{color}" fill-opacity="0.6"/>')
    if isinstance(prim, Box):
        lo, hi = prim.lo[list(ax)], prim.hi[list(ax)]
        x0, y1 = view.xy(lo)
        x1, y0 = view.xy(hi)
        w, h = float(x1) - float(x0), float(y1) - float(y0)
        return (f'<rect class="{cls}" x="{x0}" y="{y0}" width="{w:.2f}" height="{h:.2f}" '
                f'fill="{color}" fill-opacity="0.6"/>')
    raise TypeError(f"cannot draw {type(prim).__name__}")


def _trajectories(view: _View, example: Example, moved, ax, cls: str, color: str) -> list:
    out = []
    for obj_id in moved:
        obj = example.object_by_id(obj_id)
        pts = obj.points[:, :, list(ax)]
        for j in range(pts.shape[1]):
            path = " ".join(",".join(view.xy(p)) for p in pts[:, j])
            out.append(f'<polyline class="{cls}" points="{path}" fill="none" stroke="{color}" stroke-width="1.5"/>')
        if obj.radius > 0:
            for p in pts[-1]:
                cx, cy = view.xy(p)
                out.append(f'<circle class="{cls}" cx="{cx}" cy="{cy}" r="{view.length(obj.radius)}" '
                           f'fill="none" stroke="{color}"/>')
        elif example.scenario == "rope":
            path = " ".join(",".join(view.xy(p)) for p in pts[-1])
            out.append(f'<polyline class="{cls}" points="{path}" fill="none" stroke="{color}" stroke-width="2.5"/>')
    return out


def render_example(example: Example, env: EnvironmentField | None, augmented=(), notes=()) -> str:
    """One panel: static obstacles, stationary objects, the original moved
    trajectories and any augmented ones, with free-form annotation lines."""
    ax = _axes(example.dim)
    if env is not None:
        lower, upper = env.workspace_lower[list(ax)], env.workspace_upper[list(ax)]
    else:
        pts = np.concatenate([o.points.reshape(-1, example.dim) for o in example.objects])[:, list(ax)]
        lower, upper = pts.min(axis=0) - 0.1, pts.max(axis=0) + 0.1
    view = _View(lower, upper)
    moved, stationary = decompose_moving(example)
    body = []
    if env is not None:
        body += [_primitive(view, p, ax, "obstacle", COLORS["obstacle"]) for p in env.primitives]
    for obj_id in stationary:
        obj = example.object_by_id(obj_id)
        if obj.radius > 0:
            for p in obj.points[0]:
                body.append(_primitive(view, Disc(p, obj.radius), ax, "object", COLORS["object"]))
    body += _trajectories(view, example, moved, ax, "original", COLORS["orig"])
    for aug in augmented:
        body += _trajectories(view, aug, moved, ax, "augmented", COLORS["aug"])
    for i, line in enumerate(notes):
        body.append(f'<text x="{PAD}" y="{14 + 12 * i}" font-size="10" font-family="monospace">{escape(line)}</text>')
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{view.width:.0f}" height="{view.height:.0f}" '
            f'viewBox="0 0 {view.width:.2f} {view.height:.2f}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"


def render_path(path, bounds_lower, bounds_upper, target=None) -> str:
    """Solve path in the (tx, ty) plane of transform space."""
    path = np.asarray(path, dtype=float)
    view = _View(np.asarray(bounds_lower)[:2], np.asarray(bounds_upper)[:2])
    pts = " ".join(",".join(view.xy(p[:2])) for p in path)
    body = [f'<polyline class="path" points="{pts}" fill="none" stroke="#c02020" stroke-width="1.5"/>']
    for p in path:
        cx, cy = view.xy(p[:2])
        body.append(f'<circle class="iterate" cx="{cx}" cy="{cy}" r="2.5" fill="black"/>')
    if target is not None:
        cx, cy = view.xy(np.asarray(target)[:2])
        body.append(f'<circle class="target" cx="{cx}" cy="{cy}" r="4" fill="none" stroke="#208020"/>')
    head = (f'<svg xmlns="http://www.w3.org/2000/svg" width="{view.width:.0f}" height="{view.height:.0f}" '
            f'viewBox="0 0 {view.width:.2f} {view.height:.2f}">')
    return "\n".join([head, '<rect width="100%" height="100%" fill="white"/>', *body, "</svg>"]) + "\n"
