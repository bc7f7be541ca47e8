"""Signed-distance field of the stationary environment.

The environment is a set of primitive obstacles (discs/spheres and
axis-aligned boxes). Their exact signed distance is sampled on a regular grid
whose voxel ``i`` is centered at ``origin + i * resolution``; queries between
voxel centers use multilinear interpolation. Negative values are inside an
obstacle, and a point is occupied when its interpolated distance is <= 0.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from ._grid import interpolate


@dataclass(frozen=True, eq=False)
class Disc:
    """Disc in 2D, sphere in 3D."""

    center: np.ndarray
    radius: float

    def __post_init__(self):
        object.__setattr__(self, "center", np.asarray(self.center, dtype=float).reshape(-1))
        if not self.radius > 0:
            raise ValueError("radius must be positive")

    @property
    def dim(self) -> int:
        return self.center.shape[0]

    def signed_distance(self, points) -> np.ndarray:
        points = np.asarray(points, dtype=float)
        return np.linalg.norm(points - self.center, axis=-1) - self.radius

    def gradient(self, points) -> np.ndarray:
        diff = np.asarray(points, dtype=float) - self.center
        norm = np.linalg.norm(diff, axis=-1, keepdims=True)
        # the center has no preferred direction, pick +x
        fallback = np.zeros_like(diff)
        fallback[..., 0] = 1.0
        return np.where(norm > 0, diff / np.where(norm > 0, norm, 1.0), fallback)

    def to_json(self) -> dict:
        return {"kind": "disc", "center": self.center.tolist(), "radius": float(self.radius)}


@dataclass(frozen=True, eq=False)
class Box:
    """Axis-aligned box given by its min and max corners."""

    lo: np.ndarray
    hi: np.ndarray

    def __post_init__(self):
        lo = np.asarray(self.lo, dtype=float).reshape(-1)
        hi = np.asarray(self.hi, dtype=float).reshape(-1)
        if lo.shape != hi.shape or np.any(lo >= hi):
            raise ValueError("box min corner must be strictly below max corner")
        object.__setattr__(self, "lo", lo)
        object.__setattr__(self, "hi", hi)

    @property
    def dim(self) -> int:
        return self.lo.shape[0]

    def _q(self, points):
        c = 0.5 * (self.lo + self.hi)
        h = 0.5 * (self.hi - self.lo)
        rel = np.asarray(points, dtype=float) - c
        return rel, np.abs(rel) - h

    def signed_distance(self, points) -> np.ndarray:
        _, q = self._q(points)
        outside = np.linalg.norm(np.maximum(q, 0.0), axis=-1)
        inside = np.minimum(q.max(axis=-1), 0.0)
        return outside + inside

    def gradient(self, points) -> np.ndarray:
        rel, q = self._q(points)
        sign = np.where(rel >= 0, 1.0, -1.0)
        pos = np.maximum(q, 0.0)
        norm = np.linalg.norm(pos, axis=-1, keepdims=True)
        outside = sign * pos / np.where(norm > 0, norm, 1.0)
        face = np.argmax(q, axis=-1)
        inside = np.zeros_like(q)
        np.put_along_axis(inside, face[..., None], np.take_along_axis(sign, face[..., None], axis=-1), axis=-1)
        return np.where(norm > 0, outside, inside)

    def to_json(self) -> dict:
        return {"kind": "box", "min": self.lo.tolist(), "max": self.hi.tolist()}


Primitive = Disc | Box


def primitive_from_json(record: dict):
    kind = record.get("kind")
    if kind in ("disc", "sphere"):
        return Disc(record["center"], float(record["radius"]))
    if kind == "box":
        return Box(record["min"], record["max"])
    raise ValueError(f"unknown primitive kind {kind!r}")


def union_distance(primitives, points) -> np.ndarray:
    """Exact signed distance to the union of primitives (min over members)."""
    points = np.asarray(points, dtype=float)
    out = np.full(points.shape[:-1], np.inf)
    for prim in primitives:
        out = np.minimum(out, prim.signed_distance(points))
    return out


@dataclass(frozen=True, eq=False)
class EnvironmentField:
    origin: np.ndarray
    resolution: float
    extents: tuple
    sdf: np.ndarray
    workspace_lower: np.ndarray
    workspace_upper: np.ndarray
    primitives: tuple = field(default=())

    @property
    def dim(self) -> int:
        return len(self.extents)

    @property
    def cap(self) -> float:
        return float(self.resolution * np.linalg.norm(np.asarray(self.extents) - 1))

    @property
    def upper_corner(self) -> np.ndarray:
        return self.origin + self.resolution * (np.asarray(self.extents) - 1)

    def voxel_centers(self) -> np.ndarray:
        axes = [self.origin[a] + self.resolution * np.arange(n) for a, n in enumerate(self.extents)]
        return np.stack(np.meshgrid(*axes, indexing="ij"), axis=-1)

    def _flat(self, points):
        points = np.asarray(points, dtype=float)
        if points.shape[-1] != self.dim:
            raise ValueError(f"points have dimension {points.shape[-1]}, field is {self.dim}-D")
        return points, np.ascontiguousarray(points.reshape(-1, self.dim))

    def query_with_gradient(self, points):
        """Interpolated value, gradient of the interpolant and out-of-grid flag.

        Points outside the grid are clamped onto it before interpolating.
        """
        points, flat = self._flat(points)
        value, grad, outside = interpolate(self.sdf, self.origin, self.resolution, flat)
        shape = points.shape[:-1]
        return value.reshape(shape), grad.reshape(points.shape), outside.reshape(shape)

    def query(self, points):
        """Interpolated sdf and an out-of-grid flag per point."""
        value, _, outside = self.query_with_gradient(points)
        return value, outside

    def gradient(self, points):
        """Gradient of the multilinear interpolant and an out-of-grid flag."""
        _, grad, outside = self.query_with_gradient(points)
        return grad, outside

    def in_grid(self, points) -> np.ndarray:
        return ~self.query_with_gradient(points)[2]

    def to_json(self) -> dict:
        return {
            "primitives": [p.to_json() for p in self.primitives],
            "origin": self.origin.tolist(),
            "resolution": self.resolution,
            "extents": list(self.extents),
            "workspace": {"lower": self.workspace_lower.tolist(), "upper": self.workspace_upper.tolist()},
        }


def build_field(primitives, origin, resolution: float, extents, workspace) -> EnvironmentField:
    """Sample the exact signed distance of the primitive union on a grid.

    ``workspace`` is a ``(lower, upper)`` pair. Values are capped at the grid
    diagonal, so an empty environment gives a constant field.
    """
    if not resolution > 0:
        raise ValueError("resolution must be positive")
    extents = tuple(int(n) for n in extents)
    if len(extents) not in (2, 3) or any(n < 2 for n in extents):
        raise ValueError(f"grid extents {extents} must have 2 or 3 axes of at least 2 voxels")
    origin = np.asarray(origin, dtype=float).reshape(-1)
    if origin.shape[0] != len(extents):
        raise ValueError("origin and extents disagree on dimension")
    primitives = tuple(primitives)
    for prim in primitives:
        if prim.dim != len(extents):
            raise ValueError(f"{prim.dim}-D primitive in a {len(extents)}-D field")
    lower, upper = (np.asarray(w, dtype=float).reshape(-1) for w in workspace)
    if lower.shape[0] != len(extents) or upper.shape[0] != len(extents) or np.any(lower > upper):
        raise ValueError("workspace bounds must be a valid box of the field's dimension")

    env = EnvironmentField(origin, float(resolution), extents, np.empty(0), lower, upper, primitives)
    cap = env.cap
    sdf = np.minimum(union_distance(primitives, env.voxel_centers()), cap)
    sdf.setflags(write=False)
    object.__setattr__(env, "sdf", sdf)
    return env


def with_extra_primitives(env: EnvironmentField, extra) -> EnvironmentField:
    """Rebuild the field with additional obstacles on the same grid."""
    extra = tuple(extra)
    if not extra:
        return env
    return build_field(env.primitives + extra, env.origin, env.resolution, env.extents,
                       (env.workspace_lower, env.workspace_upper))


def sdf_query(env: EnvironmentField, p):
    """Interpolated sdf at p; returns ``(value, out_of_grid)``."""
    value, flag = env.query(p)
    if np.ndim(value) == 0:
        return float(value), bool(flag)
    return value, flag


def sdf_gradient(env: EnvironmentField, p):
    grad, flag = env.gradient(p)
    if np.ndim(flag) == 0:
        return grad, bool(flag)
    return grad, flag


def occupancy(env: EnvironmentField, p):
    value, _ = env.query(p)
    occ = (value <= 0).astype(int)
    return int(occ) if np.ndim(occ) == 0 else occ


def min_distance_point(env: EnvironmentField, points):
    """Index and value of the point with smallest sdf; ties go to the lowest index."""
    points = np.asarray(points, dtype=float)
    if points.size == 0:
        raise ValueError("min_distance_point needs at least one point")
    values, _ = env.query(points.reshape(-1, env.dim))
    idx = int(np.argmin(values))
    return idx, float(values[idx])


def field_from_json(record: dict) -> EnvironmentField:
    try:
        prims = [primitive_from_json(p) for p in record.get("primitives", [])]
        ws = record["workspace"]
        return build_field(prims, record["origin"], float(record["resolution"]), record["extents"],
                           (ws["lower"], ws["upper"]))
    except KeyError as exc:
        raise ValueError(f"environment record is missing field {exc.args[0]!r}") from None


def load_environment(path) -> EnvironmentField:
    with open(path, encoding="utf-8") as fh:
        return field_from_json(json.load(fh))


def save_environment(env: EnvironmentField, path) -> None:
    Path(path).write_text(json.dumps(env.to_json(), indent=2) + "\n", encoding="utf-8")
