"""Trajectory examples, moved/stationary decomposition and dataset files.

A dataset file holds one JSON record per line::

    {"scenario": "planar", "env": "table",
     "objects": [{"id": "disc0", "moving": true, "radius": 0.05,
                  "points": [[[x, y]], ...], "velocities": [[[vx, vy]], ...]}],
     "robot": [[...], ...], "actions": [[...], ...], "label": 1}

``points`` and ``velocities`` are indexed ``[timestep][point][axis]``; a disc
has one point per timestep, the rope has 25. Fields this module does not know
about are carried through untouched.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .geometry import Disc
from .transforms import TransformParams, apply_to_points

SCENARIOS = ("planar", "rope")
DEFAULT_MOVING_THRESHOLD = 1e-3

_OBJECT_KEYS = ("id", "moving", "radius", "points", "velocities")
_EXAMPLE_KEYS = ("scenario", "env", "objects", "robot", "actions", "label")


class DatasetError(ValueError):
    pass


def _array(a, ndim: int, name: str) -> np.ndarray:
    out = np.array(a, dtype=float)
    if out.ndim != ndim:
        raise ValueError(f"{name} must be a {ndim}-D array, got shape {out.shape}")
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class ObjectTrack:
    id: str
    points: np.ndarray
    velocities: np.ndarray | None = None
    radius: float = 0.0
    moving: bool | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        object.__setattr__(self, "points", _array(self.points, 3, f"object {self.id} points"))
        if self.velocities is not None:
            vel = _array(self.velocities, 3, f"object {self.id} velocities")
            if vel.shape != self.points.shape:
                raise ValueError(f"object {self.id}: velocities shape {vel.shape} != points shape {self.points.shape}")
            object.__setattr__(self, "velocities", vel)
        if self.radius < 0:
            raise ValueError(f"object {self.id}: negative radius")

    @property
    def n_steps(self) -> int:
        return self.points.shape[0]

    def max_displacement(self) -> float:
        return float(np.max(np.linalg.norm(self.points - self.points[0], axis=-1)))


@dataclass(frozen=True, eq=False)
class Example:
    scenario: str
    env: str
    objects: tuple
    robot: np.ndarray
    actions: np.ndarray
    label: int | None = None
    extras: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.scenario not in SCENARIOS:
            raise ValueError(f"unknown scenario {self.scenario!r}")
        object.__setattr__(self, "objects", tuple(self.objects))
        robot = _array(self.robot, 2, "robot")
        actions = _array(self.actions, 2, "actions")
        object.__setattr__(self, "robot", robot)
        object.__setattr__(self, "actions", actions)
        n = robot.shape[0]
        if n < 2:
            raise ValueError("examples need at least two time steps")
        for obj in self.objects:
            if obj.n_steps != n:
                raise ValueError(f"object {obj.id} has {obj.n_steps} steps, robot has {n}")
        if actions.shape[0] not in (n, n - 1):
            raise ValueError(f"actions have {actions.shape[0]} steps, expected {n - 1} or {n}")
        if self.label is not None and self.label not in (0, 1):
            raise ValueError(f"label must be 0 or 1, got {self.label!r}")

    @property
    def n_steps(self) -> int:
        return self.robot.shape[0]

    @property
    def dim(self) -> int:
        return self.objects[0].points.shape[-1] if self.objects else 0

    def object_by_id(self, obj_id: str) -> ObjectTrack:
        for obj in self.objects:
            if obj.id == obj_id:
                return obj
        raise KeyError(obj_id)


@dataclass(frozen=True, eq=False)
class AugmentedExample:
    """An augmentation result. ``example`` is the payload written to disk.

    When ``accepted`` is False the payload is the source example itself.
    """

    example: Example
    source: Example
    transform: TransformParams
    accepted: bool
    diagnostics: dict = field(default_factory=dict)

    @property
    def label(self):
        return self.example.label


@dataclass(frozen=True, eq=False)
class PointSet:
    """Flattened moved-object points with their (object, timestep, point) tags."""

    points: np.ndarray
    radius: np.ndarray
    object_index: np.ndarray
    timestep: np.ndarray
    point_index: np.ndarray

    def __len__(self):
        return self.points.shape[0]


def decompose_moving(example: Example, threshold: float = DEFAULT_MOVING_THRESHOLD):
    """Split object ids into (moved, stationary) by maximum point displacement."""
    if threshold < 0:
        raise ValueError("threshold must be nonnegative")
    moved, stationary = [], []
    for obj in example.objects:
        (moved if obj.max_displacement() > threshold else stationary).append(obj.id)
    return moved, stationary


def stationary_primitives(example: Example, stationary_ids) -> list:
    """Obstacle primitives for stationary objects (points of radius 0 are skipped)."""
    prims = []
    for obj_id in stationary_ids:
        obj = example.object_by_id(obj_id)
        if obj.radius <= 0:
            continue
        for p in obj.points[0]:
            prims.append(Disc(p, obj.radius))
    return prims


def extract_points(example: Example, moved_ids=None) -> PointSet:
    """All points of the moved objects over all timesteps."""
    if moved_ids is None:
        moved_ids = decompose_moving(example)[0]
    moved_ids = list(moved_ids)
    k = example.dim if example.objects else 2
    chunks, radii, obj_idx, steps, pidx = [], [], [], [], []
    for i, obj_id in enumerate(moved_ids):
        obj = example.object_by_id(obj_id)
        n_t, n_p, _ = obj.points.shape
        chunks.append(obj.points.reshape(-1, k))
        radii.append(np.full(n_t * n_p, obj.radius))
        obj_idx.append(np.full(n_t * n_p, i))
        steps.append(np.repeat(np.arange(n_t), n_p))
        pidx.append(np.tile(np.arange(n_p), n_t))
    if not chunks:
        empty = np.zeros(0, dtype=int)
        return PointSet(np.zeros((0, k)), np.zeros(0), empty, empty, empty)
    return PointSet(np.concatenate(chunks), np.concatenate(radii), np.concatenate(obj_idx),
                    np.concatenate(steps), np.concatenate(pidx))


def transform_objects(example: Example, T: TransformParams, moved_ids) -> Example:
    """Rigidly transform the moved objects' points and velocities; robot untouched."""
    moved = set(moved_ids)
    objects = []
    for obj in example.objects:
        if obj.id in moved:
            pts, vel = apply_to_points(T, obj.points, obj.velocities)
            obj = replace(obj, points=pts, velocities=vel)
        objects.append(obj)
    return replace(example, objects=tuple(objects))


def moved_centroid(example: Example, moved_ids) -> np.ndarray:
    """Centroid of the moved objects' points at the first time step."""
    pts = [example.object_by_id(i).points[0] for i in moved_ids]
    return np.concatenate(pts).mean(axis=0)


# ---------------------------------------------------------------------------
# serialization


def object_to_json(obj: ObjectTrack) -> dict:
    rec = {"id": obj.id}
    if obj.moving is not None:
        rec["moving"] = obj.moving
    rec["radius"] = obj.radius
    rec["points"] = obj.points.tolist()
    if obj.velocities is not None:
        rec["velocities"] = obj.velocities.tolist()
    rec.update(obj.extras)
    return rec


def example_to_json(example: Example) -> dict:
    rec = {
        "scenario": example.scenario,
        "env": example.env,
        "objects": [object_to_json(o) for o in example.objects],
        "robot": example.robot.tolist(),
        "actions": example.actions.tolist(),
        "label": example.label,
    }
    rec.update(example.extras)
    return rec


def dumps_example(example: Example) -> str:
    return json.dumps(example_to_json(example), separators=(",", ":"))


def _require(rec: dict, key: str, where: str):
    if key not in rec:
        raise DatasetError(f"{where}: missing field {key!r}")
    return rec[key]


def object_from_json(rec: dict, where: str = "object") -> ObjectTrack:
    obj_id = str(_require(rec, "id", where))
    where = f"{where} {obj_id!r}"
    try:
        return ObjectTrack(
            id=obj_id,
            points=_require(rec, "points", where),
            velocities=rec.get("velocities"),
            radius=float(rec.get("radius", 0.0)),
            moving=rec.get("moving"),
            extras={k: v for k, v in rec.items() if k not in _OBJECT_KEYS},
        )
    except DatasetError:
        raise
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: {exc}") from None


def example_from_json(rec: dict, where: str = "record") -> Example:
    if not isinstance(rec, dict):
        raise DatasetError(f"{where}: expected a JSON object")
    for key in ("scenario", "env", "objects", "robot", "actions"):
        _require(rec, key, where)
    objects = [object_from_json(o, f"{where}, field 'objects'") for o in rec["objects"]]
    try:
        return Example(
            scenario=rec["scenario"],
            env=str(rec["env"]),
            objects=tuple(objects),
            robot=rec["robot"],
            actions=rec["actions"],
            label=rec.get("label"),
            extras={k: v for k, v in rec.items() if k not in _EXAMPLE_KEYS},
        )
    except (TypeError, ValueError) as exc:
        raise DatasetError(f"{where}: {exc}") from None


def loads_example(line: str, where: str = "record") -> Example:
    try:
        rec = json.loads(line)
    except json.JSONDecodeError as exc:
        raise DatasetError(f"{where}: invalid JSON ({exc.msg})") from None
    return example_from_json(rec, where)


def load_dataset(path) -> list:
    examples = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            examples.append(loads_example(line, f"{path}:{lineno}"))
    return examples


def save_dataset(examples, path) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for ex in examples:
            fh.write(dumps_example(ex))
            fh.write("\n")


def examples_equal(a: Example, b: Example) -> bool:
    return dumps_example(a) == dumps_example(b)
