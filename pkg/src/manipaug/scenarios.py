"""Desk-scale scenarios: planar disc pushing and a two-gripper rope.

Each scenario supplies a deterministic simulator (used for validity probes
and data generation), an IK adapter that rebuilds robot states and actions
for augmented object states, and a seeded dataset generator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from . import _relax
from .datamodel import Example, ObjectTrack
from .geometry import Box, Disc, EnvironmentField, build_field, union_distance
from .objectives import robot_contact_loss
from .transforms import TransformBounds, TransformParams, apply_to_points


# allowed extra robot penetration after augmentation (about the contact margin)
ROBOT_CLEARANCE_TOL = 1e-3


class SimulationError(RuntimeError):
    pass


def _inside(points, lower, upper, tol=1e-9) -> bool:
    points = np.asarray(points, dtype=float)
    lower, upper = np.asarray(lower, dtype=float), np.asarray(upper, dtype=float)
    return bool(np.all(points >= lower - tol) and np.all(points <= upper + tol))


# ---------------------------------------------------------------------------
# planar pushing


@dataclass(frozen=True)
class PlanarWorld:
    object_radii: tuple = (0.045,) * 9
    robot_radius: float = 0.05
    workspace_lower: tuple = (-0.5, -0.5)
    workspace_upper: tuple = (0.5, 0.5)
    obstacles: tuple = (
        Box((-0.5, -0.5), (-0.36, 0.05)),
        Disc((0.12, 0.22), 0.08),
        Box((0.05, -0.46), (0.42, -0.32)),
    )
    substep: float = 0.005
    max_resolve_iters: int = 100
    grid_origin: tuple = (-1.275, -1.275)
    grid_resolution: float = 0.01
    grid_extents: tuple = (256, 256)
    # discs are placed inside this box (default: the workspace)
    spawn: tuple | None = None

    def __post_init__(self):
        if self.robot_radius <= 0 or any(r <= 0 for r in self.object_radii):
            raise ValueError("radii must be positive")

    def spawn_box(self):
        lo, hi = self.spawn if self.spawn is not None else (self.workspace_lower, self.workspace_upper)
        return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)

    def environment(self) -> EnvironmentField:
        return build_field(self.obstacles, self.grid_origin, self.grid_resolution, self.grid_extents,
                           (self.workspace_lower, self.workspace_upper))


def _resolve_planar(world: PlanarWorld, discs: np.ndarray, radii: np.ndarray, robot: np.ndarray) -> None:
    """Push overlapping discs apart in place until nothing overlaps."""
    tol = 1e-12
    n = discs.shape[0]
    for _ in range(world.max_resolve_iters):
        moved = False
        for i in range(n):
            d = discs[i] - robot
            dist = math.hypot(d[0], d[1])
            pen = world.robot_radius + radii[i] - dist
            if pen > tol:
                normal = d / dist if dist > 0 else np.array([1.0, 0.0])
                discs[i] += pen * normal
                moved = True
        # the disc farther from the robot gives way
        order = np.argsort(np.linalg.norm(discs - robot, axis=1), kind="stable")
        for a in range(n):
            i = order[a]
            for b in range(a + 1, n):
                j = order[b]
                d = discs[j] - discs[i]
                dist = math.hypot(d[0], d[1])
                pen = radii[i] + radii[j] - dist
                if pen > tol:
                    normal = d / dist if dist > 0 else np.array([1.0, 0.0])
                    discs[j] += pen * normal
                    moved = True
        for prim in world.obstacles:
            sd = prim.signed_distance(discs) - radii
            for i in np.flatnonzero(sd < -tol):
                discs[i] += -sd[i] * prim.gradient(discs[i])
                moved = True
        if not moved:
            return
    raise SimulationError(f"overlap resolution did not converge in {world.max_resolve_iters} iterations")


def planar_simulate(world: PlanarWorld, s_t, r_t, a_t, radii=None):
    """Quasi-static push: the robot disc moves straight to the commanded position.

    ``s_t`` holds object disc centers (n, 2), ``r_t`` the robot center and
    ``a_t`` its commanded end position. Returns ``(s_next, r_next)``.
    """
    discs = np.array(s_t, dtype=float).reshape(-1, 2)
    radii = np.asarray(world.object_radii[: discs.shape[0]] if radii is None else radii, dtype=float)
    start = np.asarray(r_t, dtype=float).reshape(2)
    goal = np.asarray(a_t, dtype=float).reshape(2)
    n_sub = max(1, math.ceil(np.linalg.norm(goal - start) / world.substep - 1e-9))
    robot = start
    for j in range(1, n_sub + 1):
        robot = goal if j == n_sub else start + (j / n_sub) * (goal - start)
        _resolve_planar(world, discs, radii, robot)
    return discs, robot.copy()


def planar_ik(T: TransformParams, robot, actions, workspace, env: EnvironmentField | None = None,
              robot_radius: float = 0.0, tol: float = ROBOT_CLEARANCE_TOL):
    """Move the robot disc trajectory and commanded positions with the objects.

    Valid when every robot position stays inside ``workspace = (lower, upper)``
    and, given a field, the robot disc penetrates the environment by no more
    than ``tol`` beyond what the original trajectory already did.
    """
    robot = np.asarray(robot, dtype=float)
    r_new, _ = apply_to_points(T, robot)
    a_new, _ = apply_to_points(T, np.asarray(actions, dtype=float))
    lo, hi = workspace
    ok = _inside(r_new, lo, hi)
    if ok and env is not None:
        before, _ = env.query(robot)
        after, _ = env.query(r_new)
        ok = bool(np.all(after - robot_radius >= np.minimum(before - robot_radius, 0.0) - tol))
    return r_new, a_new, ok


class PlanarScenario:
    name = "planar"
    d = 3
    env_name = "planar_table"

    def __init__(self, world: PlanarWorld | None = None):
        self.world = world or PlanarWorld()

    def default_bounds(self) -> TransformBounds:
        return TransformBounds([-0.1, -0.1, -math.pi / 4], [0.1, 0.1, math.pi / 4])

    def environment(self) -> EnvironmentField:
        return self.world.environment()

    def simulate(self, s, r, a):
        return planar_simulate(self.world, s, r, a)

    def probe_center(self, s):
        return np.asarray(s, dtype=float).reshape(-1, 2).mean(axis=0)

    def apply_transition(self, T, s, s_next, r, r_next, a):
        return (apply_to_points(T, s)[0], apply_to_points(T, s_next)[0], apply_to_points(T, r)[0],
                apply_to_points(T, r_next)[0], apply_to_points(T, a)[0])

    def ik(self, T: TransformParams, example: Example, augmented_objects, env):
        return planar_ik(T, example.robot, example.actions, (env.workspace_lower, env.workspace_upper), env,
                         self.world.robot_radius)

    def contact_pairs(self, example: Example):
        """Robot/object contact point pairs (touching within 1e-9) per timestep."""
        rob, obj = [], []
        for t in range(example.n_steps):
            r = example.robot[t]
            for o in example.objects:
                c = o.points[t, 0]
                gap = np.linalg.norm(c - r) - self.world.robot_radius - o.radius
                if gap <= 1e-9:
                    normal = (c - r) / np.linalg.norm(c - r)
                    rob.append(r + self.world.robot_radius * normal)
                    obj.append(c - o.radius * normal)
        return np.array(rob).reshape(-1, 2), np.array(obj).reshape(-1, 2)

    def probes(self, rng: np.random.Generator, n: int = 3):
        """Single pushed disc in free space."""
        out = []
        for _ in range(n):
            disc = rng.uniform(-0.1, 0.1, size=2)
            phi = rng.uniform(-math.pi, math.pi)
            u = np.array([math.cos(phi), math.sin(phi)])
            robot = disc - u * (self.world.robot_radius + self.world.object_radii[0] + 0.01)
            out.append((disc[None, :], robot, robot + 0.06 * u))
        return out

    def probe_world(self) -> PlanarWorld:
        return PlanarWorld(obstacles=())

    def generate(self, n: int, rng: np.random.Generator, n_steps: int = 6) -> list:
        return [generate_planar_example(self.world, rng, n_steps) for _ in range(n)]


def _planar_clearance(world: PlanarWorld, p, radius):
    if not world.obstacles:
        return np.inf
    return float(union_distance(world.obstacles, np.asarray(p, dtype=float)[None, :])[0] - radius)


def free_space_world() -> PlanarWorld:
    """One pushed disc, no obstacles, a workspace far larger than any trajectory."""
    return PlanarWorld(object_radii=(0.045,), obstacles=(), workspace_lower=(-1.0, -1.0),
                       workspace_upper=(1.0, 1.0), spawn=((-0.2, -0.2), (0.2, 0.2)))


def _place_discs(world: PlanarWorld, rng: np.random.Generator):
    lo, hi = world.spawn_box()
    placed = []
    for r in world.object_radii:
        for _ in range(500):
            if world.obstacles and rng.random() < 0.5:
                # tangent to a random obstacle
                prim = world.obstacles[rng.integers(len(world.obstacles))]
                p = rng.uniform(lo, hi)
                sd = float(prim.signed_distance(p[None, :])[0])
                if sd <= 0:
                    continue
                normal = prim.gradient(p[None, :])[0]
                c = p - sd * normal + r * normal
            else:
                c = rng.uniform(lo + r, hi - r)
            if not _inside(c, lo + r, hi - r):
                continue
            if _planar_clearance(world, c, r) < -1e-9:
                continue
            if any(np.linalg.norm(c - q) < r + rq + 0.005 for q, rq in placed):
                continue
            placed.append((c, r))
            break
        else:
            raise SimulationError("could not place discs")
    return np.array([c for c, _ in placed])


def generate_planar_example(world: PlanarWorld, rng: np.random.Generator, n_steps: int = 6,
                            env_name: str = PlanarScenario.env_name) -> Example:
    lo, hi = np.asarray(world.workspace_lower), np.asarray(world.workspace_upper)
    radii = np.asarray(world.object_radii)
    rr = world.robot_radius
    for _ in range(200):
        discs = _place_discs(world, rng)
        j = rng.integers(len(radii))
        phi = rng.uniform(-math.pi, math.pi)
        u = np.array([math.cos(phi), math.sin(phi)])
        robot = discs[j] - u * (rr + radii[j] + rng.uniform(0.005, 0.03))
        if not _inside(robot, lo + rr, hi - rr) or _planar_clearance(world, robot, rr) < 0.002:
            continue
        if np.any(np.linalg.norm(discs - robot, axis=1) - radii - rr < 0.002):
            continue
        states, robots, actions = [discs.copy()], [robot.copy()], []
        ok = True
        for _t in range(n_steps - 1):
            heading = phi + rng.uniform(-0.3, 0.3)
            goal = robot + rng.uniform(0.03, 0.06) * np.array([math.cos(heading), math.sin(heading)])
            try:
                discs, robot = planar_simulate(world, discs, robot, goal)
            except SimulationError:
                ok = False
                break
            if (not _inside(robot, lo + rr, hi - rr) or _planar_clearance(world, robot, rr) < 0.0
                    or not all(_inside(c, lo + r, hi - r) for c, r in zip(discs, radii))):
                ok = False
                break
            states.append(discs.copy())
            robots.append(robot.copy())
            actions.append(goal)
        if not ok:
            continue
        pts = np.stack(states, axis=1)[:, :, None, :]  # (n_obj, T, 1, 2)
        vel = np.zeros_like(pts)
        vel[:, 1:] = pts[:, 1:] - pts[:, :-1]
        objects = []
        for i in range(len(radii)):
            moving = bool(np.max(np.linalg.norm(pts[i] - pts[i, 0], axis=-1)) > 1e-3)
            objects.append(ObjectTrack(f"disc{i}", pts[i], vel[i], float(radii[i]), moving))
        return Example("planar", env_name, tuple(objects), np.array(robots), np.array(actions))
    raise SimulationError("could not generate a planar example")


# ---------------------------------------------------------------------------
# rope


@dataclass(frozen=True)
class RopeWorld:
    n_nodes: int = 25
    segment_length: float = 0.02
    gravity: float = 9.81
    dt: float = 0.01
    rounds: int = 3
    max_iters: int = 2000
    tol: float = 1e-5
    gripper_substep: float = 0.02
    obstacles: tuple = (
        Box((-0.03, -0.3, 0.40), (0.03, 0.3, 0.44)),
        Box((0.28, -0.2, 0.0), (0.45, 0.2, 0.3)),
    )
    workspace_lower: tuple = (-0.6, -0.6, 0.0)
    workspace_upper: tuple = (0.6, 0.6, 1.0)
    grid_origin: tuple = (-0.7, -0.7, -0.1)
    grid_resolution: float = 0.02
    grid_extents: tuple = (71, 71, 61)

    def __post_init__(self):
        if self.n_nodes != 25:
            raise ValueError("the rope has 25 nodes")
        if self.segment_length <= 0:
            raise ValueError("segment length must be positive")

    @property
    def length(self) -> float:
        return self.segment_length * (self.n_nodes - 1)

    @property
    def bias(self) -> float:
        return self.gravity * self.dt * self.dt

    def environment(self) -> EnvironmentField:
        return build_field(self.obstacles, self.grid_origin, self.grid_resolution, self.grid_extents,
                           (self.workspace_lower, self.workspace_upper))


_EMPTY_GRID = np.zeros((2, 2, 2))


def _relax_nodes(world: RopeWorld, nodes: np.ndarray, env: EnvironmentField | None):
    if env is not None and env.dim == 3 and env.primitives:
        grid, origin, res, has = np.ascontiguousarray(env.sdf), env.origin, env.resolution, True
    else:
        grid, origin, res, has = _EMPTY_GRID, np.zeros(3), 1.0, False
    iters, ok = _relax.relax(nodes, world.segment_length, world.bias, world.rounds, world.max_iters,
                             world.tol, grid, origin, res, has, 1e-5, 1e-5, 2000)
    if not ok:
        raise SimulationError(f"rope relaxation did not settle within {world.max_iters} iterations "
                              "or left the rope stretched")
    return iters


def rope_relax_simulate(world: RopeWorld, s_t, r_t, a_t, env: EnvironmentField | None = None):
    """Move both grippers to the commanded positions and let the rope settle.

    ``s_t`` is (25, 3) with node 0 / node 24 held by the left / right gripper;
    ``r_t`` and ``a_t`` are ``[left xyz, right xyz]``.
    """
    nodes = np.array(s_t, dtype=float).reshape(world.n_nodes, 3)
    start = np.asarray(r_t, dtype=float).reshape(2, 3)
    goal = np.asarray(a_t, dtype=float).reshape(2, 3)
    travel = float(np.max(np.linalg.norm(goal - start, axis=1)))
    n_sub = max(1, math.ceil(travel / world.gripper_substep - 1e-9))
    grip = start
    for j in range(1, n_sub + 1):
        grip = goal if j == n_sub else start + (j / n_sub) * (goal - start)
        nodes[0] = grip[0]
        nodes[-1] = grip[1]
        _relax_nodes(world, nodes, env)
    return nodes, grip.reshape(6).copy()


def rope_ik(T: TransformParams, augmented_rope, actions, workspace):
    """Grippers follow the augmented rope endpoints; commanded positions move with T."""
    rope = np.asarray(augmented_rope, dtype=float)
    robot = np.concatenate([rope[:, 0, :], rope[:, -1, :]], axis=1)
    a_new, _ = apply_to_points(T, np.asarray(actions, dtype=float).reshape(-1, 2, 3))
    lo, hi = workspace
    ok = _inside(robot.reshape(-1, 3), lo, hi) and _inside(a_new, lo, hi)
    return robot, a_new.reshape(-1, 6), ok


class RopeScenario:
    name = "rope"
    d = 6
    env_name = "rope_hooks"

    def __init__(self, world: RopeWorld | None = None, probe_env: EnvironmentField | None = None):
        self.world = world or RopeWorld()
        self._probe_env = probe_env

    def default_bounds(self) -> TransformBounds:
        h = math.pi / 2
        return TransformBounds([-0.1, -0.1, -0.1, -h, -h, -h], [0.1, 0.1, 0.1, h, h, h])

    def environment(self) -> EnvironmentField:
        return self.world.environment()

    def simulate(self, s, r, a):
        return rope_relax_simulate(self.world, s, r, a, self._probe_env)

    def probe_center(self, s):
        return np.asarray(s, dtype=float).reshape(-1, 3).mean(axis=0)

    def apply_transition(self, T, s, s_next, r, r_next, a):
        def tf(x):
            return apply_to_points(T, np.asarray(x, dtype=float).reshape(-1, 3))[0]
        return tf(s), tf(s_next), tf(r).reshape(6), tf(r_next).reshape(6), tf(a).reshape(6)

    def ik(self, T: TransformParams, example: Example, augmented_objects, env):
        rope = augmented_objects[0].points
        return rope_ik(T, rope, example.actions, (env.workspace_lower, env.workspace_upper))

    def contact_pairs(self, example: Example):
        rope = example.objects[0].points
        robot = example.robot.reshape(-1, 2, 3)
        return robot.reshape(-1, 3), np.stack([rope[:, 0], rope[:, -1]], axis=1).reshape(-1, 3)

    def probes(self, rng: np.random.Generator, n: int = 3):
        """Hanging rope in free space, grippers nudged slightly."""
        out = []
        for _ in range(n):
            s, r = hanging_rope(self.world, rng.uniform(-0.05, 0.05, size=3) + [0.0, 0.0, 0.6],
                                rng.uniform(0.22, 0.34), rng.uniform(-math.pi, math.pi), None)
            a = r + rng.uniform(-0.02, 0.02, size=6)
            out.append((s, r, a))
        return out

    def generate(self, n: int, rng: np.random.Generator, n_steps: int = 4, env=None) -> list:
        env = env if env is not None else self.environment()
        return [generate_rope_example(self.world, env, rng, n_steps) for _ in range(n)]


def hanging_rope(world: RopeWorld, center, spacing: float, yaw: float, env):
    """Relaxed rope hanging between two grippers ``spacing`` apart around ``center``."""
    half = 0.5 * spacing
    axis = np.array([math.cos(yaw), math.sin(yaw), 0.0])
    center = np.asarray(center, dtype=float)
    left, right = center - half * axis, center + half * axis
    # V-shaped start with exact segment lengths
    depth = math.sqrt(max((0.5 * world.length) ** 2 - half ** 2, 0.0))
    bottom = center - np.array([0.0, 0.0, depth])
    mid = world.n_nodes // 2
    nodes = np.empty((world.n_nodes, 3))
    for i in range(world.n_nodes):
        if i <= mid:
            nodes[i] = left + (bottom - left) * (i / mid)
        else:
            nodes[i] = bottom + (right - bottom) * ((i - mid) / (world.n_nodes - 1 - mid))
    _relax_nodes(world, nodes, env)
    return nodes, np.concatenate([left, right])


def generate_rope_example(world: RopeWorld, env: EnvironmentField, rng: np.random.Generator,
                          n_steps: int = 4, env_name: str = RopeScenario.env_name,
                          contact_margin: float = 0.002) -> Example:
    lo, hi = np.asarray(world.workspace_lower), np.asarray(world.workspace_upper)
    for _ in range(200):
        center = rng.uniform([-0.25, -0.2, 0.55], [0.25, 0.2, 0.75])
        try:
            s, r = hanging_rope(world, center, rng.uniform(0.2, 0.36), rng.uniform(-0.6, 0.6), env)
            states, robots, actions = [s], [r], []
            for _t in range(n_steps - 1):
                a = r + rng.uniform(-0.04, 0.04, size=6)
                span = np.linalg.norm(a[3:] - a[:3])
                if not 0.08 < span < 0.9 * world.length:
                    raise SimulationError("gripper spacing out of range")
                s, r = rope_relax_simulate(world, s, r, a, env)
                states.append(s)
                robots.append(r)
                actions.append(a)
        except SimulationError:
            continue
        rope = np.stack(states)
        if not _inside(rope.reshape(-1, 3), lo, hi):
            continue
        sdf, _ = env.query(rope.reshape(-1, 3))
        label = int(np.min(sdf) <= contact_margin)
        obj = ObjectTrack("rope", rope, None, 0.0, True)
        return Example("rope", env_name, (obj,), np.array(robots), np.array(actions), label)
    raise SimulationError("could not generate a rope example")


SCENARIO_TYPES = {"planar": PlanarScenario, "rope": RopeScenario}


def get_scenario(name: str):
    try:
        return SCENARIO_TYPES[name]()
    except KeyError:
        raise ValueError(f"unknown scenario {name!r}; expected one of {sorted(SCENARIO_TYPES)}") from None


def contact_loss(scenario, example: Example) -> float:
    rob, obj = scenario.contact_pairs(example)
    return robot_contact_loss(rob, obj)
