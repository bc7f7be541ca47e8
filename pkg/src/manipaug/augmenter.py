"""Full augmentation of one example: search a transform, move the objects,
rebuild the robot, and fall back to the source whenever anything is off.

Rejected augmentations carry the source example itself, so writing them out
reproduces the input record byte for byte.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np

from .datamodel import AugmentedExample, Example, decompose_moving, moved_centroid, stationary_primitives, \
    transform_objects
from .geometry import EnvironmentField, with_extra_primitives
from .objectives import ObjectiveConfig, ProjectionObjective
from .solver import SolverConfig, aug_state
from .transforms import TransformBounds, TransformParams, identity

DEFAULT_K = 25
STATE_SLACK_VOXELS = 10
BBOX_TOL = 1e-6


@dataclass
class AugmentationBatch:
    source: Example
    augmented: list
    transforms: list = field(default_factory=list)

    @property
    def accepted(self) -> int:
        return sum(a.accepted for a in self.augmented)

    @property
    def k(self) -> int:
        return len(self.augmented)


def draw_rng(seed: int, example_index: int, draw: int) -> np.random.Generator:
    """Independent stream per (seed, example, draw); order of execution is irrelevant."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(example_index), int(draw)]))


class FieldCache:
    """Static field plus stationary objects of an example, memoized."""

    def __init__(self, env: EnvironmentField, size: int = 64):
        self.env = env
        self.size = size
        self._cache: dict = {}

    def __call__(self, example: Example, stationary_ids) -> EnvironmentField:
        prims = tuple(stationary_primitives(example, stationary_ids))
        key = tuple(repr(p.to_json()) for p in prims)
        if key not in self._cache:
            if len(self._cache) >= self.size:
                self._cache.clear()
            self._cache[key] = with_extra_primitives(self.env, prims)
        return self._cache[key]


class Augmenter:
    """Augments examples of one scenario against one environment.

    The environment field only contains the static scene; stationary objects
    of each example are folded into a per-example field on demand.
    """

    def __init__(self, scenario, env: EnvironmentField, objective: ObjectiveConfig | None = None,
                 solver: SolverConfig | None = None, model=None, bounds: TransformBounds | None = None):
        self.scenario = scenario
        self.env = env
        self.objective = objective or ObjectiveConfig()
        self.solver = solver or SolverConfig()
        self.bounds = bounds or self.objective.bounds or scenario.default_bounds()
        if self.bounds.d != scenario.d:
            raise ValueError(f"bounds have {self.bounds.d} parameters, scenario {scenario.name} needs {scenario.d}")
        if "valid" in self.objective.drop:
            model = None
        if model is not None and model.d != scenario.d:
            raise ValueError(f"validity model takes {model.d} parameters, scenario needs {scenario.d}")
        self.model = model
        self.field_for = FieldCache(env)

    def _reject(self, example: Example, T: TransformParams, diagnostics: dict, reason: str) -> AugmentedExample:
        diagnostics["reasons"] = diagnostics.get("reasons", []) + [reason]
        return AugmentedExample(example, example, T, False, diagnostics)

    def augment(self, example: Example, rng: np.random.Generator) -> AugmentedExample:
        if example.scenario != self.scenario.name:
            raise ValueError(f"example is a {example.scenario!r} example, augmenter handles {self.scenario.name!r}")
        moved, stationary = decompose_moving(example)
        if not moved:
            return self._reject(example, identity(self.bounds.d), {}, "no_moved_objects")
        env = self.field_for(example, stationary)
        center = moved_centroid(example, moved)
        objective = ProjectionObjective.for_example(example, env, self.objective, self.model, moved)
        T, trace, report = aug_state(objective, self.bounds, self.solver, rng, center)

        diag = {
            "target": trace.target.values.tolist(),
            "solver": trace.reason,
            "outer_steps": len(trace.steps),
            "inner_steps": sum(s.inner_steps for s in trace.steps),
            "path": [trace.steps[0].stepped.values.tolist()] + [s.projected.values.tolist() for s in trace.steps]
            if trace.steps else [],
        }
        if report is None:
            return self._reject(example, T, diag, "projection_stalled")
        diag.update({
            "values": dict(report.values),
            "mismatch": report.mismatch,
            "n_points": int(objective.points.shape[0]),
            "abs_delta_min_sdf": report.extras["abs_delta_min_sdf"],
        })

        state = transform_objects(example, T, moved)
        points = objective.points
        aug_points = np.concatenate([state.object_by_id(i).points.reshape(-1, points.shape[1]) for i in moved])
        slack = STATE_SLACK_VOXELS * env.resolution
        lo, hi = self.objective.workspace_for(env)
        state_valid = bool(np.all(env.in_grid(aug_points))
                           and np.all(aug_points >= lo - slack) and np.all(aug_points <= hi + slack))
        robot, actions, ik_valid = self.scenario.ik(T, example, state.objects, env)
        diag["state_valid"] = state_valid
        diag["ik_valid"] = bool(ik_valid)

        reasons = []
        if not state_valid:
            reasons.append("state_invalid")
        if not ik_valid:
            reasons.append("ik_invalid")
        if report.mismatch:
            reasons.append("occupancy_mismatch")
        if report.bbox > BBOX_TOL:
            reasons.append("outside_workspace")
        if reasons:
            diag["reasons"] = reasons
            return AugmentedExample(example, example, T, False, diag)
        diag["reasons"] = []
        out = replace(state, robot=np.asarray(robot, dtype=float), actions=np.asarray(actions, dtype=float))
        return AugmentedExample(out, example, T, True, diag)

    def augment_batch(self, example: Example, k: int = DEFAULT_K, seed: int = 0,
                      example_index: int = 0) -> AugmentationBatch:
        if k < 1:
            raise ValueError("k must be >= 1")
        out = [self.augment(example, draw_rng(seed, example_index, j)) for j in range(k)]
        return AugmentationBatch(example, out, [a.transform for a in out])


def augment(example: Example, env: EnvironmentField, objective: ObjectiveConfig, solver: SolverConfig,
            model, scenario, rng: np.random.Generator) -> AugmentedExample:
    return Augmenter(scenario, env, objective, solver, model).augment(example, rng)


def augment_batch(example: Example, env: EnvironmentField, scenario, k: int = DEFAULT_K, seed: int = 0,
                  objective: ObjectiveConfig | None = None, solver: SolverConfig | None = None, model=None,
                  example_index: int = 0) -> AugmentationBatch:
    return Augmenter(scenario, env, objective, solver, model).augment_batch(example, k, seed, example_index)


# ---------------------------------------------------------------------------
# diversity


def kl_per_dimension(values, bounds: TransformBounds, bins: int = 10, smoothing: float = 1.0) -> np.ndarray:
    """Histogram estimate of KL(p || uniform) for each transform parameter.

    ``smoothing`` pseudo-counts are added to every bin. Parameters whose
    bounds collapse to a point get 0.
    """
    values = np.atleast_2d(np.asarray(values, dtype=float))
    if values.size == 0:
        raise ValueError("no transforms to measure")
    if bins < 2:
        raise ValueError("bins must be >= 2")
    if smoothing < 0:
        raise ValueError("smoothing must be nonnegative")
    out = np.zeros(values.shape[1])
    for j in range(values.shape[1]):
        lo, hi = bounds.lower[j], bounds.upper[j]
        if hi <= lo:
            continue
        counts, _ = np.histogram(np.clip(values[:, j], lo, hi), bins=bins, range=(lo, hi))
        p = (counts + smoothing) / (counts.sum() + smoothing * bins)
        nz = p > 0
        out[j] = float(np.sum(p[nz] * np.log(p[nz] * bins)))
    return out


def diversity_kl(transforms, bounds: TransformBounds, bins: int = 10, smoothing: float = 1.0):
    """``(kl, diversity)`` with kl summed over parameters and diversity = exp(-kl)."""
    transforms = list(transforms)
    if not transforms:
        raise ValueError("no transforms to measure")
    values = np.stack([t.values if isinstance(t, TransformParams) else np.asarray(t, dtype=float)
                       for t in transforms])
    kl = float(kl_per_dimension(values, bounds, bins, smoothing).sum())
    return kl, math.exp(-kl)
