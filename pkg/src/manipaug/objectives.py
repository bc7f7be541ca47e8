"""Objective terms for projecting a transform back onto plausible augmentations.

Every term is evaluated on the moved-object points after applying T. Terms
return a gradient with respect to the points (shape ``(N, k)``); ``pullback``
turns a point gradient into a gradient with respect to ``T.values`` through the
rigid-transform chain rule.

Points carry an ``offset`` (object radius plus contact margin): a point's
clearance is ``sdf(p) - offset``, and it counts as occupied when the clearance
is <= 0. Rope nodes have radius 0, so for them this is the plain sdf test.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ._grid import assemble
from .datamodel import Example, decompose_moving, extract_points
from .geometry import EnvironmentField
from .transforms import (TransformBounds, TransformParams, apply_to_points, rotation_derivatives,
                         rotation_matrix, space_dim)

DEFAULT_BETA = (0.05, 1.0, 1.0, 0.1)
TERMS = ("bbox", "valid", "occ", "dmd")
DROPPABLE = ("occ", "dmd", "valid")
DEFAULT_CONTACT_MARGIN = 0.002
DEFAULT_OCC_OVERSHOOT = 0.004


@dataclass(frozen=True)
class ObjectiveConfig:
    beta: tuple = DEFAULT_BETA
    bounds: TransformBounds | None = None
    workspace: tuple | None = None
    contact_margin: float = DEFAULT_CONTACT_MARGIN
    occ_overshoot: float = DEFAULT_OCC_OVERSHOOT
    drop: frozenset = frozenset()

    def __post_init__(self):
        beta = tuple(float(b) for b in self.beta)
        if len(beta) != 4 or any(b < 0 for b in beta):
            raise ValueError("beta must be four nonnegative weights")
        drop = frozenset(self.drop)
        unknown = drop - set(TERMS)
        if unknown:
            raise ValueError(f"unknown objective terms {sorted(unknown)}")
        if self.contact_margin < 0 or self.occ_overshoot < 0:
            raise ValueError("contact_margin and occ_overshoot must be nonnegative")
        object.__setattr__(self, "beta", beta)
        object.__setattr__(self, "drop", drop)

    def weight(self, term: str) -> float:
        if term in self.drop:
            return 0.0
        return self.beta[TERMS.index(term)]

    def workspace_for(self, env: EnvironmentField):
        if self.workspace is not None:
            lo, hi = self.workspace
            return np.asarray(lo, dtype=float), np.asarray(hi, dtype=float)
        return env.workspace_lower, env.workspace_upper


@dataclass(frozen=True, eq=False)
class ObjectiveReport:
    values: dict
    contributions: dict
    gradient: np.ndarray
    mismatch: int
    out_of_grid: bool = False
    extras: dict = field(default_factory=dict)
    # part of ``gradient`` defined directly on the parameters (not via points)
    param_gradient: np.ndarray | None = None

    @property
    def total(self) -> float:
        return float(sum(self.contributions.values()))

    @property
    def bbox(self) -> float:
        return self.values["bbox"]

    @property
    def valid(self) -> float:
        return self.values["valid"]

    @property
    def occ_residual(self) -> float:
        return self.values["occ"]

    @property
    def dmd(self) -> float:
        return self.values["dmd"]


def pullback(T: TransformParams, points, point_grad) -> np.ndarray:
    """Chain rule: gradient w.r.t. transformed points -> gradient w.r.t. T.values.

    ``points`` are the ORIGINAL (untransformed) points.
    """
    k = space_dim(T.d)
    points = np.asarray(points, dtype=float).reshape(-1, k)
    g = np.asarray(point_grad, dtype=float).reshape(-1, k)
    out = np.empty(T.d)
    out[:k] = g.sum(axis=0)
    dR = rotation_derivatives(T.angles)
    out[k:] = np.einsum("ni,aij,nj->a", g, dR, points - T.center)
    return out


def _maybe_pullback(T, points_orig, g):
    if T is None:
        return g
    return pullback(T, points_orig, g)


def bbox_loss(points_aug, workspace, T: TransformParams | None = None, points_orig=None):
    """Hinge penalty for coordinates outside ``workspace = (lower, upper)``.

    Returns ``(value, gradient)``. The gradient is w.r.t. the points unless T
    and the original points are given, in which case it is w.r.t. T.values.
    """
    p = np.asarray(points_aug, dtype=float)
    lo, hi = (np.asarray(w, dtype=float) for w in workspace)
    above = np.maximum(p - hi, 0.0)
    below = np.maximum(lo - p, 0.0)
    value = float(above.sum() + below.sum())
    g = (above > 0).astype(float) - (below > 0).astype(float)
    return value, _maybe_pullback(T, points_orig, g)


def occ_gradient(clear_orig, clear_aug, sdf_grad, overshoot: float = 0.0):
    """Occupancy-matching descent field.

    ``clear_*`` are per-point clearances (sdf minus offset). For each point
    whose occupancy bit differs from the original, the returned point
    gradient has magnitude ``|clear_aug| + overshoot`` along the sdf gradient,
    signed so that descending it restores the original bit: a point that lost
    contact is pulled toward the surface, a newly penetrating point is pushed
    out. ``overshoot`` aims a little past the threshold so that gradient
    descent actually crosses it instead of approaching it asymptotically.
    Returns ``(mismatch_count, point_gradient, residual)`` with residual
    ``sum |clear_aug|`` over mismatched points.
    """
    clear_orig = np.asarray(clear_orig, dtype=float)
    clear_aug = np.asarray(clear_aug, dtype=float)
    mismatch = (clear_orig <= 0) != (clear_aug <= 0)
    # lost contact: clear_aug > 0, move down the sdf; new penetration: move up
    scale = np.where(clear_aug > 0, clear_aug + overshoot, clear_aug - overshoot)
    g = np.where(mismatch[:, None], scale[:, None] * np.asarray(sdf_grad, dtype=float), 0.0)
    residual = float(np.abs(clear_aug[mismatch]).sum())
    return int(mismatch.sum()), g, residual


def occ_gradient_points(points_orig, points_aug, env: EnvironmentField, offsets=0.0, T=None,
                        overshoot: float = 0.0):
    """``occ_gradient`` starting from raw point sequences."""
    points_orig = np.asarray(points_orig, dtype=float)
    points_aug = np.asarray(points_aug, dtype=float)
    offsets = np.broadcast_to(np.asarray(offsets, dtype=float), points_orig.shape[:1])
    v_orig, _ = env.query(points_orig)
    v_aug, grad, _ = env.query_with_gradient(points_aug)
    count, g, residual = occ_gradient(v_orig - offsets, v_aug - offsets, grad, overshoot)
    return count, _maybe_pullback(T, points_orig, g), residual


def dmd_value(sdf_min_orig: float, sdf_min_aug: float, grad_min_aug):
    """Squared change of the minimum distance and its gradient at the tracked point."""
    delta = sdf_min_orig - sdf_min_aug
    return delta * delta, -2.0 * delta * np.asarray(grad_min_aug, dtype=float)


def dmd_loss(points_orig, points_aug, env: EnvironmentField, offsets=0.0, T=None):
    """Change in minimum clearance between original and augmented points.

    The tracked point is the argmin over the ORIGINAL points. Returns
    ``(value, gradient)`` with the gradient nonzero only at the tracked point.
    """
    points_orig = np.asarray(points_orig, dtype=float)
    points_aug = np.asarray(points_aug, dtype=float)
    if points_orig.shape[0] == 0:
        raise ValueError("dmd_loss needs at least one point")
    offsets = np.broadcast_to(np.asarray(offsets, dtype=float), points_orig.shape[:1])
    v_orig, _ = env.query(points_orig)
    i = int(np.argmin(v_orig - offsets))
    v_aug, grad, _ = env.query_with_gradient(points_aug[i:i + 1])
    value, gi = dmd_value(v_orig[i], v_aug[0], grad[0])
    g = np.zeros_like(points_aug)
    g[i] = gi
    return value, _maybe_pullback(T, points_orig, g)


def valid_loss(T: TransformParams, model=None):
    if model is None:
        return 0.0, np.zeros(T.d)
    return model.evaluate_with_gradient(T.values)


def robot_contact_loss(robot_points, object_points) -> float:
    robot_points = np.asarray(robot_points, dtype=float)
    object_points = np.asarray(object_points, dtype=float)
    if robot_points.shape != object_points.shape:
        raise ValueError(f"contact pairs misaligned: {robot_points.shape} vs {object_points.shape}")
    return float(np.sum((robot_points - object_points) ** 2))


class ProjectionObjective:
    """Weighted sum of the four projection terms for one example.

    Everything that depends only on the original example (points, their
    occupancy, the tracked minimum-distance point) is computed once here.
    """

    def __init__(self, points, offsets, env: EnvironmentField, config: ObjectiveConfig, model=None):
        self.points = np.asarray(points, dtype=float)
        self.points = np.ascontiguousarray(self.points)
        self.offsets = np.broadcast_to(np.asarray(offsets, dtype=float), self.points.shape[:1]).copy()
        if self.points.shape[0] == 0:
            raise ValueError("no moved points to project")
        self.env = env
        self.config = config
        self.model = model
        self.workspace = config.workspace_for(env)
        sdf_orig, _ = env.query(self.points)
        self.clear_orig = sdf_orig - self.offsets
        self.min_index = int(np.argmin(self.clear_orig))
        self.min_sdf = float(sdf_orig[self.min_index])
        self._lo, self._hi = (np.asarray(w, dtype=float) for w in self.workspace)
        self._weights = {t: config.weight(t) for t in TERMS}

    @classmethod
    def for_example(cls, example: Example, env: EnvironmentField, config: ObjectiveConfig, model=None,
                    moved_ids=None):
        ps = extract_points(example, moved_ids)
        return cls(ps.points, ps.radius + config.contact_margin, env, config, model)

    def __call__(self, T: TransformParams) -> ObjectiveReport:
        w = self._weights
        rel = self.points - T.center
        aug = rel @ rotation_matrix(T.angles).T + (T.center + T.translation)
        sdf_aug, sdf_grad, outside = self.env.query_with_gradient(aug)
        # compiled equivalent of bbox_loss + occ_gradient + dmd_value + pullback
        gradient = np.empty(T.d)
        bbox, residual, dmd, mismatch = assemble(
            aug, rel, rotation_derivatives(T.angles), sdf_aug, sdf_grad, self.offsets, self.clear_orig,
            self.config.occ_overshoot, w["bbox"], w["occ"], w["dmd"], self._lo, self._hi, self.min_index,
            self.min_sdf, gradient)
        valid, grad_valid = valid_loss(T, self.model)
        g_param = w["valid"] * np.asarray(grad_valid, dtype=float)
        gradient += g_param

        values = {"bbox": bbox, "valid": float(valid), "occ": residual, "dmd": dmd}
        contributions = {t: w[t] * values[t] for t in TERMS}
        delta = abs(self.min_sdf - float(sdf_aug[self.min_index]))
        return ObjectiveReport(values, contributions, gradient, int(mismatch), bool(outside.any()),
                               {"abs_delta_min_sdf": delta}, g_param)

    def reference(self, T: TransformParams) -> ObjectiveReport:
        """Same as calling the objective, assembled from the term functions."""
        cfg = self.config
        w = self._weights
        aug, _ = apply_to_points(T, self.points)
        sdf_aug, sdf_grad, outside = self.env.query_with_gradient(aug)
        bbox, g_bbox = bbox_loss(aug, (self._lo, self._hi))
        mismatch, g_occ, residual = occ_gradient(self.clear_orig, sdf_aug - self.offsets, sdf_grad,
                                                 cfg.occ_overshoot)
        i = self.min_index
        dmd, g_min = dmd_value(self.min_sdf, sdf_aug[i], sdf_grad[i])
        valid, grad_valid = valid_loss(T, self.model)
        g_points = w["bbox"] * g_bbox + w["occ"] * g_occ
        g_points[i] += w["dmd"] * g_min
        g_param = w["valid"] * np.asarray(grad_valid, dtype=float)
        gradient = pullback(T, self.points, g_points) + g_param
        values = {"bbox": bbox, "valid": float(valid), "occ": residual, "dmd": float(dmd)}
        contributions = {t: w[t] * values[t] for t in TERMS}
        return ObjectiveReport(values, contributions, gradient, mismatch, bool(np.any(outside)),
                               {"abs_delta_min_sdf": float(abs(self.min_sdf - sdf_aug[i]))}, g_param)


def combined_projection_objective(T: TransformParams, example: Example, env: EnvironmentField,
                                  config: ObjectiveConfig, model=None, moved_ids=None) -> ObjectiveReport:
    if moved_ids is None:
        moved_ids = decompose_moving(example)[0]
    return ProjectionObjective.for_example(example, env, config, model, moved_ids)(T)
