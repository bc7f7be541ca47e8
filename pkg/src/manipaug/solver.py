"""Step-and-project search over transform parameters.

Starting from the identity, the transform alternates between a bounded step
toward a uniformly drawn target and a short gradient descent on the
projection objective that pulls it back to plausible augmentations.
"""

from __future__ import annotations

from dataclasses import asdict, dataclass, field

import numpy as np

from .objectives import ObjectiveReport
from .transforms import TransformBounds, TransformParams, angle_slice, distance, identity, sample_uniform, step_towards

CONVERGED = "converged"
MAX_OUTER = "max_outer"
STALLED = "projection_stalled"
MIN_RHO = 0.01


@dataclass(frozen=True)
class SolverConfig:
    N_p: int = 5
    M_p: int = 25
    delta_p: float = 0.001
    epsilon_p: float = 0.0003
    lr: float = 1.0
    lr_decay: float = 0.9
    step_fraction: float = 0.25
    w_rot: float = 1.0
    precondition: bool = True

    def __post_init__(self):
        if self.N_p < 1 or self.M_p < 0:
            raise ValueError("N_p must be >= 1 and M_p >= 0")
        if not self.lr > 0:
            raise ValueError("lr must be positive")
        if not 0 < self.lr_decay <= 1:
            raise ValueError("lr_decay must be in (0, 1]")
        if not 0 < self.step_fraction <= 1:
            raise ValueError("step_fraction must be in (0, 1]")

    def to_json(self) -> dict:
        return asdict(self)


@dataclass
class TraceStep:
    outer: int
    stepped: TransformParams
    projected: TransformParams
    inner_steps: int
    values: dict

    def to_json(self) -> dict:
        return {
            "outer": self.outer,
            "stepped": self.stepped.values.tolist(),
            "projected": self.projected.values.tolist(),
            "inner_steps": self.inner_steps,
            "values": self.values,
        }


@dataclass
class SolveTrace:
    target: TransformParams
    steps: list = field(default_factory=list)
    reason: str = MAX_OUTER

    def to_json(self) -> dict:
        return {
            "target": self.target.values.tolist(),
            "center": self.target.center.tolist(),
            "reason": self.reason,
            "steps": [s.to_json() for s in self.steps],
        }


class ProjectionStalled(RuntimeError):
    pass


def angle_scale(objective, T: TransformParams, cfg: SolverConfig) -> np.ndarray:
    """Per-parameter step scale for point-based terms: 1 for translations,
    1/rho**2 for angles.

    ``rho`` is the radius of gyration of the objective's points about the
    rotation center, so angle steps are taken in units of arc length there.
    Without this, rotations converge about (extent / rho)**2 times slower
    than translations. Gradient parts defined directly on the parameters
    (the learned validity penalty) are not rescaled.
    """
    scale = np.ones(T.d)
    points = getattr(objective, "points", None)
    if not cfg.precondition or points is None or len(points) == 0:
        return scale
    rho2 = float(np.mean(np.sum((points - T.center) ** 2, axis=1)))
    scale[angle_slice(T.d)] = 1.0 / max(rho2, MIN_RHO ** 2)
    return scale


def project(T: TransformParams, objective, bounds: TransformBounds, cfg: SolverConfig):
    """Clamped gradient descent on the projection objective.

    Returns ``(T, steps, report)`` where ``steps`` counts the updates applied
    and ``report`` is the objective at the returned T. The returned T is the
    best iterate seen, so projection never increases the objective. Raises
    ProjectionStalled on a non-finite gradient.
    """
    lr = cfg.lr
    scale = angle_scale(objective, T, cfg)
    report = objective(T)
    best = (report.total, T, report)
    steps = 0
    while True:
        grad = report.gradient
        if not np.all(np.isfinite(grad)):
            raise ProjectionStalled(f"non-finite gradient after {steps} steps")
        if report.total < best[0]:
            best = (report.total, T, report)
        if steps >= cfg.M_p or np.linalg.norm(grad) < cfg.epsilon_p:
            return best[1], steps, best[2]
        direct = report.param_gradient if report.param_gradient is not None else 0.0
        step = scale * (grad - direct) + direct
        T = T.with_values(bounds.clamp(T.values - lr * step), check=False)
        lr *= cfg.lr_decay
        steps += 1
        report = objective(T)


def aug_state(objective, bounds: TransformBounds, cfg: SolverConfig, rng: np.random.Generator, center):
    """Sample a target and step-and-project toward it from the identity.

    Returns ``(T, trace, report)``; ``report`` is the objective at T (None if
    the projection stalled).
    """
    target = sample_uniform(bounds, rng, center)
    T = identity(bounds.d, center)
    trace = SolveTrace(target)
    max_step = cfg.step_fraction * distance(T, target, cfg.w_rot)
    report: ObjectiveReport | None = None
    for outer in range(cfg.N_p):
        T_old = T
        stepped = step_towards(T, target, max_step, cfg.w_rot)
        try:
            T, inner, report = project(stepped, objective, bounds, cfg)
        except ProjectionStalled:
            trace.reason = STALLED
            return stepped, trace, None
        trace.steps.append(TraceStep(outer, stepped, T, inner, dict(report.values)))
        if distance(T, T_old, cfg.w_rot) < cfg.delta_p:
            trace.reason = CONVERGED
            break
    else:
        trace.reason = MAX_OUTER
    return T, trace, report
