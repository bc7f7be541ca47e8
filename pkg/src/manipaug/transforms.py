"""Rigid-body transform parameters for SE(2) and SE(3).

A transform is a flat parameter vector plus the point it rotates about:

    d=3  (tx, ty, theta)
    d=6  (tx, ty, tz, roll, pitch, yaw)

Points map as ``p -> R (p - center) + center + t``. Velocities only rotate.
SE(3) rotations use intrinsic roll-pitch-yaw, i.e. ``R = Rx(roll) @ Ry(pitch) @
Rz(yaw)``. Every angle is kept in [-pi/2, pi/2], which makes the
parameterization unique and lets a plain weighted Euclidean norm act as a
distance between transforms.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

HALF_PI = np.pi / 2
_ANGLE_TOL = 1e-12

SUPPORTED_DIMS = (3, 6)


def angle_slice(d: int) -> slice:
    if d == 3:
        return slice(2, 3)
    if d == 6:
        return slice(3, 6)
    raise ValueError(f"unsupported transform dimension {d}; expected 3 or 6")


def space_dim(d: int) -> int:
    """Spatial dimension of the points a d-parameter transform acts on."""
    angle_slice(d)
    return 2 if d == 3 else 3


def _frozen(a) -> np.ndarray:
    out = np.array(a, dtype=float)
    out.setflags(write=False)
    return out


@dataclass(frozen=True, eq=False)
class TransformParams:
    values: np.ndarray
    center: np.ndarray

    def __post_init__(self):
        values = _frozen(self.values).reshape(-1)
        d = values.shape[0]
        sl = angle_slice(d)
        if not np.all(np.isfinite(values)):
            raise ValueError("transform parameters must be finite")
        if np.any(np.abs(values[sl]) > HALF_PI + _ANGLE_TOL):
            raise ValueError(f"angles {values[sl]} outside [-pi/2, pi/2]")
        center = _frozen(self.center).reshape(-1)
        if center.shape[0] != space_dim(d):
            raise ValueError(f"center has dimension {center.shape[0]}, transform needs {space_dim(d)}")
        if not np.all(np.isfinite(center)):
            raise ValueError("rotation center must be finite")
        object.__setattr__(self, "values", values)
        object.__setattr__(self, "center", center)

    @property
    def d(self) -> int:
        return self.values.shape[0]

    @property
    def translation(self) -> np.ndarray:
        return self.values[: space_dim(self.d)]

    @property
    def angles(self) -> np.ndarray:
        return self.values[angle_slice(self.d)]

    def with_values(self, values, check: bool = True) -> TransformParams:
        """Same center, new parameters. ``check=False`` skips validation for
        values the caller has already clamped into valid bounds."""
        if check:
            return TransformParams(values, self.center)
        out = object.__new__(TransformParams)
        object.__setattr__(out, "values", _frozen(values))
        object.__setattr__(out, "center", self.center)
        return out

    def __eq__(self, other):
        if not isinstance(other, TransformParams):
            return NotImplemented
        return np.array_equal(self.values, other.values) and np.array_equal(self.center, other.center)

    def __hash__(self):
        return hash((self.values.tobytes(), self.center.tobytes()))

    def __repr__(self):
        return f"TransformParams(values={self.values.tolist()}, center={self.center.tolist()})"


@dataclass(frozen=True, eq=False)
class TransformBounds:
    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lower = _frozen(self.lower).reshape(-1)
        upper = _frozen(self.upper).reshape(-1)
        if lower.shape != upper.shape:
            raise ValueError("lower and upper bounds differ in length")
        sl = angle_slice(lower.shape[0])
        if np.any(lower > upper):
            raise ValueError("lower bound exceeds upper bound")
        if np.any(lower[sl] < -HALF_PI - _ANGLE_TOL) or np.any(upper[sl] > HALF_PI + _ANGLE_TOL):
            raise ValueError("angle bounds must lie within [-pi/2, pi/2]")
        object.__setattr__(self, "lower", lower)
        object.__setattr__(self, "upper", upper)

    @property
    def d(self) -> int:
        return self.lower.shape[0]

    def clamp(self, values: np.ndarray) -> np.ndarray:
        return np.clip(values, self.lower, self.upper)

    def scaled(self, alpha: float) -> TransformBounds:
        return TransformBounds(alpha * self.lower, alpha * self.upper)

    def __eq__(self, other):
        if not isinstance(other, TransformBounds):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __repr__(self):
        return f"TransformBounds(lower={self.lower.tolist()}, upper={self.upper.tolist()})"


def identity(d: int, center=None) -> TransformParams:
    if d not in SUPPORTED_DIMS:
        raise ValueError(f"unsupported transform dimension {d}; expected 3 or 6")
    if center is None:
        center = np.zeros(space_dim(d))
    return TransformParams(np.zeros(d), center)


def sample_uniform(bounds: TransformBounds, rng: np.random.Generator, center=None) -> TransformParams:
    """Draw each parameter independently from U[lower_i, upper_i]."""
    values = rng.uniform(bounds.lower, bounds.upper)
    # degenerate intervals come back exactly at the bound
    values = np.where(bounds.lower == bounds.upper, bounds.lower, values)
    return TransformParams(values, np.zeros(space_dim(bounds.d)) if center is None else center)


def _rx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[1.0, 0.0, 0.0], [0.0, c, -s], [0.0, s, c]])


def _ry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, 0.0, s], [0.0, 1.0, 0.0], [-s, 0.0, c]])


def _rz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[c, -s, 0.0], [s, c, 0.0], [0.0, 0.0, 1.0]])


def _drx(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[0.0, 0.0, 0.0], [0.0, -s, -c], [0.0, c, -s]])


def _dry(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, 0.0, c], [0.0, 0.0, 0.0], [-c, 0.0, -s]])


def _drz(a):
    c, s = np.cos(a), np.sin(a)
    return np.array([[-s, -c, 0.0], [c, -s, 0.0], [0.0, 0.0, 0.0]])


def rotation_matrix(angles) -> np.ndarray:
    angles = np.asarray(angles, dtype=float).reshape(-1)
    if angles.shape[0] == 1:
        c, s = np.cos(angles[0]), np.sin(angles[0])
        return np.array([[c, -s], [s, c]])
    if angles.shape[0] == 3:
        return _rx(angles[0]) @ _ry(angles[1]) @ _rz(angles[2])
    raise ValueError(f"expected 1 or 3 angles, got {angles.shape[0]}")


def rotation_derivatives(angles) -> np.ndarray:
    """Partial derivatives of the rotation matrix, stacked as (n_angles, k, k)."""
    angles = np.asarray(angles, dtype=float).reshape(-1)
    if angles.shape[0] == 1:
        c, s = np.cos(angles[0]), np.sin(angles[0])
        return np.array([[[-s, -c], [c, -s]]])
    if angles.shape[0] == 3:
        rx, ry, rz = _rx(angles[0]), _ry(angles[1]), _rz(angles[2])
        return np.stack([
            _drx(angles[0]) @ ry @ rz,
            rx @ _dry(angles[1]) @ rz,
            rx @ ry @ _drz(angles[2]),
        ])
    raise ValueError(f"expected 1 or 3 angles, got {angles.shape[0]}")


def _check_points(T: TransformParams, points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float)
    k = space_dim(T.d)
    if points.shape[-1] != k:
        raise ValueError(f"points have dimension {points.shape[-1]}, transform acts on {k}-D points")
    return points


def apply_to_points(T: TransformParams, points, velocities=None):
    """Transform points (any leading shape, last axis spatial) and optional velocities.

    Returns ``(points, velocities)``; the second item is None when no
    velocities were passed.
    """
    points = _check_points(T, points)
    R = rotation_matrix(T.angles)
    out = (points - T.center) @ R.T + T.center + T.translation
    if velocities is None:
        return out, None
    velocities = _check_points(T, velocities)
    return out, velocities @ R.T


def invert_points(T: TransformParams, points, velocities=None):
    """Undo ``apply_to_points`` for the same T."""
    points = _check_points(T, points)
    R = rotation_matrix(T.angles)
    out = (points - T.center - T.translation) @ R + T.center
    if velocities is None:
        return out, None
    return out, _check_points(T, velocities) @ R


def point_jacobian(T: TransformParams, points) -> np.ndarray:
    """d(apply_to_points(T, p)) / d(T.values) for every point, shape (N, k, d)."""
    points = _check_points(T, points).reshape(-1, space_dim(T.d))
    k = points.shape[1]
    n = points.shape[0]
    jac = np.zeros((n, k, T.d))
    jac[:, :, :k] = np.eye(k)
    dR = rotation_derivatives(T.angles)
    rel = points - T.center
    # (n_angles, k, k) x (n, k) -> (n, k, n_angles)
    jac[:, :, k:] = np.einsum("aij,nj->nia", dR, rel)
    return jac


def _weights(d: int, w_rot: float) -> np.ndarray:
    w = np.ones(d)
    w[angle_slice(d)] = w_rot
    return w


def _check_pair(a: TransformParams, b: TransformParams):
    if a.d != b.d:
        raise ValueError(f"transform dimensions differ ({a.d} vs {b.d})")


def distance(a: TransformParams, b: TransformParams, w_rot: float = 1.0) -> float:
    """Weighted Euclidean distance; w_rot converts radians to meter-equivalents."""
    _check_pair(a, b)
    return float(np.linalg.norm((a.values - b.values) * _weights(a.d, w_rot)))


def step_towards(T: TransformParams, target: TransformParams, max_step: float,
                 w_rot: float = 1.0) -> TransformParams:
    """Move T along the straight line to target by at most max_step."""
    if max_step < 0:
        raise ValueError("max_step must be nonnegative")
    _check_pair(T, target)
    dist = distance(T, target, w_rot)
    # relative slack so that fractional steps summing to one land on the target
    if dist <= max_step * (1.0 + 1e-9):
        return target
    frac = max_step / dist
    return T.with_values(T.values + frac * (target.values - T.values))
