"""
Numeric utility functions and physical defaults.

All states and actions are handled as 1-D ``float64`` numpy arrays.
Constants below are desk-scale defaults; none of them is fixed by the
task itself and every one can be overridden from the experiment config.
"""

from __future__ import annotations

import math
from typing import Iterable, Sequence, Tuple

import numpy as np

from mpt.models.errors import InvalidStateError


#Task constants
STATE_DIM = 5
ACTION_DIM = 2
MAX_SPEED = 1.0
MAX_STEER = 0.42

DEFAULT_DT = 0.2
DEFAULT_WHEELBASE = 0.3
DEFAULT_BARREL_RADIUS = 0.15
DEFAULT_GOAL: Tuple[float, float] = (4.0, 0.0)
DEFAULT_WORKSPACE_LOW: Tuple[float, ...] = (-3.0, -3.0)
DEFAULT_WORKSPACE_HIGH: Tuple[float, ...] = (6.0, 3.0)

# Car silhouette in the body frame: 0.4 m x 0.3 m with a chamfered nose.
DEFAULT_CAR_POLYGON: Tuple[Tuple[float, float], ...] = (
    (-0.20, -0.15),
    (0.15, -0.15),
    (0.20, -0.05),
    (0.20, 0.05),
    (0.15, 0.15),
    (-0.20, 0.15),
)

CONTACT_TOL = 1e-6


#Vector helpers
def to_vector(value: Iterable[float] | np.ndarray, dim: int | None = None, name: str = "vector") -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=np.float64).reshape(-1)
    except (TypeError, ValueError) as exc:
        raise InvalidStateError(f"Cannot convert {name} {value!r} to a float vector: {exc}") from exc
    if dim is not None and arr.shape[0] != dim:
        raise InvalidStateError(f"{name} must have dimension {dim}, got {arr.shape[0]}.")
    return arr


def require_finite(arr: np.ndarray, name: str = "state") -> np.ndarray:
    if not np.all(np.isfinite(arr)):
        raise InvalidStateError(f"{name} has non-finite components: {arr.tolist()!r}.")
    return arr


def wrap_angle(theta: float) -> float:
    """Wrap an angle into (-pi, pi]; angles already in range are returned unchanged."""
    if -math.pi < theta <= math.pi:
        return theta
    wrapped = math.fmod(theta + math.pi, 2.0 * math.pi)
    if wrapped <= 0.0:
        wrapped += 2.0 * math.pi
    return wrapped - math.pi


def state_difference(a: np.ndarray, b: np.ndarray, angle_indices: Sequence[int] = ()) -> np.ndarray:
    """``a - b`` with the listed components wrapped into (-pi, pi]."""
    diff = np.asarray(a, dtype=np.float64) - np.asarray(b, dtype=np.float64)
    for i in angle_indices:
        diff[i] = wrap_angle(float(diff[i]))
    return diff


def tuple_of_floats(value: Iterable[float]) -> Tuple[float, ...]:
    return tuple(float(v) for v in value)


def symmetrize(m: np.ndarray) -> np.ndarray:
    return 0.5 * (m + m.T)


def format_float(value: float) -> str:
    """Fixed-precision text for CSV cells; identical inputs give identical bytes."""
    return format(float(value), ".10g")
