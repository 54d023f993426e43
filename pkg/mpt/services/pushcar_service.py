"""
Planar push task: kinematic bicycle car and a passive disk barrel.

Contact is resolved as a minimum-displacement projection of the barrel
centre out of the car polygon grown by the barrel radius. For one disk and
one convex polygon this is the solution of the complementarity problem:
the barrel moves only if it ends up touching the car.

Geometry runs on plain floats; it sits in the innermost rollout loop.
"""

from __future__ import annotations

import logging
import math
from functools import lru_cache, partial
from typing import List, Sequence, Tuple

import numpy as np

from mpt.models.errors import ConfigError, ContactResolutionError, InvalidStateError
from mpt.models.interfaces import DisturbanceModel
from mpt.models.schemas import (
    ActionSet,
    Box,
    DisturbanceBoundParams,
    DisturbanceSpec,
    EnvParams,
    MdpSpec,
    RewardParams,
)
from mpt.services.mdp_service import build_value_estimate, default_action_set, reward_eval
from mpt.utils.numerics import (
    MAX_SPEED,
    MAX_STEER,
    STATE_DIM,
    to_vector,
    wrap_angle,
)

logger = logging.getLogger(__name__)

ANGLE_INDICES: Tuple[int, ...] = (2,)
_ACTION_SLACK = 1e-9

Point = Tuple[float, float]


#Polygon helpers
@lru_cache(maxsize=32)
def _ccw_polygon(vertices: Tuple[Tuple[float, float], ...]) -> Tuple[Point, ...]:
    area = 0.0
    n = len(vertices)
    for i in range(n):
        x0, y0 = vertices[i]
        x1, y1 = vertices[(i + 1) % n]
        area += x0 * y1 - x1 * y0
    if area == 0.0:
        raise ConfigError("car_polygon is degenerate.")
    return tuple(vertices) if area > 0.0 else tuple(reversed(vertices))


def car_polygon_world(x: float, y: float, theta: float, params: EnvParams) -> List[Point]:
    c, s = math.cos(theta), math.sin(theta)
    return [(x + c * bx - s * by, y + s * bx + c * by) for bx, by in _ccw_polygon(params.car_polygon)]


def _closest_on_segment(px: float, py: float, ax: float, ay: float, bx: float, by: float) -> Tuple[float, float, float]:
    ex, ey = bx - ax, by - ay
    length2 = ex * ex + ey * ey
    t = 0.0 if length2 == 0.0 else max(0.0, min(1.0, ((px - ax) * ex + (py - ay) * ey) / length2))
    qx, qy = ax + t * ex, ay + t * ey
    return qx, qy, (px - qx) ** 2 + (py - qy) ** 2


def _inside(px: float, py: float, poly: Sequence[Point]) -> bool:
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        if (bx - ax) * (py - ay) - (by - ay) * (px - ax) < 0.0:
            return False
    return True


def _closest_on_polygon(px: float, py: float, poly: Sequence[Point]) -> Tuple[float, float, float]:
    best = (0.0, 0.0, math.inf)
    n = len(poly)
    for i in range(n):
        ax, ay = poly[i]
        bx, by = poly[(i + 1) % n]
        cand = _closest_on_segment(px, py, ax, ay, bx, by)
        if cand[2] < best[2]:
            best = cand
    return best


def signed_distance(center: Point, poly: Sequence[Point], radius: float) -> float:
    """Gap between a disk and a convex polygon; negative when they overlap."""
    px, py = center
    _, _, d2 = _closest_on_polygon(px, py, poly)
    dist = math.sqrt(d2)
    if _inside(px, py, poly):
        return -dist - radius
    return dist - radius


#Dynamics
def car_step(state: Sequence[float], action: Sequence[float], params: EnvParams) -> Tuple[float, float, float]:
    x, y, theta = float(state[0]), float(state[1]), float(state[2])
    v, delta = float(action[0]), float(action[1])
    x_next = x + params.dt * v * math.cos(theta)
    y_next = y + params.dt * v * math.sin(theta)
    theta_next = wrap_angle(theta + params.dt * (v / params.wheelbase) * math.tan(delta))
    return x_next, y_next, theta_next


def contact_resolve(barrel_prev: Point, car_next: Tuple[float, float, float], params: EnvParams) -> Point:
    px, py = float(barrel_prev[0]), float(barrel_prev[1])
    r = params.barrel_radius
    poly = car_polygon_world(car_next[0], car_next[1], car_next[2], params)
    qx, qy, d2 = _closest_on_polygon(px, py, poly)
    inside = _inside(px, py, poly)

    if not inside:
        dist = math.sqrt(d2)
        if dist >= r:
            return px, py
        nx, ny = (px - qx) / dist, (py - qy) / dist
        resolved = (qx + r * nx, qy + r * ny)
    else:
        # Nearest point on the boundary of the grown polygon lies on an offset edge.
        resolved = (px, py)
        best = math.inf
        n = len(poly)
        for i in range(n):
            ax, ay = poly[i]
            bx, by = poly[(i + 1) % n]
            ex, ey = bx - ax, by - ay
            length = math.hypot(ex, ey)
            if length == 0.0:
                continue
            ox, oy = r * ey / length, -r * ex / length
            cx, cy, cd2 = _closest_on_segment(px, py, ax + ox, ay + oy, bx + ox, by + oy)
            if cd2 < best:
                best = cd2
                resolved = (cx, cy)

    if not (math.isfinite(resolved[0]) and math.isfinite(resolved[1])):
        raise ContactResolutionError(f"Contact resolution produced a non-finite barrel position {resolved}.")
    if signed_distance(resolved, poly, r) < -params.contact_tol:
        raise ContactResolutionError(
            f"Barrel trapped: no non-penetrating position found near {barrel_prev} for car pose {car_next}."
        )
    return resolved


def _check_action(action: Sequence[float]) -> None:
    if abs(float(action[0])) > MAX_SPEED + _ACTION_SLACK or abs(float(action[1])) > MAX_STEER + _ACTION_SLACK:
        raise InvalidStateError(f"Action {list(action)} exceeds the input limits.")


def env_step(
    state: Sequence[float], action: Sequence[float], params: EnvParams, check_limits: bool = True
) -> np.ndarray:
    if check_limits:
        _check_action(action)
    car_next = car_step(state, action, params)
    barrel = contact_resolve((state[3], state[4]), car_next, params)
    return np.array([car_next[0], car_next[1], car_next[2], barrel[0], barrel[1]], dtype=np.float64)


def contact_flag(state: Sequence[float], action: Sequence[float], params: EnvParams) -> bool:
    """True when stepping pushes the barrel."""
    nxt = env_step(state, action, params, check_limits=False)
    return nxt[3] != float(state[3]) or nxt[4] != float(state[4])


#Constraint set
def collision_check(state: Sequence[float], params: EnvParams) -> bool:
    x, y, theta, xo, yo = (float(v) for v in state[:5])
    poly = car_polygon_world(x, y, theta, params)
    ws = params.workspace
    r = params.barrel_radius
    lo_x, lo_y = ws.low
    hi_x, hi_y = ws.high

    for vx, vy in poly:
        if vx < lo_x or vx > hi_x or vy < lo_y or vy > hi_y:
            return True
    if xo - r < lo_x or xo + r > hi_x or yo - r < lo_y or yo + r > hi_y:
        return True

    for obs in params.obstacles:
        cx, cy = obs.center
        if math.hypot(xo - cx, yo - cy) < r + obs.radius:
            return True
        if _inside(cx, cy, poly):
            return True
        _, _, d2 = _closest_on_polygon(cx, cy, poly)
        if math.sqrt(d2) < obs.radius:
            return True
    return False


def _admissible(state: np.ndarray, params: EnvParams) -> bool:
    return not collision_check(state, params)


#Disturbances (real-world term d)
class ZeroDisturbance:

    def __init__(self, state_dim: int = STATE_DIM) -> None:
        self.state_dim = state_dim

    def __call__(self, state: np.ndarray, action: np.ndarray, k: int) -> np.ndarray:
        return np.zeros(self.state_dim)

    def drift_bound(self) -> float:
        return 0.0

    def bound_params(self, eps_est: float = 0.0) -> DisturbanceBoundParams:
        return DisturbanceBoundParams(eta=0.0, eps_est=eps_est, sigma_bar=0.0)


class ConstantDisturbance:

    def __init__(self, vector: Sequence[float]) -> None:
        self.vector = to_vector(vector, name="disturbance")

    def __call__(self, state: np.ndarray, action: np.ndarray, k: int) -> np.ndarray:
        return self.vector.copy()

    def drift_bound(self) -> float:
        return 0.0

    def bound_params(self, eps_est: float = 0.0) -> DisturbanceBoundParams:
        return DisturbanceBoundParams(eta=0.0, eps_est=eps_est, sigma_bar=float(np.linalg.norm(self.vector)))


class SinusoidalDriftDisturbance:
    """d(k) = amplitude * sin(2 pi k / period) along one state axis."""

    def __init__(self, amplitude: float, period: float, axis: int = 2, state_dim: int = STATE_DIM) -> None:
        if period <= 0.0:
            raise ConfigError("drift period must be > 0.")
        if not 0 <= axis < state_dim:
            raise ConfigError(f"drift axis {axis} out of range.")
        self.amplitude = amplitude
        self.period = period
        self.axis = axis
        self.state_dim = state_dim

    def __call__(self, state: np.ndarray, action: np.ndarray, k: int) -> np.ndarray:
        d = np.zeros(self.state_dim)
        d[self.axis] = self.amplitude * math.sin(2.0 * math.pi * k / self.period)
        return d

    def drift_bound(self) -> float:
        return 2.0 * abs(self.amplitude) * abs(math.sin(math.pi / self.period))

    def bound_params(self, eps_est: float = 0.0) -> DisturbanceBoundParams:
        return DisturbanceBoundParams(eta=self.drift_bound(), eps_est=eps_est, sigma_bar=abs(self.amplitude))


def build_disturbance(spec: DisturbanceSpec) -> DisturbanceModel:
    if spec.kind == "zero":
        return ZeroDisturbance()
    if spec.kind == "constant":
        return ConstantDisturbance(to_vector(spec.vector, STATE_DIM, name="disturbance vector"))
    if spec.kind == "sinusoidal":
        return SinusoidalDriftDisturbance(spec.amplitude, spec.period, spec.axis)
    raise ConfigError(f"Unknown disturbance kind: {spec.kind!r}.")


def add_disturbance(
    nominal_next: np.ndarray,
    d: DisturbanceModel,
    x: np.ndarray,
    u: np.ndarray,
    k: int,
    angle_indices: Sequence[int] = ANGLE_INDICES,
) -> np.ndarray:
    nxt = np.asarray(nominal_next, dtype=np.float64) + d(x, u, k)
    for i in angle_indices:
        nxt[i] = wrap_angle(float(nxt[i]))
    return nxt


#Model wrappers
class PushCarDynamics:
    """F_nom of the push task as a DynamicsModel.

    Input limits are enforced by PushCarWorld only; the model is also
    evaluated at finite-difference stencils just past the limits.
    """

    angle_indices = ANGLE_INDICES

    def __init__(self, params: EnvParams) -> None:
        self.params = params

    def step(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        return env_step(state, action, self.params, check_limits=False)

    def contact_flag(self, state: np.ndarray, action: np.ndarray) -> bool:
        return contact_flag(state, action, self.params)


class PushCarWorld:
    """The physical system: nominal step plus the unknown disturbance."""

    angle_indices = ANGLE_INDICES

    def __init__(self, params: EnvParams, disturbance: DisturbanceModel | None = None) -> None:
        self.params = params
        self.disturbance = disturbance if disturbance is not None else ZeroDisturbance()

    def step(self, state: np.ndarray, action: np.ndarray, k: int) -> Tuple[np.ndarray, bool]:
        nominal = env_step(state, action, self.params)
        touched = nominal[3] != float(state[3]) or nominal[4] != float(state[4])
        return add_disturbance(nominal, self.disturbance, state, action, k), bool(touched)

    def reward(self, state: np.ndarray, action: np.ndarray) -> float:
        return reward_eval(state, action, RewardParams(self.params.goal, self.params.reward_normalizer))


def normalize_initial_state(state: Sequence[float], params: EnvParams) -> np.ndarray:
    """Wrap the heading and push an overlapping barrel out of the car."""
    s = to_vector(state, STATE_DIM, name="initial state")
    car = (float(s[0]), float(s[1]), wrap_angle(float(s[2])))
    barrel = contact_resolve((s[3], s[4]), car, params)
    if barrel != (float(s[3]), float(s[4])):
        logger.info("Initial barrel overlapped the car; moved from %s to %s.", (s[3], s[4]), barrel)
    return np.array([car[0], car[1], car[2], barrel[0], barrel[1]], dtype=np.float64)


def state_bounds(params: EnvParams) -> Box:
    (lx, ly), (hx, hy) = params.workspace.low, params.workspace.high
    return Box((lx, ly, -math.pi, lx, ly), (hx, hy, math.pi, hx, hy))


def make_pushcar_mdp(
    params: EnvParams,
    gamma: float,
    dynamics: object | None = None,
    action_set: ActionSet | None = None,
    value_estimate: str = "zero",
) -> MdpSpec:
    actions = action_set if action_set is not None else default_action_set()
    reward = partial(reward_eval, reward_params=RewardParams(params.goal, params.reward_normalizer))
    return MdpSpec(
        state_dim=STATE_DIM,
        action_dim=actions.bounds.dim,
        state_bounds=state_bounds(params),
        action_bounds=actions.bounds,
        gamma=gamma,
        dynamics=dynamics if dynamics is not None else PushCarDynamics(params),
        reward=reward,
        action_set=actions,
        value_estimate=build_value_estimate(value_estimate, reward, gamma, actions.bounds.dim),
        constraint=partial(_admissible, params=params),
    )
