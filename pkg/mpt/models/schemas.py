from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Any, Callable, Dict, List, Optional, Tuple

import numpy as np

from mpt.models.errors import ConfigError, InvalidStateError
from mpt.utils.numerics import (
    ACTION_DIM,
    CONTACT_TOL,
    DEFAULT_BARREL_RADIUS,
    DEFAULT_CAR_POLYGON,
    DEFAULT_DT,
    DEFAULT_GOAL,
    DEFAULT_WHEELBASE,
    DEFAULT_WORKSPACE_HIGH,
    DEFAULT_WORKSPACE_LOW,
    MAX_SPEED,
    MAX_STEER,
    STATE_DIM,
    to_vector,
    tuple_of_floats,
    wrap_angle,
)

Matrix = Tuple[Tuple[float, ...], ...]


def _as_matrix(rows: Any) -> Matrix:
    return tuple(tuple(float(v) for v in row) for row in np.atleast_2d(np.asarray(rows, dtype=np.float64)))


def _require_positive_definite(name: str, m: np.ndarray) -> None:
    if m.shape[0] != m.shape[1]:
        raise ConfigError(f"{name} must be square, got shape {m.shape}.")
    if not np.allclose(m, m.T, atol=1e-12):
        raise ConfigError(f"{name} must be symmetric.")
    if np.linalg.eigvalsh(m).min() <= 0.0:
        raise ConfigError(f"{name} must be positive definite.")


#Spaces
@dataclass(frozen=True)
class Box:

    low: Tuple[float, ...]
    high: Tuple[float, ...]

    def __post_init__(self) -> None:
        object.__setattr__(self, "low", tuple_of_floats(self.low))
        object.__setattr__(self, "high", tuple_of_floats(self.high))
        if len(self.low) != len(self.high) or not self.low:
            raise ConfigError("Box bounds must be non-empty and of equal length.")
        if any(lo > hi for lo, hi in zip(self.low, self.high)):
            raise ConfigError(f"Box is empty: low {self.low} exceeds high {self.high}.")

    @property
    def dim(self) -> int:
        return len(self.low)

    @property
    def low_array(self) -> np.ndarray:
        return np.asarray(self.low, dtype=np.float64)

    @property
    def high_array(self) -> np.ndarray:
        return np.asarray(self.high, dtype=np.float64)

    def contains(self, point: np.ndarray, tol: float = 0.0) -> bool:
        p = np.asarray(point, dtype=np.float64)
        return bool(np.all(p >= self.low_array - tol) and np.all(p <= self.high_array + tol))

    def clip(self, point: np.ndarray) -> np.ndarray:
        return np.clip(np.asarray(point, dtype=np.float64), self.low_array, self.high_array)

    def sample(self, rng: np.random.Generator) -> np.ndarray:
        return rng.uniform(self.low_array, self.high_array)

    def diagonal(self) -> float:
        return float(np.linalg.norm(self.high_array - self.low_array))

    def to_dict(self) -> dict:
        return {"low": list(self.low), "high": list(self.high)}


@dataclass(frozen=True)
class ActionSet:

    mode: str
    bounds: Box
    actions: Tuple[Tuple[float, ...], ...] = ()

    def __post_init__(self) -> None:
        if self.mode not in ("discrete", "continuous-box"):
            raise ConfigError(f"Unknown action set mode: {self.mode!r}.")
        actions = tuple(tuple_of_floats(a) for a in self.actions)
        object.__setattr__(self, "actions", actions)
        if self.mode == "discrete":
            if not actions:
                raise ConfigError("A discrete action set needs at least one action.")
            if len(set(actions)) != len(actions):
                raise ConfigError("Discrete action set contains duplicate actions.")
            for a in actions:
                if len(a) != self.bounds.dim or not self.bounds.contains(np.asarray(a)):
                    raise ConfigError(f"Action {a} lies outside the action bounds.")

    @property
    def is_discrete(self) -> bool:
        return self.mode == "discrete"

    def __len__(self) -> int:
        return len(self.actions)

    def vector(self, index: int) -> np.ndarray:
        return np.asarray(self.actions[index], dtype=np.float64)


#Decision problem
def zero_value(state: np.ndarray) -> float:
    return 0.0


@dataclass(frozen=True)
class RewardParams:

    goal: Tuple[float, float]
    D: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "goal", tuple_of_floats(self.goal))
        if not self.D > 0.0:
            raise ConfigError(f"Reward normalizer D must be > 0, got {self.D}.")


@dataclass(frozen=True, eq=False)
class MdpSpec:
    """The tuple <X, U, F, R, D, gamma> plus the terminal value estimate."""

    state_dim: int
    action_dim: int
    state_bounds: Box
    action_bounds: Box
    gamma: float
    dynamics: Any
    reward: Callable[[np.ndarray, np.ndarray], float]
    action_set: ActionSet
    value_estimate: Callable[[np.ndarray], float] = zero_value
    # Extra X-membership test (obstacles); True means the state is admissible.
    constraint: Optional[Callable[[np.ndarray], bool]] = None

    def __post_init__(self) -> None:
        if self.state_dim < 1 or self.action_dim < 1:
            raise ConfigError("state_dim and action_dim must be positive.")
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must satisfy 0 <= gamma < 1, got {self.gamma}.")
        if self.state_bounds.dim != self.state_dim:
            raise ConfigError("state_bounds dimension does not match state_dim.")
        if self.action_bounds.dim != self.action_dim:
            raise ConfigError("action_bounds dimension does not match action_dim.")


#Search
@dataclass(frozen=True)
class SearchParams:

    L: int = 200
    b: int = 7
    K: int = 10
    epsilon_explore: float = 1.0
    rng_seed: int = 0

    def __post_init__(self) -> None:
        if self.L < 1 or self.b < 1 or self.K < 1:
            raise ConfigError(f"L, b and K must be >= 1, got L={self.L}, b={self.b}, K={self.K}.")
        if self.epsilon_explore < 0.0:
            raise ConfigError("epsilon_explore must be >= 0.")

    def to_dict(self) -> dict:
        return {
            "L": self.L,
            "b": self.b,
            "K": self.K,
            "epsilonExplore": self.epsilon_explore,
            "rngSeed": self.rng_seed,
        }


#Control
@dataclass(frozen=True)
class ControllerParams:

    Q: Matrix = field(default_factory=lambda: _as_matrix(np.eye(STATE_DIM)))
    R_cost: Matrix = field(default_factory=lambda: _as_matrix(np.eye(ACTION_DIM)))
    jacobian_step: float = 1e-5
    linearize_at: str = "desired"
    feedback_states: str = "full"
    dare_method: str = "doubling"
    dare_tol: float = 1e-12
    dare_max_iters: int = 100_000

    def __post_init__(self) -> None:
        object.__setattr__(self, "Q", _as_matrix(self.Q))
        object.__setattr__(self, "R_cost", _as_matrix(self.R_cost))
        _require_positive_definite("Q", self.Q_matrix)
        _require_positive_definite("R_cost", self.R_matrix)
        if self.jacobian_step <= 0.0:
            raise ConfigError("jacobian_step must be > 0.")
        if self.linearize_at not in ("desired", "measured"):
            raise ConfigError(f"linearize_at must be 'desired' or 'measured', got {self.linearize_at!r}.")
        if self.feedback_states not in ("full", "car"):
            raise ConfigError(f"feedback_states must be 'full' or 'car', got {self.feedback_states!r}.")
        if self.dare_method not in ("iteration", "doubling"):
            raise ConfigError(f"dare_method must be 'iteration' or 'doubling', got {self.dare_method!r}.")

    @property
    def Q_matrix(self) -> np.ndarray:
        return np.asarray(self.Q, dtype=np.float64)

    @property
    def R_matrix(self) -> np.ndarray:
        return np.asarray(self.R_cost, dtype=np.float64)


@dataclass(frozen=True)
class DisturbanceBoundParams:

    eta: float = 0.0
    eps_est: float = 0.0
    sigma_bar: float = 0.0

    def __post_init__(self) -> None:
        for name in ("eta", "eps_est", "sigma_bar"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"{name} must be >= 0.")


@dataclass(frozen=True, eq=False)
class RiccatiSolution:

    M: np.ndarray
    K_gain: np.ndarray
    A_cl: np.ndarray
    alpha: float
    m_lower: float
    m_upper: float

    def __post_init__(self) -> None:
        if not 0.0 < self.m_lower <= self.m_upper:
            raise InvalidStateError(
                f"Metric bounds must satisfy 0 < m_lower <= m_upper, got {self.m_lower}, {self.m_upper}."
            )
        if not 0.0 <= self.alpha < 1.0:
            raise InvalidStateError(f"Contraction rate must lie in [0, 1), got {self.alpha}.")

    def to_dict(self) -> dict:
        return {
            "M": self.M.tolist(),
            "K": self.K_gain.tolist(),
            "alpha": self.alpha,
            "mLower": self.m_lower,
            "mUpper": self.m_upper,
        }


#Push-car environment
@dataclass(frozen=True)
class CarAction:

    V: float
    delta: float

    def __post_init__(self) -> None:
        if abs(self.V) > MAX_SPEED + 1e-12:
            raise InvalidStateError(f"|V| must be <= {MAX_SPEED}, got {self.V}.")
        if abs(self.delta) > MAX_STEER + 1e-12:
            raise InvalidStateError(f"|delta| must be <= {MAX_STEER}, got {self.delta}.")

    def as_vector(self) -> np.ndarray:
        return np.array([self.V, self.delta], dtype=np.float64)


@dataclass(frozen=True)
class CarBarrelState:

    x: float
    y: float
    theta: float
    x_o: float
    y_o: float

    def __post_init__(self) -> None:
        values = (self.x, self.y, self.theta, self.x_o, self.y_o)
        if not all(math.isfinite(v) for v in values):
            raise InvalidStateError(f"CarBarrelState components must be finite, got {values}.")
        object.__setattr__(self, "theta", wrap_angle(float(self.theta)))

    @classmethod
    def from_vector(cls, vec: Any) -> "CarBarrelState":
        v = to_vector(vec, STATE_DIM, name="state")
        return cls(*(float(c) for c in v))

    def as_vector(self) -> np.ndarray:
        return np.array([self.x, self.y, self.theta, self.x_o, self.y_o], dtype=np.float64)


@dataclass(frozen=True)
class Obstacle:

    center: Tuple[float, float]
    radius: float

    def __post_init__(self) -> None:
        object.__setattr__(self, "center", tuple_of_floats(self.center))
        if self.radius <= 0.0:
            raise ConfigError("Obstacle radius must be > 0.")

    def to_dict(self) -> dict:
        return {"center": list(self.center), "radius": self.radius}


@dataclass(frozen=True)
class EnvParams:

    dt: float = DEFAULT_DT
    wheelbase: float = DEFAULT_WHEELBASE
    car_polygon: Tuple[Tuple[float, float], ...] = DEFAULT_CAR_POLYGON
    barrel_radius: float = DEFAULT_BARREL_RADIUS
    obstacles: Tuple[Obstacle, ...] = ()
    workspace: Box = field(default_factory=lambda: Box(DEFAULT_WORKSPACE_LOW, DEFAULT_WORKSPACE_HIGH))
    goal: Tuple[float, float] = DEFAULT_GOAL
    D: Optional[float] = None
    contact_tol: float = CONTACT_TOL

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ConfigError("dt must be > 0.")
        if self.wheelbase <= 0.0:
            raise ConfigError("wheelbase must be > 0.")
        if self.barrel_radius <= 0.0:
            raise ConfigError("barrel_radius must be > 0.")
        if len(self.car_polygon) < 3:
            raise ConfigError("car_polygon needs at least three vertices.")
        if self.workspace.dim != 2:
            raise ConfigError("workspace must be a 2-D box.")
        object.__setattr__(self, "car_polygon", tuple(tuple_of_floats(v) for v in self.car_polygon))
        object.__setattr__(self, "goal", tuple_of_floats(self.goal))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if self.D is not None and self.D <= 0.0:
            raise ConfigError("D must be > 0.")

    @property
    def reward_normalizer(self) -> float:
        return self.D if self.D is not None else self.workspace.diagonal()

    def to_dict(self) -> dict:
        return {
            "dt": self.dt,
            "wheelbase": self.wheelbase,
            "carPolygon": [list(v) for v in self.car_polygon],
            "barrelRadius": self.barrel_radius,
            "obstacles": [o.to_dict() for o in self.obstacles],
            "workspace": self.workspace.to_dict(),
            "goal": list(self.goal),
            "D": self.reward_normalizer,
        }


#Baselines
@dataclass(frozen=True)
class CemParams:

    population: int
    horizon: int
    init_mean: Matrix
    init_std: Tuple[float, ...]
    iterations: int = 10
    elite_frac: float = 0.10
    std_floor: float = 1e-9

    def __post_init__(self) -> None:
        object.__setattr__(self, "init_mean", _as_matrix(self.init_mean))
        object.__setattr__(self, "init_std", tuple_of_floats(self.init_std))
        if self.population < 1 or self.iterations < 1 or self.horizon < 1:
            raise ConfigError("population, iterations and horizon must be >= 1.")
        if not 0.0 < self.elite_frac <= 1.0:
            raise ConfigError(f"elite_frac must lie in (0, 1], got {self.elite_frac}.")
        if self.population * self.elite_frac < 1.0 - 1e-9:
            raise ConfigError("population * elite_frac must be >= 1.")
        if len(self.init_mean) != self.horizon:
            raise ConfigError(f"init_mean must have {self.horizon} rows, got {len(self.init_mean)}.")
        if any(s < 0.0 for s in self.init_std):
            raise ConfigError("init_std must be non-negative.")

    @property
    def n_elite(self) -> int:
        return max(1, int(math.floor(self.population * self.elite_frac + 1e-9)))

    @property
    def mean_array(self) -> np.ndarray:
        return np.asarray(self.init_mean, dtype=np.float64)

    @property
    def std_array(self) -> np.ndarray:
        return np.broadcast_to(np.asarray(self.init_std, dtype=np.float64), self.mean_array.shape).copy()


#Receding-horizon loop
@dataclass(frozen=True, eq=False)
class PlanStep:

    desired_state: np.ndarray
    desired_action: np.ndarray
    value: float
    root_N: int
    reused_N: int


@dataclass(frozen=True, eq=False)
class StepRecord:

    k: int
    state: np.ndarray
    desired_state: np.ndarray
    desired_action: np.ndarray
    action: np.ndarray
    reward: float
    root_N: int
    reused_N: int
    reset_flag: bool
    contact: bool = False

    def to_dict(self) -> dict:
        return {
            "k": self.k,
            "state": self.state.tolist(),
            "desiredState": self.desired_state.tolist(),
            "desiredAction": self.desired_action.tolist(),
            "action": self.action.tolist(),
            "reward": self.reward,
            "rootN": self.root_N,
            "reusedN": self.reused_N,
            "reset": self.reset_flag,
            "contact": self.contact,
        }


@dataclass(frozen=True, eq=False)
class EpisodeRecord:

    steps: Tuple[StepRecord, ...]
    cumulative_value: float
    config_hash: str
    rng_seed: int
    final_state: Optional[np.ndarray] = None
    aborted: bool = False
    abort_reason: str = ""

    @property
    def resets(self) -> int:
        return sum(1 for s in self.steps if s.reset_flag)

    def to_dict(self) -> dict:
        return {
            "cumulativeValue": self.cumulative_value,
            "configHash": self.config_hash,
            "rngSeed": self.rng_seed,
            "aborted": self.aborted,
            "abortReason": self.abort_reason,
            "steps": [s.to_dict() for s in self.steps],
        }


#Experiment configuration
@dataclass(frozen=True)
class GridSpec:

    x_range: Tuple[float, float] = (-2.5, 1.5)
    y_range: Tuple[float, float] = (-2.0, 2.0)
    resolution: int = 5
    seeds_per_cell: int = 10

    def __post_init__(self) -> None:
        if self.resolution < 1:
            raise ConfigError("grid resolution must be >= 1.")
        if self.seeds_per_cell < 1:
            raise ConfigError("seeds_per_cell must be >= 1.")

    def axis(self, bounds: Tuple[float, float]) -> List[float]:
        if self.resolution == 1:
            return [0.5 * (bounds[0] + bounds[1])]
        return [float(v) for v in np.linspace(bounds[0], bounds[1], self.resolution)]


@dataclass(frozen=True)
class SweepSpec:

    L_values: Tuple[int, ...] = (20, 50, 100, 200, 400)
    trials: int = 30
    initial_state: Tuple[float, ...] = (-1.5, -0.5, 0.0, 0.0, 0.0)

    def __post_init__(self) -> None:
        if not self.L_values or any(v < 1 for v in self.L_values):
            raise ConfigError("sweep L values must be >= 1.")
        if self.trials < 1:
            raise ConfigError("sweep trials must be >= 1.")


@dataclass(frozen=True)
class BoundsSpec:

    K_values: Tuple[int, ...] = (5, 10, 20)
    eta_values: Tuple[float, ...] = (0.0, 0.01)
    eps_values: Tuple[float, ...] = (0.0, 0.05)
    alpha: float = 0.5
    m_lower: float = 1.0
    m_upper: float = 1.0


@dataclass(frozen=True)
class DisturbanceSpec:

    kind: str = "zero"
    vector: Tuple[float, ...] = ()
    amplitude: float = 0.0
    period: float = 50.0
    axis: int = 2


@dataclass(frozen=True)
class EstimatorSpec:

    kind: str = "zero"
    vector: Tuple[float, ...] = ()
    rate: float = 0.2


@dataclass(frozen=True)
class CemSettings:

    iterations: int = 10
    elite_frac: float = 0.10

    def __post_init__(self) -> None:
        if self.iterations < 1:
            raise ConfigError("cem.iterations must be >= 1.")
        if not 0.0 < self.elite_frac <= 1.0:
            raise ConfigError(f"cem.eliteFrac must lie in (0, 1], got {self.elite_frac}.")


@dataclass(frozen=True)
class ExperimentConfig:

    experiment: str
    planners: Tuple[str, ...]
    env: EnvParams
    search: SearchParams
    controller: ControllerParams
    cem: CemSettings = CemSettings()
    grid: GridSpec = GridSpec()
    sweep: SweepSpec = SweepSpec()
    bounds: BoundsSpec = BoundsSpec()
    disturbance: DisturbanceSpec = DisturbanceSpec()
    estimator: EstimatorSpec = EstimatorSpec()
    gamma: float = 0.95
    episode_steps: int = 100
    tau: float = 0.5
    initial_state: Tuple[float, ...] = (-1.5, -0.5, 0.0, 0.0, 0.0)
    master_seed: int = 0
    workers: int = 1
    output_dir: str = "results"
    export_tree: bool = False
    value_estimate: str = "stationary"
    raw: Dict[str, Any] = field(default_factory=dict, compare=False, hash=False)

    def __post_init__(self) -> None:
        if not 0.0 <= self.gamma < 1.0:
            raise ConfigError(f"gamma must satisfy 0 <= gamma < 1, got {self.gamma}.")
        if self.episode_steps < 1:
            raise ConfigError("episodeSteps must be >= 1.")
        if not self.tau > 0.0:
            raise ConfigError(f"tau must be > 0, got {self.tau}.")
        if self.workers < 1:
            raise ConfigError("workers must be >= 1.")
        if not self.planners:
            raise ConfigError("at least one planner is required.")
        if self.value_estimate not in ("zero", "stationary"):
            raise ConfigError(f"valueEstimate must be zero or stationary, got {self.value_estimate!r}.")
