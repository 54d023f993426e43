from __future__ import annotations

import logging
import math
from functools import partial
from typing import AbstractSet, Callable, Iterable, Sequence, Tuple

import numpy as np

from mpt.models.errors import ActionsExhaustedError, ConfigError, InvalidStateError
from mpt.models.interfaces import ContactAware, DisturbanceEstimator, DynamicsModel
from mpt.models.schemas import ActionSet, Box, MdpSpec, RewardParams, zero_value
from mpt.utils.numerics import MAX_SPEED, MAX_STEER, require_finite, to_vector, wrap_angle

logger = logging.getLogger(__name__)


#Reward and return
def reward_eval(state: np.ndarray, action: np.ndarray, reward_params: RewardParams) -> float:
    """Goal-distance reward of the push task, clamped to [0, 1]."""
    s = require_finite(to_vector(state, name="state"))
    dist = math.hypot(s[3] - reward_params.goal[0], s[4] - reward_params.goal[1])
    value = 0.1 + 0.9 * (1.0 - dist / reward_params.D)
    return min(1.0, max(0.0, value))


def discounted_return(rewards: Iterable[float], gamma: float) -> float:
    total = 0.0
    weight = 1.0
    for r in rewards:
        total += weight * float(r)
        weight *= gamma
    return total


#Terminal value estimates
VALUE_ESTIMATES: Tuple[str, ...] = ("zero", "stationary")


def stationary_value(
    state: np.ndarray,
    reward: Callable[[np.ndarray, np.ndarray], float],
    gamma: float,
    action_dim: int,
) -> float:
    """R(x) / (1 - gamma): the state's reward collected forever.

    Rollouts of different lengths seeded with this tail estimate the same
    infinite-horizon return.
    """
    return float(reward(state, np.zeros(action_dim))) / (1.0 - gamma)


def build_value_estimate(
    kind: str,
    reward: Callable[[np.ndarray, np.ndarray], float],
    gamma: float,
    action_dim: int,
) -> Callable[[np.ndarray], float]:
    if kind == "zero":
        return zero_value
    if kind == "stationary":
        return partial(stationary_value, reward=reward, gamma=gamma, action_dim=action_dim)
    raise ConfigError(f"Unknown value estimate: {kind!r}; expected one of {VALUE_ESTIMATES}.")


#Action sets
def default_action_set() -> ActionSet:
    """The seven discrete car actions: stop, straight and full-lock turns both ways."""
    bounds = Box((-MAX_SPEED, -MAX_STEER), (MAX_SPEED, MAX_STEER))
    actions = (
        (0.0, 0.0),
        (1.0, 0.0),
        (-1.0, 0.0),
        (1.0, MAX_STEER),
        (1.0, -MAX_STEER),
        (-1.0, MAX_STEER),
        (-1.0, -MAX_STEER),
    )
    return ActionSet(mode="discrete", bounds=bounds, actions=actions)


def sample_unvisited_index(action_set: ActionSet, visited: AbstractSet[int], rng: np.random.Generator) -> int:
    if not action_set.is_discrete:
        raise ActionsExhaustedError("Sampling without replacement needs a discrete action set.")
    unvisited = [i for i in range(len(action_set)) if i not in visited]
    if not unvisited:
        raise ActionsExhaustedError(
            f"All {len(action_set)} actions already expanded; use UCT selection instead."
        )
    return unvisited[int(rng.integers(len(unvisited)))]


def sample_action_unvisited(action_set: ActionSet, visited: AbstractSet[int], rng: np.random.Generator) -> np.ndarray:
    return action_set.vector(sample_unvisited_index(action_set, visited, rng))


def sample_action(
    action_set: ActionSet,
    visited: AbstractSet[int],
    rng: np.random.Generator,
) -> Tuple[int, np.ndarray]:
    """Return ``(index, action)``; continuous sets report index -1."""
    if action_set.is_discrete:
        index = sample_unvisited_index(action_set, visited, rng)
        return index, action_set.vector(index)
    return -1, action_set.bounds.sample(rng)


#Feasibility (the X-constraint)
def is_feasible(mdp: MdpSpec, state: np.ndarray) -> bool:
    if not np.all(np.isfinite(state)):
        return False
    if not mdp.state_bounds.contains(state):
        return False
    if mdp.constraint is not None and not mdp.constraint(state):
        return False
    return True


#Estimated dynamics
class ZeroEstimator:
    """d_hat == 0; the planner uses the nominal model unchanged."""

    def __init__(self, state_dim: int) -> None:
        self.state_dim = state_dim

    def update(self, observed_state: np.ndarray, predicted_state: np.ndarray, action: np.ndarray, time: int) -> None:
        return None

    def estimate(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        return np.zeros(self.state_dim)


class EstimatedDynamics:
    """F_hat(x, u) = F_nom(x, u) + d_hat(x, u)."""

    def __init__(self, nominal: DynamicsModel, estimator: DisturbanceEstimator) -> None:
        self.nominal = nominal
        self.estimator = estimator
        self.angle_indices: Tuple[int, ...] = tuple(getattr(nominal, "angle_indices", ()))

    def step(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        nxt = self.nominal.step(state, action) + self.estimator.estimate(state, action)
        for i in self.angle_indices:
            nxt[i] = wrap_angle(float(nxt[i]))
        return nxt

    def nominal_step(self, state: np.ndarray, action: np.ndarray) -> np.ndarray:
        return self.nominal.step(state, action)

    def contact_flag(self, state: np.ndarray, action: np.ndarray) -> bool:
        if isinstance(self.nominal, ContactAware):
            return bool(self.nominal.contact_flag(state, action))
        return False


def validate_state(mdp: MdpSpec, state: Sequence[float]) -> np.ndarray:
    vec = to_vector(state, mdp.state_dim, name="state")
    if not np.all(np.isfinite(vec)):
        raise InvalidStateError(f"state has non-finite components: {vec.tolist()!r}.")
    return vec
