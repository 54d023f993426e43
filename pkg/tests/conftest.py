from functools import partial

import numpy as np
import pytest

from mpt import create_app
from mpt.models.schemas import ActionSet, Box, EnvParams, MdpSpec
from mpt.services.config_service import parse_experiment_config
from mpt.services.pushcar_service import make_pushcar_mdp

# Rewards of the depth-3 binary decision problem, keyed by (depth, path code).
# Greedy first-step reward favours action 0; the optimum starts with action 1.
BINARY_REWARDS = {
    (1, 0): 0.5, (1, 1): 0.0,
    (2, 0): 0.1, (2, 1): 0.1, (2, 2): 0.0, (2, 3): 0.2,
    (3, 6): 0.0, (3, 7): 1.0,
}


class BinaryTreeDynamics:
    """State [depth, code]; action 0 or 1 appends one bit to the code."""

    def step(self, state, action):
        depth, code = state
        return np.array([depth + 1.0, 2.0 * code + round(float(action[0]))])


def _binary_reward(state, action, table):
    return table.get((int(state[0]), int(state[1])), 0.0)


class EchoDynamics:
    """x+ = x; the action alone decides the reward."""

    def step(self, state, action):
        return np.array(state, dtype=np.float64)


def _quadratic_reward(state, action, target):
    return -(float(action[0]) - target) ** 2


def make_binary_mdp(gamma=0.9, table=None):
    bounds = Box((0.0,), (1.0,))
    return MdpSpec(
        state_dim=2,
        action_dim=1,
        state_bounds=Box((0.0, 0.0), (3.0, 7.0)),
        action_bounds=bounds,
        gamma=gamma,
        dynamics=BinaryTreeDynamics(),
        reward=partial(_binary_reward, table=BINARY_REWARDS if table is None else table),
        action_set=ActionSet(mode="discrete", bounds=bounds, actions=((0.0,), (1.0,))),
    )


def make_quadratic_mdp(target=0.3):
    bounds = Box((-1.0,), (1.0,))
    return MdpSpec(
        state_dim=1,
        action_dim=1,
        state_bounds=Box((-1.0,), (1.0,)),
        action_bounds=bounds,
        gamma=0.9,
        dynamics=EchoDynamics(),
        reward=partial(_quadratic_reward, target=target),
        action_set=ActionSet(mode="continuous-box", bounds=bounds),
    )


def brute_force_first_action(mdp, depth):
    """Optimal first action index by enumerating every action sequence."""
    best_value, best_first = -np.inf, None
    n = len(mdp.action_set)
    for code in range(n ** depth):
        seq = [(code // n ** (depth - 1 - i)) % n for i in range(depth)]
        x = np.zeros(mdp.state_dim)
        total, weight = 0.0, 1.0
        for i in seq:
            u = mdp.action_set.vector(i)
            x = mdp.dynamics.step(x, u)
            total += weight * mdp.reward(x, u)
            weight *= mdp.gamma
        if total > best_value:
            best_value, best_first = total, seq[0]
    return best_first, best_value


@pytest.fixture
def client():
    app = create_app()
    app.config["TESTING"] = True

    with app.test_client() as client:
        yield client


@pytest.fixture
def binary_mdp():
    return make_binary_mdp()


@pytest.fixture
def quadratic_mdp():
    return make_quadratic_mdp()


@pytest.fixture
def env_params():
    return EnvParams()


@pytest.fixture
def pushcar_mdp(env_params):
    return make_pushcar_mdp(env_params, gamma=0.95)


@pytest.fixture
def small_config_raw(tmp_path):
    return {
        "experiment": "grid",
        "planners": ["mpt"],
        "masterSeed": 3,
        "outputDir": str(tmp_path / "out"),
        "episodeSteps": 3,
        "search": {"L": 20, "b": 7, "K": 4},
        "grid": {"xRange": [-1.5, -1.5], "yRange": [-0.5, -0.5], "resolution": 1, "seedsPerCell": 1},
        "sweep": {"LValues": [20], "trials": 1},
    }


@pytest.fixture
def small_config(small_config_raw):
    return parse_experiment_config(small_config_raw)
