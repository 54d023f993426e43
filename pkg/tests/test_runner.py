import math

import numpy as np
import pytest

from mpt.models.errors import ContactResolutionError, InvalidStateError, PlannerStarvationError
from mpt.models.schemas import ControllerParams, EpisodeRecord, PlanStep, SearchParams, StepRecord
from mpt.services.baseline_service import MptPlanner, UctPlanner
from mpt.services.control_service import RiccatiTracker
from mpt.services.estimator_service import ExponentialMovingAverageEstimator
from mpt.services.mdp_service import EstimatedDynamics, ZeroEstimator
from mpt.services.pushcar_service import (
    ANGLE_INDICES,
    ConstantDisturbance,
    PushCarDynamics,
    PushCarWorld,
    make_pushcar_mdp,
)
from mpt.services.runner_service import (
    episode_summary,
    hash_config,
    realized_value,
    run_episode,
    tracking_errors,
    write_episode_csv,
)

START = [-1.5, -0.5, 0.0, 0.0, 0.0]
SEARCH = SearchParams(L=30, b=7, K=3)


def _episode(env_params, planner_cls=MptPlanner, disturbance=None, tau=math.inf, steps=4, seed=0, estimator=None):
    estimator = estimator or ZeroEstimator(5)
    mdp = make_pushcar_mdp(env_params, 0.95, dynamics=EstimatedDynamics(PushCarDynamics(env_params), estimator))
    planner = planner_cls(mdp, SEARCH)
    controller = RiccatiTracker(ControllerParams(), mdp.action_bounds, ANGLE_INDICES)
    world = PushCarWorld(env_params, disturbance)
    record = run_episode(START, mdp, world, planner, controller, estimator, steps, tau, np.random.default_rng(seed))
    return record, planner, controller


def _feed_forward(x, x_d, u_d, dynamics):
    return np.asarray(u_d, dtype=np.float64)


class _HoldPlanner:
    name = "hold"
    rollouts = 0

    def plan(self, state, rng):
        return PlanStep(np.asarray(state).copy(), np.zeros(2), 0.0, 1, 0)

    def commit(self, measured_state, tau):
        return False


class _StarvedPlanner(_HoldPlanner):
    def plan(self, state, rng):
        raise PlannerStarvationError("no children")


class _TeleportWorld:
    """Throws the car out of the workspace."""

    def step(self, state, action, k):
        return np.array([10.0, 0.0, 0.0, 0.0, 0.0]), False

    def reward(self, state, action):
        return 1.0


class _JammedWorld(_TeleportWorld):
    def step(self, state, action, k):
        raise ContactResolutionError("barrel trapped")


def _record(rewards):
    steps = tuple(
        StepRecord(
            k=k,
            state=np.zeros(5),
            desired_state=np.zeros(5),
            desired_action=np.zeros(2),
            action=np.zeros(2),
            reward=r,
            root_N=10,
            reused_N=4 * k,
            reset_flag=k == 1,
        )
        for k, r in enumerate(rewards)
    )
    return EpisodeRecord(steps=steps, cumulative_value=sum(rewards), config_hash="abc", rng_seed=7)


# ── closed loop ──────────────────────────────────────────────────────────────

def test_undisturbed_episode_follows_tree_exactly(env_params):
    record, planner, controller = _episode(env_params)
    assert len(record.steps) == 4
    assert not record.aborted
    for step in record.steps:
        np.testing.assert_array_equal(step.state, step.desired_state)
        assert not step.reset_flag
    assert controller.modes["exact"] == 4
    assert record.steps[1].reused_N > 0
    assert all(s.root_N == s.reused_N + SEARCH.L for s in record.steps)
    assert planner.rollouts == 4 * SEARCH.L


def test_mpt_and_uct_agree_on_the_first_step(env_params):
    mpt, _, _ = _episode(env_params, MptPlanner, seed=11)
    uct, _, _ = _episode(env_params, UctPlanner, seed=11)
    np.testing.assert_array_equal(mpt.steps[0].desired_action, uct.steps[0].desired_action)
    assert uct.steps[1].reused_N == 0
    assert mpt.steps[1].reused_N > 0


def test_heading_bias_triggers_reset(env_params):
    bias = ConstantDisturbance([0.0, 0.0, 0.2, 0.0, 0.0])
    record, _, _ = _episode(env_params, disturbance=bias, tau=0.1)
    assert record.steps[0].reset_flag
    after = record.steps[1]
    np.testing.assert_array_equal(after.state, after.desired_state)
    assert after.reused_N == 0
    assert record.resets == 4


def test_estimator_sees_every_transition(env_params):
    estimator = ExponentialMovingAverageEstimator(5, 0.5, ANGLE_INDICES)
    bias = ConstantDisturbance([0.0, 0.0, 0.05, 0.0, 0.0])
    record, _, _ = _episode(env_params, disturbance=bias, tau=0.5, estimator=estimator)
    assert estimator.updates == len(record.steps)
    assert estimator.estimate(np.zeros(5), np.zeros(2))[2] > 0.0


def test_infeasible_real_state_earns_nothing(pushcar_mdp):
    record = run_episode(
        START, pushcar_mdp, _TeleportWorld(), _HoldPlanner(), _feed_forward, ZeroEstimator(5), 1, 0.5,
        np.random.default_rng(0),
    )
    assert record.steps[0].reward == 0.0
    assert record.final_state[0] == 10.0


def test_starved_planner_aborts_episode(pushcar_mdp):
    record = run_episode(
        START, pushcar_mdp, _TeleportWorld(), _StarvedPlanner(), _feed_forward, ZeroEstimator(5), 3, 0.5,
        np.random.default_rng(0),
    )
    assert record.aborted
    assert "starvation" in record.abort_reason
    assert record.steps == ()


def test_failed_world_step_aborts_episode(pushcar_mdp):
    record = run_episode(
        START, pushcar_mdp, _JammedWorld(), _HoldPlanner(), _feed_forward, ZeroEstimator(5), 3, 0.5,
        np.random.default_rng(0),
    )
    assert record.aborted
    assert "barrel trapped" in record.abort_reason


def test_run_episode_rejects_empty_horizon(pushcar_mdp):
    with pytest.raises(InvalidStateError):
        run_episode(START, pushcar_mdp, _TeleportWorld(), _HoldPlanner(), _feed_forward, ZeroEstimator(5), 0, 0.5,
                    np.random.default_rng(0))


# ── metrics and export ───────────────────────────────────────────────────────

def test_realized_value_examples():
    assert realized_value(_record([0.5, 0.25])) == pytest.approx(0.75)
    assert realized_value(_record([])) == 0.0


def test_episode_summary():
    summary = episode_summary(_record([0.5, 0.25, 0.25]))
    assert summary["cumulativeValue"] == pytest.approx(1.0)
    assert summary["steps"] == 3
    assert summary["resets"] == 1
    assert summary["meanReusedN"] == pytest.approx(4.0)
    assert summary["meanTrackingError"] == 0.0
    assert summary["configHash"] == "abc"
    assert summary["rngSeed"] == 7


def test_tracking_errors_wrap_heading():
    rec = _record([0.1])
    step = rec.steps[0]
    step.state[2] = math.pi - 0.05
    step.desired_state[2] = -math.pi + 0.05
    np.testing.assert_allclose(tracking_errors(rec, ANGLE_INDICES), [0.1], atol=1e-12)


def test_hash_config_ignores_key_order():
    assert hash_config({"a": 1, "b": [1, 2]}) == hash_config({"b": [1, 2], "a": 1})
    assert hash_config({"a": 1}) != hash_config({"a": 2})
    assert len(hash_config({})) == 16


def test_hash_config_ignores_run_control_keys():
    base = {"experiment": "grid", "masterSeed": 0}
    assert hash_config({**base, "workers": 8, "outputDir": "x"}) == hash_config(base)
    assert hash_config({**base, "masterSeed": 1}) != hash_config(base)


def test_episode_csv_is_reproducible(env_params, tmp_path):
    paths = []
    for name in ("a.csv", "b.csv"):
        record, _, _ = _episode(env_params, seed=3)
        path = tmp_path / name
        assert write_episode_csv(record, path) == 4
        paths.append(path)
    assert paths[0].read_bytes() == paths[1].read_bytes()
    header = paths[0].read_text().splitlines()[0]
    assert header == (
        "k,x,y,theta,x_o,y_o,d_x,d_y,d_theta,d_x_o,d_y_o,d_V,d_delta,V,delta,reward,root_N,reused_N,reset,contact"
    )
