"""
The receding-horizon loop: plan, track, act, estimate, trim, reset.
"""

from __future__ import annotations

import csv
import hashlib
import json
import logging
from pathlib import Path
from typing import Any, Callable, Dict, List, Sequence, Tuple, Union

import numpy as np

from mpt.models.errors import ContactResolutionError, InvalidStateError, PlannerStarvationError
from mpt.models.interfaces import DisturbanceEstimator, Planner
from mpt.models.schemas import EpisodeRecord, MdpSpec, StepRecord
from mpt.services.mdp_service import is_feasible, validate_state
from mpt.utils.numerics import format_float, state_difference

logger = logging.getLogger(__name__)

Controller = Callable[[np.ndarray, np.ndarray, np.ndarray, Any], np.ndarray]

PUSHCAR_STATE_COLUMNS = ("x", "y", "theta", "x_o", "y_o")
PUSHCAR_ACTION_COLUMNS = ("V", "delta")


# run-control keys that never change results
UNHASHED_KEYS = ("workers", "outputDir")


def hash_config(raw: Dict[str, Any]) -> str:
    payload = json.dumps({k: v for k, v in raw.items() if k not in UNHASHED_KEYS}, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(payload.encode("utf-8")).hexdigest()[:16]


def _nominal_prediction(mdp: MdpSpec, state: np.ndarray, action: np.ndarray) -> np.ndarray:
    nominal = getattr(mdp.dynamics, "nominal_step", None)
    step = nominal if callable(nominal) else mdp.dynamics.step
    return np.asarray(step(state, action), dtype=np.float64)


#Episode loop
def run_episode(
    initial_state: Sequence[float],
    mdp: MdpSpec,
    env: Any,
    planner: Planner,
    controller: Controller,
    estimator: DisturbanceEstimator,
    horizon_steps: int,
    tau: float,
    rng: np.random.Generator,
    config_hash: str = "",
    rng_seed: int = -1,
) -> EpisodeRecord:
    """Run ``horizon_steps`` plan/act iterations against ``env``.

    ``env.step(x, u, k)`` returns ``(x_next, contact)`` and ``env.reward(x, u)``
    scores a transition; it stands for the real system, so the planner's
    model is never used to advance the state.
    """
    if horizon_steps < 1:
        raise InvalidStateError(f"horizon_steps must be >= 1, got {horizon_steps}.")
    x = validate_state(mdp, initial_state)
    steps: List[StepRecord] = []
    aborted = False
    reason = ""

    for k in range(horizon_steps):
        try:
            plan = planner.plan(x, rng)
        except PlannerStarvationError as exc:
            aborted, reason = True, f"planner starvation at step {k}: {exc}"
            logger.warning("Episode aborted: %s", reason)
            break

        u = np.asarray(controller(x, plan.desired_state, plan.desired_action, mdp.dynamics), dtype=np.float64)
        try:
            predicted = _nominal_prediction(mdp, x, u)
            x_next, contact = env.step(x, u, k)
        except (InvalidStateError, ContactResolutionError) as exc:
            aborted, reason = True, f"environment step failed at step {k}: {exc}"
            logger.warning("Episode aborted: %s", reason)
            break
        x_next = np.asarray(x_next, dtype=np.float64)

        # infeasible states earn nothing, as in the planner's model
        reward = float(env.reward(x_next, u)) if is_feasible(mdp, x_next) else 0.0
        estimator.update(x_next, predicted, u, k)
        reset = planner.commit(x_next, tau)

        steps.append(
            StepRecord(
                k=k,
                state=x.copy(),
                desired_state=np.asarray(plan.desired_state, dtype=np.float64).copy(),
                desired_action=np.asarray(plan.desired_action, dtype=np.float64).copy(),
                action=u.copy(),
                reward=reward,
                root_N=plan.root_N,
                reused_N=plan.reused_N,
                reset_flag=reset,
                contact=bool(contact),
            )
        )
        logger.debug("step %d reward=%.4f root_N=%d reused_N=%d reset=%s", k, reward, plan.root_N, plan.reused_N, reset)
        x = x_next

    return EpisodeRecord(
        steps=tuple(steps),
        cumulative_value=sum(s.reward for s in steps),
        config_hash=config_hash,
        rng_seed=rng_seed,
        final_state=x.copy(),
        aborted=aborted,
        abort_reason=reason,
    )


#Episode metrics
def realized_value(record: EpisodeRecord) -> float:
    return sum(s.reward for s in record.steps)


def tracking_errors(record: EpisodeRecord, angle_indices: Sequence[int] = ()) -> np.ndarray:
    return np.array(
        [float(np.linalg.norm(state_difference(s.state, s.desired_state, angle_indices))) for s in record.steps]
    )


def episode_summary(record: EpisodeRecord, angle_indices: Sequence[int] = ()) -> Dict[str, Any]:
    errors = tracking_errors(record, angle_indices)
    reused = [s.reused_N for s in record.steps]
    return {
        "cumulativeValue": realized_value(record),
        "steps": len(record.steps),
        "resets": record.resets,
        "meanReusedN": float(np.mean(reused)) if reused else 0.0,
        "meanTrackingError": float(errors.mean()) if errors.size else 0.0,
        "contacts": sum(1 for s in record.steps if s.contact),
        "aborted": record.aborted,
        "abortReason": record.abort_reason,
        "configHash": record.config_hash,
        "rngSeed": record.rng_seed,
    }


#CSV export
def _columns(prefix: str, names: Tuple[str, ...], dim: int, fallback: str) -> List[str]:
    base = list(names) if len(names) == dim else [f"{fallback}{i}" for i in range(dim)]
    return [prefix + c for c in base]


def write_episode_csv(record: EpisodeRecord, path: Union[str, Path]) -> int:
    """One row per step; returns the number of rows written."""
    if record.steps:
        n = record.steps[0].state.shape[0]
        m = record.steps[0].action.shape[0]
    else:
        n, m = len(PUSHCAR_STATE_COLUMNS), len(PUSHCAR_ACTION_COLUMNS)
    header = (
        ["k"]
        + _columns("", PUSHCAR_STATE_COLUMNS, n, "s")
        + _columns("d_", PUSHCAR_STATE_COLUMNS, n, "s")
        + _columns("d_", PUSHCAR_ACTION_COLUMNS, m, "u")
        + _columns("", PUSHCAR_ACTION_COLUMNS, m, "u")
        + ["reward", "root_N", "reused_N", "reset", "contact"]
    )
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        for s in record.steps:
            writer.writerow(
                [s.k]
                + [format_float(v) for v in s.state]
                + [format_float(v) for v in s.desired_state]
                + [format_float(v) for v in s.desired_action]
                + [format_float(v) for v in s.action]
                + [format_float(s.reward), s.root_N, s.reused_N, int(s.reset_flag), int(s.contact)]
            )
    return len(record.steps)
