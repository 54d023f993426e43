from __future__ import annotations

from typing import Any, Dict, List

from flask import Blueprint, Response, jsonify, request

from mpt import record_episode
from mpt.models.errors import MptError
from mpt.services.bench_service import bounds_table, configured_episode
from mpt.services.config_service import parse_experiment_config
from mpt.services.pushcar_service import ANGLE_INDICES
from mpt.services.runner_service import episode_summary

bench_bp = Blueprint("bench", __name__)

BASE = "/mpt/v1"

MAX_EPISODE_STEPS = 200
MAX_ROLLOUTS = 2000


#Shared parsing helpers
def _parse_bounds_body(body: Dict[str, Any]) -> Dict[str, Any]:
    for key in ("K", "eta", "eps"):
        if key not in body:
            raise ValueError(f"Missing required field: {key!r}")
    return {"experiment": "bounds", "bounds": body}


def _parse_episode_body(body: Dict[str, Any]) -> Dict[str, Any]:
    if "planner" not in body:
        raise ValueError("Missing required field: 'planner'")
    planner = body["planner"]
    if not isinstance(planner, str):
        raise ValueError(f"'planner' must be a string, got {type(planner).__name__}.")
    seed = body.get("seed", 0)
    if not isinstance(seed, int) or isinstance(seed, bool):
        raise ValueError(f"'seed' must be an integer, got {type(seed).__name__}.")

    raw = {k: v for k, v in body.items() if k not in ("planner", "seed", "includeSteps")}
    raw.update({"experiment": "single", "planners": [planner], "masterSeed": seed})
    return raw


#Endpoint: bound tabulation
@bench_bp.route(f"{BASE}/bounds:tabulate", methods=["POST"])
def tabulate_bounds() -> tuple[Response, int]:

    body: Dict[str, Any] | None = request.get_json(silent=True)
    if body is None:
        return jsonify({"error": "Invalid or missing JSON body."}), 400

    try:
        config = parse_experiment_config(_parse_bounds_body(body))
    except (ValueError, TypeError, KeyError) as exc:
        return jsonify({"error": str(exc)}), 422

    rows: List[Dict[str, float]] = bounds_table(config)
    return jsonify({"rows": rows, "count": len(rows)}), 200


#Endpoint: single episode
@bench_bp.route(f"{BASE}/episodes:run", methods=["POST"])
def run_single_episode() -> tuple[Response, int]:

    body: Dict[str, Any] | None = request.get_json(silent=True)
    if body is None:
        return jsonify({"error": "Invalid or missing JSON body."}), 400

    try:
        config = parse_experiment_config(_parse_episode_body(body))
        if config.episode_steps > MAX_EPISODE_STEPS:
            raise ValueError(f"'episodeSteps' must be <= {MAX_EPISODE_STEPS} over HTTP; use the bench CLI.")
        if config.search.L > MAX_ROLLOUTS:
            raise ValueError(f"search 'L' must be <= {MAX_ROLLOUTS} over HTTP; use the bench CLI.")
    except (ValueError, TypeError, KeyError) as exc:
        return jsonify({"error": str(exc)}), 422

    try:
        record, planner = configured_episode(
            config, config.planners[0], config.initial_state, config.master_seed
        )
    except MptError as exc:
        return jsonify({"error": f"Episode error: {exc}"}), 500

    record_episode()
    result = episode_summary(record, ANGLE_INDICES)
    result["rollouts"] = planner.rollouts
    if body.get("includeSteps", False):
        result["trajectory"] = [s.to_dict() for s in record.steps]
    return jsonify(result), 200
