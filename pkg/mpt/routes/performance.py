from __future__ import annotations

from flask import Blueprint, Response, jsonify

from mpt import get_episodes_run, get_last_request_time_ms
from mpt.utils.performance import collect_performance_snapshot

performance_bp = Blueprint("performance", __name__)

BASE = "/mpt/v1"


@performance_bp.route(f"{BASE}/performance", methods=["GET"])
def get_performance() -> tuple[Response, int]:
    snapshot = collect_performance_snapshot(get_last_request_time_ms(), get_episodes_run())
    return jsonify(snapshot), 200
