from __future__ import annotations

import json
import math
from dataclasses import replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Tuple, Union

import numpy as np

from mpt.models.errors import ConfigError
from mpt.models.schemas import (
    Box,
    BoundsSpec,
    CemSettings,
    ControllerParams,
    DisturbanceSpec,
    EnvParams,
    EstimatorSpec,
    ExperimentConfig,
    GridSpec,
    Obstacle,
    SearchParams,
    SweepSpec,
)
from mpt.services.baseline_service import PLANNER_NAMES
from mpt.utils.numerics import STATE_DIM

EXPERIMENTS: Tuple[str, ...] = ("grid", "sweep", "single", "bounds")


#Field helpers
def _require_field(raw: Dict[str, Any], key: str, where: str) -> Any:
    if key not in raw:
        raise ConfigError(f"{where}: missing required field {key!r}.")
    return raw[key]


def _section(raw: Dict[str, Any], key: str) -> Dict[str, Any]:
    value = raw.get(key, {})
    if not isinstance(value, dict):
        raise ConfigError(f"{key!r} must be an object, got {type(value).__name__}.")
    return value


def _number(raw: Dict[str, Any], key: str, default: float, where: str) -> float:
    value = raw.get(key, default)
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ConfigError(f"{where}.{key} must be a number, got {type(value).__name__}.")
    return float(value)


def _integer(raw: Dict[str, Any], key: str, default: int, where: str) -> int:
    value = raw.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise ConfigError(f"{where}.{key} must be an integer, got {type(value).__name__}.")
    return value


def _string(raw: Dict[str, Any], key: str, default: str, where: str) -> str:
    value = raw.get(key, default)
    if not isinstance(value, str):
        raise ConfigError(f"{where}.{key} must be a string, got {type(value).__name__}.")
    return value


def _numbers(raw: Dict[str, Any], key: str, default: Any, where: str, length: Optional[int] = None) -> Tuple[float, ...]:
    value = raw.get(key, default)
    if not isinstance(value, (list, tuple)) or any(isinstance(v, bool) or not isinstance(v, (int, float)) for v in value):
        raise ConfigError(f"{where}.{key} must be a list of numbers.")
    if length is not None and len(value) != length:
        raise ConfigError(f"{where}.{key} must have {length} entries, got {len(value)}.")
    return tuple(float(v) for v in value)


def _matrix(raw: Dict[str, Any], key: str, dim: int, where: str) -> Optional[np.ndarray]:
    """A full matrix, or a list read as its diagonal."""
    if key not in raw:
        return None
    value = raw[key]
    try:
        arr = np.asarray(value, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{where}.{key} is not numeric: {exc}") from exc
    if arr.ndim == 1:
        arr = np.diag(arr)
    if arr.shape != (dim, dim):
        raise ConfigError(f"{where}.{key} must be {dim}x{dim}, got shape {arr.shape}.")
    return arr


#Section parsers
def _parse_env(raw: Dict[str, Any]) -> EnvParams:
    where = "env"
    defaults = EnvParams()
    obstacles: List[Obstacle] = []
    for i, o in enumerate(raw.get("obstacles", [])):
        if not isinstance(o, dict):
            raise ConfigError(f"env.obstacles[{i}] must be an object.")
        obstacles.append(
            Obstacle(
                center=_numbers(o, "center", _require_field(o, "center", f"env.obstacles[{i}]"), where, 2),
                radius=_number(o, "radius", _require_field(o, "radius", f"env.obstacles[{i}]"), where),
            )
        )
    ws = _section(raw, "workspace")
    workspace = Box(
        _numbers(ws, "low", defaults.workspace.low, "env.workspace", 2),
        _numbers(ws, "high", defaults.workspace.high, "env.workspace", 2),
    )
    polygon = raw.get("carPolygon", defaults.car_polygon)
    if not isinstance(polygon, (list, tuple)) or any(len(v) != 2 for v in polygon):
        raise ConfigError("env.carPolygon must be a list of [x, y] vertices.")
    D = raw.get("D")
    return EnvParams(
        dt=_number(raw, "dt", defaults.dt, where),
        wheelbase=_number(raw, "wheelbase", defaults.wheelbase, where),
        car_polygon=tuple(tuple(float(c) for c in v) for v in polygon),
        barrel_radius=_number(raw, "barrelRadius", defaults.barrel_radius, where),
        obstacles=tuple(obstacles),
        workspace=workspace,
        goal=_numbers(raw, "goal", defaults.goal, where, 2),
        D=None if D is None else _number(raw, "D", 1.0, where),
        contact_tol=_number(raw, "contactTol", defaults.contact_tol, where),
    )


def _parse_search(raw: Dict[str, Any]) -> SearchParams:
    where = "search"
    d = SearchParams()
    return SearchParams(
        L=_integer(raw, "L", d.L, where),
        b=_integer(raw, "b", d.b, where),
        K=_integer(raw, "K", d.K, where),
        epsilon_explore=_number(raw, "epsilonExplore", d.epsilon_explore, where),
    )


def _parse_controller(raw: Dict[str, Any]) -> ControllerParams:
    where = "controller"
    d = ControllerParams()
    Q = _matrix(raw, "Q", STATE_DIM, where)
    R = _matrix(raw, "R", len(d.R_cost), where)
    return ControllerParams(
        Q=d.Q if Q is None else Q,
        R_cost=d.R_cost if R is None else R,
        jacobian_step=_number(raw, "jacobianStep", d.jacobian_step, where),
        linearize_at=_string(raw, "linearizeAt", d.linearize_at, where),
        feedback_states=_string(raw, "feedbackStates", d.feedback_states, where),
        dare_method=_string(raw, "dareMethod", d.dare_method, where),
        dare_tol=_number(raw, "dareTol", d.dare_tol, where),
        dare_max_iters=_integer(raw, "dareMaxIters", d.dare_max_iters, where),
    )


def _parse_grid(raw: Dict[str, Any]) -> GridSpec:
    d = GridSpec()
    return GridSpec(
        x_range=_numbers(raw, "xRange", d.x_range, "grid", 2),
        y_range=_numbers(raw, "yRange", d.y_range, "grid", 2),
        resolution=_integer(raw, "resolution", d.resolution, "grid"),
        seeds_per_cell=_integer(raw, "seedsPerCell", d.seeds_per_cell, "grid"),
    )


def _parse_sweep(raw: Dict[str, Any]) -> SweepSpec:
    d = SweepSpec()
    L_values = raw.get("LValues", list(d.L_values))
    if not isinstance(L_values, list) or any(isinstance(v, bool) or not isinstance(v, int) for v in L_values):
        raise ConfigError("sweep.LValues must be a list of integers.")
    return SweepSpec(
        L_values=tuple(L_values),
        trials=_integer(raw, "trials", d.trials, "sweep"),
        initial_state=_numbers(raw, "initialState", d.initial_state, "sweep", STATE_DIM),
    )


def _parse_bounds(raw: Dict[str, Any]) -> BoundsSpec:
    d = BoundsSpec()
    K_values = raw.get("K", list(d.K_values))
    if not isinstance(K_values, list) or any(isinstance(v, bool) or not isinstance(v, int) or v < 0 for v in K_values):
        raise ConfigError("bounds.K must be a list of non-negative integers.")
    spec = BoundsSpec(
        K_values=tuple(K_values),
        eta_values=_numbers(raw, "eta", d.eta_values, "bounds"),
        eps_values=_numbers(raw, "eps", d.eps_values, "bounds"),
        alpha=_number(raw, "alpha", d.alpha, "bounds"),
        m_lower=_number(raw, "mLower", d.m_lower, "bounds"),
        m_upper=_number(raw, "mUpper", d.m_upper, "bounds"),
    )
    if not 0.0 <= spec.alpha < 1.0:
        raise ConfigError(f"bounds.alpha must lie in [0, 1), got {spec.alpha}.")
    if not 0.0 < spec.m_lower <= spec.m_upper:
        raise ConfigError("bounds need 0 < mLower <= mUpper.")
    if any(v < 0.0 for v in spec.eta_values + spec.eps_values):
        raise ConfigError("bounds.eta and bounds.eps must be non-negative.")
    return spec


def _parse_disturbance(raw: Dict[str, Any]) -> DisturbanceSpec:
    d = DisturbanceSpec()
    kind = _string(raw, "kind", d.kind, "disturbance")
    if kind not in ("zero", "constant", "sinusoidal"):
        raise ConfigError(f"disturbance.kind must be zero, constant or sinusoidal, got {kind!r}.")
    return DisturbanceSpec(
        kind=kind,
        vector=_numbers(raw, "vector", [0.0] * STATE_DIM, "disturbance", STATE_DIM),
        amplitude=_number(raw, "amplitude", d.amplitude, "disturbance"),
        period=_number(raw, "period", d.period, "disturbance"),
        axis=_integer(raw, "axis", d.axis, "disturbance"),
    )


def _parse_estimator(raw: Dict[str, Any]) -> EstimatorSpec:
    d = EstimatorSpec()
    kind = _string(raw, "kind", d.kind, "estimator")
    if kind not in ("zero", "constant", "ema"):
        raise ConfigError(f"estimator.kind must be zero, constant or ema, got {kind!r}.")
    return EstimatorSpec(
        kind=kind,
        vector=_numbers(raw, "vector", [0.0] * STATE_DIM, "estimator", STATE_DIM),
        rate=_number(raw, "rate", d.rate, "estimator"),
    )


def _parse_planners(raw: Dict[str, Any]) -> Tuple[Tuple[str, ...], Dict[str, Any]]:
    """``planners: [...]`` or a single ``planner: {type, ...search overrides}``."""
    if "planner" in raw:
        block = raw["planner"]
        if not isinstance(block, dict):
            raise ConfigError("'planner' must be an object with a 'type' field.")
        name = _require_field(block, "type", "planner")
        overrides = {k: v for k, v in block.items() if k != "type"}
        names: Any = [name]
    else:
        names = raw.get("planners", list(PLANNER_NAMES))
        overrides = {}
    if not isinstance(names, list) or not names:
        raise ConfigError("'planners' must be a non-empty list.")
    for name in names:
        if name not in PLANNER_NAMES:
            raise ConfigError(f"Unknown planner type: {name!r}; expected one of {PLANNER_NAMES}.")
    if len(set(names)) != len(names):
        raise ConfigError("'planners' contains duplicates.")
    return tuple(names), overrides


#Public API
def parse_experiment_config(raw: Dict[str, Any]) -> ExperimentConfig:
    if not isinstance(raw, dict):
        raise ConfigError("Experiment config must be a JSON object.")
    experiment = _require_field(raw, "experiment", "config")
    if experiment not in EXPERIMENTS:
        raise ConfigError(f"'experiment' must be one of {EXPERIMENTS}, got {experiment!r}.")

    planners, search_overrides = _parse_planners(raw)
    search = _parse_search({**_section(raw, "search"), **search_overrides})
    where = "config"
    gamma = _number(raw, "gamma", 0.95, where)
    tau_raw = raw.get("tau", 0.5)
    tau = math.inf if tau_raw is None else _number(raw, "tau", 0.5, where)

    try:
        return ExperimentConfig(
            experiment=experiment,
            planners=planners,
            env=_parse_env(_section(raw, "env")),
            search=search,
            controller=_parse_controller(_section(raw, "controller")),
            cem=CemSettings(
                iterations=_integer(_section(raw, "cem"), "iterations", 10, "cem"),
                elite_frac=_number(_section(raw, "cem"), "eliteFrac", 0.10, "cem"),
            ),
            grid=_parse_grid(_section(raw, "grid")),
            sweep=_parse_sweep(_section(raw, "sweep")),
            bounds=_parse_bounds(_section(raw, "bounds")),
            disturbance=_parse_disturbance(_section(raw, "disturbance")),
            estimator=_parse_estimator(_section(raw, "estimator")),
            gamma=gamma,
            episode_steps=_integer(raw, "episodeSteps", 100, where),
            tau=tau,
            initial_state=_numbers(raw, "initialState", (-1.5, -0.5, 0.0, 0.0, 0.0), where, STATE_DIM),
            master_seed=_integer(raw, "masterSeed", 0, where),
            workers=_integer(raw, "workers", 1, where),
            output_dir=_string(raw, "outputDir", "results", where),
            export_tree=bool(raw.get("exportTree", False)),
            value_estimate=_string(raw, "valueEstimate", "stationary", where),
            raw=raw,
        )
    except ConfigError:
        raise
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from exc


def load_experiment_config(path: Union[str, Path]) -> ExperimentConfig:
    try:
        with open(path, "r", encoding="utf-8") as fh:
            raw = json.load(fh)
    except OSError as exc:
        raise ConfigError(f"Cannot read config {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"Config {path} is not valid JSON: {exc}") from exc
    return parse_experiment_config(raw)


def apply_overrides(
    config: ExperimentConfig,
    seed: Optional[int] = None,
    workers: Optional[int] = None,
    output_dir: Optional[str] = None,
) -> ExperimentConfig:
    changes: Dict[str, Any] = {}
    raw = dict(config.raw)
    if seed is not None:
        changes["master_seed"] = seed
        raw["masterSeed"] = seed
    if workers is not None:
        if workers < 1:
            raise ConfigError(f"workers must be >= 1, got {workers}.")
        changes["workers"] = workers
        raw["workers"] = workers
    if output_dir is not None:
        changes["output_dir"] = output_dir
        raw["outputDir"] = output_dir
    return replace(config, raw=raw, **changes) if changes else config
