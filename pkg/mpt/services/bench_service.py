"""
Experiment harness: workspace grid, sample-efficiency sweep, single
episodes and bound tables.

Each grid cell / sweep point is one job. Jobs write their own result file
under ``<out>/cells/`` stamped with the config hash; a rerun skips every
job whose file carries the current hash and recomputes the rest.
Tables are assembled in a fixed order after all jobs finish, so worker
count never changes the output bytes.
"""

from __future__ import annotations

import csv
import json
import logging
from concurrent.futures import ProcessPoolExecutor, as_completed
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple

import numpy as np

from mpt.models.errors import MptError
from mpt.models.schemas import DisturbanceBoundParams, EpisodeRecord, ExperimentConfig, SearchParams
from mpt.services.baseline_service import build_planner
from mpt.services.control_service import RiccatiTracker, disturbance_steady_state_bound
from mpt.services.estimator_service import build_estimator
from mpt.services.mdp_service import EstimatedDynamics
from mpt.services.pushcar_service import (
    ANGLE_INDICES,
    PushCarDynamics,
    PushCarWorld,
    build_disturbance,
    make_pushcar_mdp,
    normalize_initial_state,
)
from mpt.services.runner_service import episode_summary, hash_config, run_episode, write_episode_csv
from mpt.services.tree_service import export_tree_jsonl
from mpt.utils.numerics import STATE_DIM, format_float
from mpt.utils.performance import Stopwatch
from mpt.utils.seeding import derive_seed, make_rng

logger = logging.getLogger(__name__)


@dataclass
class BenchResult:

    experiment: str
    rows: List[Dict[str, Any]] = field(default_factory=list)
    summary: Dict[str, Any] = field(default_factory=dict)
    flagged: int = 0


@dataclass(frozen=True)
class CellJob:

    key: str
    planner: str
    initial_state: Tuple[float, ...]
    seeds: Tuple[int, ...]
    L: int


#Single episode
def configured_episode(
    config: ExperimentConfig,
    planner_name: str,
    initial_state: Sequence[float],
    seed: int,
    search: Optional[SearchParams] = None,
) -> Tuple[EpisodeRecord, Any]:
    """Wire world, estimator, planner and controller from ``config`` and run one episode."""
    search = search or config.search
    env_params = config.env
    estimator = build_estimator(config.estimator, STATE_DIM, ANGLE_INDICES)
    planning_model = EstimatedDynamics(PushCarDynamics(env_params), estimator)
    mdp = make_pushcar_mdp(env_params, config.gamma, dynamics=planning_model, value_estimate=config.value_estimate)
    world = PushCarWorld(env_params, build_disturbance(config.disturbance))
    planner = build_planner(planner_name, mdp, replace(search, rng_seed=seed), config.cem)
    controller = RiccatiTracker(config.controller, mdp.action_bounds, ANGLE_INDICES)

    x0 = normalize_initial_state(initial_state, env_params)
    record = run_episode(
        x0,
        mdp,
        world,
        planner,
        controller,
        estimator,
        config.episode_steps,
        config.tau,
        make_rng(seed),
        config_hash=hash_config(config.raw),
        rng_seed=seed,
    )
    return record, planner


def _run_cell(config: ExperimentConfig, job: CellJob) -> Dict[str, Any]:
    watch = Stopwatch()
    values: List[float] = []
    errors: List[str] = []
    rollouts: List[int] = []
    search = replace(config.search, L=job.L)
    for seed in job.seeds:
        try:
            record, planner = configured_episode(config, job.planner, job.initial_state, seed, search)
        except MptError as exc:
            errors.append(f"seed {seed}: {exc}")
            continue
        if record.aborted:
            errors.append(f"seed {seed}: {record.abort_reason}")
            continue
        values.append(record.cumulative_value)
        rollouts.append(planner.rollouts // max(1, len(record.steps)))
    return {
        "key": job.key,
        "planner": job.planner,
        "values": values,
        "errors": errors,
        "rolloutsPerStep": rollouts,
        "elapsedMs": round(watch.elapsed_ms(), 1),
        "configHash": hash_config(config.raw),
    }


#Job execution
def _cell_path(out_dir: Path, key: str) -> Path:
    return out_dir / "cells" / f"{key}.json"


def _write_cell(out_dir: Path, result: Dict[str, Any]) -> None:
    path = _cell_path(out_dir, result["key"])
    tmp = path.with_suffix(".tmp")
    tmp.write_text(json.dumps(result, sort_keys=True), encoding="utf-8")
    tmp.replace(path)


def run_jobs(config: ExperimentConfig, jobs: Sequence[CellJob], out_dir: Path) -> Dict[str, Dict[str, Any]]:
    (out_dir / "cells").mkdir(parents=True, exist_ok=True)
    results: Dict[str, Dict[str, Any]] = {}
    pending: List[CellJob] = []
    config_hash = hash_config(config.raw)
    for job in jobs:
        path = _cell_path(out_dir, job.key)
        if not path.exists():
            pending.append(job)
            continue
        stored = json.loads(path.read_text(encoding="utf-8"))
        if stored.get("configHash") == config_hash:
            results[job.key] = stored
            logger.info("Skipping finished cell %s.", job.key)
        else:
            logger.info("Recomputing stale cell %s: written under another config.", job.key)
            pending.append(job)

    def _record(result: Dict[str, Any]) -> None:
        _write_cell(out_dir, result)
        results[result["key"]] = result
        for err in result["errors"]:
            logger.warning("Cell %s flagged: %s", result["key"], err)
        logger.info("Finished cell %s (%d episodes, %.0f ms).", result["key"], len(result["values"]), result["elapsedMs"])

    if config.workers <= 1:
        for job in pending:
            _record(_run_cell(config, job))
    else:
        with ProcessPoolExecutor(max_workers=config.workers) as pool:
            futures = [pool.submit(_run_cell, config, job) for job in pending]
            for fut in as_completed(futures):
                _record(fut.result())
    return results


def _stats(values: Sequence[float]) -> Tuple[float, float]:
    if not values:
        return float("nan"), float("nan")
    arr = np.asarray(values, dtype=np.float64)
    return float(arr.mean()), float(arr.std())


def _write_csv(path: Path, header: Sequence[str], rows: Sequence[Sequence[Any]]) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def _write_summary(out_dir: Path, summary: Dict[str, Any]) -> None:
    (out_dir / "summary.json").write_text(json.dumps(summary, indent=2, sort_keys=True) + "\n", encoding="utf-8")


#Experiments
def run_grid(config: ExperimentConfig, out_dir: Optional[Path] = None) -> BenchResult:
    out = Path(out_dir or config.output_dir)
    grid = config.grid
    xs, ys = grid.axis(grid.x_range), grid.axis(grid.y_range)
    jobs: List[CellJob] = []
    for planner in config.planners:
        for ix, x in enumerate(xs):
            for iy, y in enumerate(ys):
                seeds = tuple(derive_seed(config.master_seed, "grid", ix, iy, t) for t in range(grid.seeds_per_cell))
                jobs.append(CellJob(f"grid_{planner}_{ix}_{iy}", planner, (x, y, 0.0, 0.0, 0.0), seeds, config.search.L))
    results = run_jobs(config, jobs, out)

    bench = BenchResult("grid")
    table: List[List[Any]] = []
    per_planner: Dict[str, List[float]] = {p: [] for p in config.planners}
    for job in jobs:
        res = results[job.key]
        mean, std = _stats(res["values"])
        flagged = bool(res["errors"])
        bench.flagged += int(flagged)
        if res["values"]:
            per_planner[job.planner].append(mean)
        row = {"planner": job.planner, "x": job.initial_state[0], "y": job.initial_state[1],
               "mean_value": mean, "std": std, "episodes": len(res["values"]), "flagged": flagged}
        bench.rows.append(row)
        table.append([job.planner, format_float(row["x"]), format_float(row["y"]), format_float(mean),
                      format_float(std), row["episodes"], int(flagged)])

    _write_csv(out / "grid.csv", ["planner", "x", "y", "mean_value", "std", "episodes", "flagged"], table)
    bench.summary = {
        "experiment": "grid",
        "configHash": hash_config(config.raw),
        "masterSeed": config.master_seed,
        "workspaceAverage": {p: (float(np.mean(v)) if v else None) for p, v in per_planner.items()},
        "flaggedCells": bench.flagged,
    }
    _write_summary(out, bench.summary)
    return bench


def run_sweep(config: ExperimentConfig, out_dir: Optional[Path] = None) -> BenchResult:
    out = Path(out_dir or config.output_dir)
    sweep = config.sweep
    jobs: List[CellJob] = []
    for planner in config.planners:
        for L in sweep.L_values:
            seeds = tuple(derive_seed(config.master_seed, "sweep", L, t) for t in range(sweep.trials))
            jobs.append(CellJob(f"sweep_{planner}_L{L}", planner, sweep.initial_state, seeds, L))
    results = run_jobs(config, jobs, out)

    bench = BenchResult("sweep")
    table: List[List[Any]] = []
    curves: Dict[str, Dict[str, Optional[float]]] = {p: {} for p in config.planners}
    for job in jobs:
        res = results[job.key]
        mean, std = _stats(res["values"])
        flagged = bool(res["errors"])
        bench.flagged += int(flagged)
        curves[job.planner][str(job.L)] = mean if res["values"] else None
        bench.rows.append({"planner": job.planner, "L": job.L, "mean_value": mean, "std": std,
                           "trials": len(res["values"]), "flagged": flagged})
        table.append([job.planner, job.L, format_float(mean), format_float(std), len(res["values"]), int(flagged)])

    _write_csv(out / "sweep.csv", ["planner", "L", "mean_value", "std", "trials", "flagged"], table)
    bench.summary = {
        "experiment": "sweep",
        "configHash": hash_config(config.raw),
        "masterSeed": config.master_seed,
        "meanValueByL": curves,
        "flaggedPoints": bench.flagged,
    }
    _write_summary(out, bench.summary)
    return bench


def run_single(config: ExperimentConfig, out_dir: Optional[Path] = None) -> BenchResult:
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    seed = derive_seed(config.master_seed, "single")
    bench = BenchResult("single")
    episodes: Dict[str, Any] = {}
    for name in config.planners:
        try:
            record, planner = configured_episode(config, name, config.initial_state, seed)
        except MptError as exc:
            logger.warning("Planner %s failed: %s", name, exc)
            bench.flagged += 1
            episodes[name] = {"error": str(exc)}
            continue
        write_episode_csv(record, out / f"episode_{name}.csv")
        summary = episode_summary(record, ANGLE_INDICES)
        summary["rollouts"] = planner.rollouts
        episodes[name] = summary
        bench.flagged += int(record.aborted)
        bench.rows.append({"planner": name, **summary})
        tree = getattr(planner, "tree", None)
        if config.export_tree and tree is not None:
            export_tree_jsonl(tree, out / f"tree_{name}.jsonl")
    bench.summary = {
        "experiment": "single",
        "configHash": hash_config(config.raw),
        "rngSeed": seed,
        "episodes": episodes,
    }
    _write_summary(out, bench.summary)
    return bench


def bounds_table(config: ExperimentConfig) -> List[Dict[str, float]]:
    spec = config.bounds
    rows = []
    for K in spec.K_values:
        for eta in spec.eta_values:
            for eps in spec.eps_values:
                disturbance = DisturbanceBoundParams(eta=eta, eps_est=eps)
                bound = disturbance_steady_state_bound(K, disturbance, spec.alpha, spec.m_lower, spec.m_upper)
                rows.append({"K": K, "eta": eta, "eps": eps, "alpha": spec.alpha, "bound": bound})
    return rows


def run_bounds(config: ExperimentConfig, out_dir: Optional[Path] = None) -> BenchResult:
    out = Path(out_dir or config.output_dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = bounds_table(config)
    _write_csv(
        out / "bounds.csv",
        ["K", "eta", "eps", "alpha", "bound"],
        [[r["K"], format_float(r["eta"]), format_float(r["eps"]), format_float(r["alpha"]), format_float(r["bound"])]
         for r in rows],
    )
    return BenchResult("bounds", rows=rows, summary={"experiment": "bounds", "rows": len(rows)})


EXPERIMENT_RUNNERS = {
    "grid": run_grid,
    "sweep": run_sweep,
    "single": run_single,
    "bounds": run_bounds,
}


def run_experiment(config: ExperimentConfig, out_dir: Optional[Path] = None) -> BenchResult:
    logger.info("Running %s experiment (planners: %s, seed %d).", config.experiment, ", ".join(config.planners),
                config.master_seed)
    return EXPERIMENT_RUNNERS[config.experiment](config, out_dir)
