"""
Comparison planners and the planner objects driven by the receding-horizon loop.

Every planner spends the same simulation budget per step: the tree
planners run L rollouts, CEM runs population x iterations = L // iterations
x iterations sampled sequences.
"""

from __future__ import annotations

import logging
from dataclasses import replace
from typing import Optional, Sequence, Tuple

import numpy as np

from mpt.models.errors import ConfigError, ContactResolutionError, InvalidStateError
from mpt.models.interfaces import Planner
from mpt.models.schemas import CemParams, CemSettings, MdpSpec, PlanStep, SearchParams
from mpt.models.tree import SearchTree
from mpt.services.mdp_service import is_feasible
from mpt.services.tree_service import best_child, new_tree, re_root, reset_check, uct_search

logger = logging.getLogger(__name__)

PLANNER_NAMES: Tuple[str, ...] = ("mpt", "uct", "cem", "cem-reuse")


#Sequence scoring
def sequence_return(state: np.ndarray, actions: np.ndarray, mdp: MdpSpec) -> float:
    """Discounted return of an open-loop action sequence under the planning model."""
    x = np.asarray(state, dtype=np.float64)
    total = 0.0
    weight = 1.0
    for u in actions:
        try:
            x = np.asarray(mdp.dynamics.step(x, u), dtype=np.float64)
        except (InvalidStateError, ContactResolutionError) as exc:
            logger.debug("Sequence rollout cut short: %s", exc)
            return total
        if not is_feasible(mdp, x):
            return total
        total += weight * float(mdp.reward(x, u))
        weight *= mdp.gamma
    return total + weight * float(mdp.value_estimate(x))


def select_elites(scores: Sequence[float], elite_frac: float) -> np.ndarray:
    """Indices of the top ``elite_frac`` scores; ties keep sample order."""
    s = np.asarray(scores, dtype=np.float64)
    n_elite = max(1, int(np.floor(len(s) * elite_frac + 1e-9)))
    return np.argsort(-s, kind="stable")[:n_elite]


def shift_solution(prev: np.ndarray) -> np.ndarray:
    """[a1 .. aH] -> [a2 .. aH, aH]."""
    p = np.atleast_2d(np.asarray(prev, dtype=np.float64))
    return np.vstack([p[1:], p[-1:]])


#Cross-entropy method
def cem_plan(
    state: np.ndarray,
    mdp: MdpSpec,
    params: CemParams,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, float]:
    low, high = mdp.action_bounds.low_array, mdp.action_bounds.high_array
    mean = params.mean_array
    std = params.std_array
    floored = False

    for _ in range(params.iterations):
        noise = rng.standard_normal((params.population,) + mean.shape)
        samples = np.clip(mean + std * noise, low, high)
        scores = [sequence_return(state, seq, mdp) for seq in samples]
        elites = samples[select_elites(scores, params.elite_frac)]
        mean = elites.mean(axis=0)
        std = elites.std(axis=0)
        if np.any(std < params.std_floor):
            floored = True
            std = np.maximum(std, params.std_floor)

    if floored:
        logger.warning("CEM sampling distribution collapsed; std floored at %g.", params.std_floor)
    mean = np.clip(mean, low, high)
    return mean, sequence_return(state, mean, mdp)


def cem_reuse_plan(
    state: np.ndarray,
    mdp: MdpSpec,
    params: CemParams,
    prev_solution: np.ndarray,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, float]:
    prev = np.atleast_2d(np.asarray(prev_solution, dtype=np.float64))
    if prev.shape[0] != params.horizon:
        raise InvalidStateError(f"prev_solution must have {params.horizon} steps, got {prev.shape[0]}.")
    return cem_plan(state, mdp, replace(params, init_mean=shift_solution(prev)), rng)


#UCT without reuse
def _fresh_search(state: np.ndarray, mdp: MdpSpec, search_params: SearchParams, rng: np.random.Generator) -> SearchTree:
    tree = new_tree(state, mdp, search_params)
    return uct_search(tree, mdp, search_params.L, rng)


def uct_noreuse_plan(
    state: np.ndarray,
    mdp: MdpSpec,
    search_params: SearchParams,
    rng: np.random.Generator,
) -> Tuple[np.ndarray, float]:
    tree = _fresh_search(state, mdp, search_params, rng)
    action, handle = best_child(tree)
    return action, tree.node(handle).mean_value


#Planner objects
class MptPlanner:
    """UCT with subtree reuse across steps and a reset on model drift."""

    name = "mpt"

    def __init__(self, mdp: MdpSpec, params: SearchParams) -> None:
        self.mdp = mdp
        self.params = params
        self.angle_indices = tuple(getattr(mdp.dynamics, "angle_indices", ()))
        self.tree: Optional[SearchTree] = None
        self.rollouts = 0
        self._chosen: Optional[int] = None

    def plan(self, state: np.ndarray, rng: np.random.Generator) -> PlanStep:
        if self.tree is None:
            self.tree = new_tree(state, self.mdp, self.params)
        tree = self.tree
        reused = tree.root_node.N
        before = tree.rollouts
        uct_search(tree, self.mdp, self.params.L, rng)
        self.rollouts += tree.rollouts - before
        action, handle = best_child(tree)
        self._chosen = handle
        logger.debug("mpt plan: root N=%d reused=%d nodes=%d", tree.root_node.N, reused, len(tree))
        return PlanStep(
            desired_state=tree.root_node.state.copy(),
            desired_action=action,
            value=tree.node(handle).mean_value,
            root_N=tree.root_node.N,
            reused_N=reused,
        )

    def commit(self, measured_state: np.ndarray, tau: float) -> bool:
        if self.tree is None or self._chosen is None:
            raise InvalidStateError("commit called before plan.")
        re_root(self.tree, self._chosen)
        self._chosen = None
        reset = reset_check(self.tree.root_node.state, measured_state, tau, self.angle_indices)
        if reset:
            logger.debug("Tree reset: simulated root drifted beyond tau=%g.", tau)
            self.tree = new_tree(measured_state, self.mdp, self.params)
        return reset


class UctPlanner:
    """UCT that rebuilds the tree from scratch every step."""

    name = "uct"

    def __init__(self, mdp: MdpSpec, params: SearchParams) -> None:
        self.mdp = mdp
        self.params = params
        self.tree: Optional[SearchTree] = None
        self.rollouts = 0

    def plan(self, state: np.ndarray, rng: np.random.Generator) -> PlanStep:
        self.tree = _fresh_search(state, self.mdp, self.params, rng)
        self.rollouts += self.tree.rollouts
        action, handle = best_child(self.tree)
        return PlanStep(
            desired_state=self.tree.root_node.state.copy(),
            desired_action=action,
            value=self.tree.node(handle).mean_value,
            root_N=self.tree.root_node.N,
            reused_N=0,
        )

    def commit(self, measured_state: np.ndarray, tau: float) -> bool:
        return False


class CemPlanner:

    name = "cem"

    def __init__(self, mdp: MdpSpec, params: CemParams) -> None:
        self.mdp = mdp
        self.params = params
        self.rollouts = 0
        self.solution: Optional[np.ndarray] = None

    @property
    def budget(self) -> int:
        return self.params.population * self.params.iterations

    def _solve(self, state: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
        return cem_plan(state, self.mdp, self.params, rng)

    def plan(self, state: np.ndarray, rng: np.random.Generator) -> PlanStep:
        state = np.asarray(state, dtype=np.float64)
        self.solution, value = self._solve(state, rng)
        self.rollouts += self.budget
        return PlanStep(
            desired_state=state.copy(),
            desired_action=self.solution[0].copy(),
            value=value,
            root_N=self.budget,
            reused_N=0,
        )

    def commit(self, measured_state: np.ndarray, tau: float) -> bool:
        return False


class CemReusePlanner(CemPlanner):
    """CEM hot-started from the previous step's solution."""

    name = "cem-reuse"

    def _solve(self, state: np.ndarray, rng: np.random.Generator) -> Tuple[np.ndarray, float]:
        if self.solution is None:
            return cem_plan(state, self.mdp, self.params, rng)
        return cem_reuse_plan(state, self.mdp, self.params, self.solution, rng)


def cem_params_for_budget(mdp: MdpSpec, search: SearchParams, settings: CemSettings) -> CemParams:
    """CEM settings matched to the tree planners' budget and horizon."""
    population = max(1, search.L // settings.iterations)
    # tiny budgets still keep at least one elite
    elite_frac = max(settings.elite_frac, 1.0 / population)
    half_range = 0.5 * (mdp.action_bounds.high_array - mdp.action_bounds.low_array)
    return CemParams(
        population=population,
        horizon=search.K,
        init_mean=np.zeros((search.K, mdp.action_dim)),
        init_std=tuple(half_range),
        iterations=settings.iterations,
        elite_frac=min(1.0, elite_frac),
    )


def build_planner(
    name: str,
    mdp: MdpSpec,
    search: SearchParams,
    cem: CemSettings = CemSettings(),
) -> Planner:
    if name == "mpt":
        return MptPlanner(mdp, search)
    if name == "uct":
        return UctPlanner(mdp, search)
    if name == "cem":
        return CemPlanner(mdp, cem_params_for_budget(mdp, search, cem))
    if name == "cem-reuse":
        return CemReusePlanner(mdp, cem_params_for_budget(mdp, search, cem))
    raise ConfigError(f"Unknown planner type: {name!r}; expected one of {PLANNER_NAMES}.")
