from __future__ import annotations

import json
import logging
import math
from pathlib import Path
from typing import Dict, List, Sequence, Tuple, Union

import numpy as np

from mpt.models.errors import (
    ContactResolutionError,
    InvalidStateError,
    PlannerStarvationError,
    ScoringError,
    TreeStructureError,
)
from mpt.models.schemas import MdpSpec, SearchParams
from mpt.models.tree import NO_PARENT, SearchTree, TreeNode
from mpt.services.mdp_service import is_feasible, sample_action
from mpt.utils.numerics import state_difference, to_vector

logger = logging.getLogger(__name__)


def new_tree(root_state: np.ndarray, mdp: MdpSpec, params: SearchParams) -> SearchTree:
    """A fresh root (x, 0, [], 0, 0)."""
    return SearchTree(np.asarray(root_state, dtype=np.float64), mdp.action_dim, params)


#Scoring and selection
def uct_score(child: TreeNode, parent_N: int, epsilon_explore: float) -> float:
    if child.N < 1:
        raise ScoringError("Cannot score an unvisited child; expand it instead.")
    if parent_N < 1:
        raise ScoringError(f"parent_N must be >= 1, got {parent_N}.")
    return child.V / child.N + epsilon_explore * math.sqrt(math.log(parent_N) / child.N)


def select_child(tree: SearchTree, handle: int, epsilon_explore: float) -> int:
    node = tree.node(handle)
    if not node.children:
        raise ScoringError("select_child called on a node without children.")
    best_handle = node.children[0]
    best_score = -math.inf
    for c in node.children:
        score = uct_score(tree.node(c), node.N, epsilon_explore)
        # strict '>' keeps the lowest index on ties
        if score > best_score:
            best_score = score
            best_handle = c
    return best_handle


def branching_limit(tree: SearchTree, mdp: MdpSpec) -> int:
    if mdp.action_set.is_discrete:
        return min(tree.params.b, len(mdp.action_set))
    return tree.params.b


#Rollout and backpropagation
def rollout_once(tree: SearchTree, mdp: MdpSpec, rng: np.random.Generator) -> List[int]:
    """Grow one path of at most K transitions below the current root."""
    path = [tree.root]
    handle = tree.root
    limit = branching_limit(tree, mdp)
    eps = tree.params.epsilon_explore

    for _ in range(tree.params.K):
        node = tree.node(handle)
        if node.terminal:
            break
        if len(node.children) < limit:
            visited = {tree.node(c).action_index for c in node.children}
            index, action = sample_action(mdp.action_set, visited, rng)
            try:
                next_state = np.asarray(mdp.dynamics.step(node.state, action), dtype=np.float64)
            except (InvalidStateError, ContactResolutionError, FloatingPointError) as exc:
                logger.warning(
                    "Rollout truncated at depth %d: model step failed for action %s (%s).",
                    tree.relative_depth(handle),
                    action.tolist(),
                    exc,
                )
                break
            if not np.all(np.isfinite(next_state)):
                logger.warning(
                    "Rollout aborted at depth %d: dynamics returned non-finite state for action %s.",
                    tree.relative_depth(handle),
                    action.tolist(),
                )
                break
            feasible = is_feasible(mdp, next_state)
            reward = float(mdp.reward(next_state, action)) if feasible else 0.0
            handle = tree.add_child(handle, next_state, action, index, reward, terminal=not feasible)
        else:
            handle = select_child(tree, handle, eps)
        path.append(handle)

    return path


def backpropagate(
    tree: SearchTree,
    path: Sequence[int],
    rewards: Sequence[float],
    gamma: float,
    terminal_value: float = 0.0,
) -> None:
    """Leaf-to-root update; each node accumulates the discounted return from itself down."""
    if len(path) != len(rewards):
        raise TreeStructureError("rewards must be aligned with the path.")
    cumulative = terminal_value
    for handle, reward in zip(reversed(path), reversed(rewards)):
        cumulative = reward + gamma * cumulative
        node = tree.node(handle)
        node.N += 1
        node.V += cumulative


def uct_search(tree: SearchTree, mdp: MdpSpec, L: int, rng: np.random.Generator) -> SearchTree:
    """Run exactly L rollouts; a rollout cut short by the model is still backed up."""
    for _ in range(L):
        path = rollout_once(tree, mdp, rng)
        leaf = tree.node(path[-1])
        terminal_value = 0.0 if leaf.terminal else float(mdp.value_estimate(leaf.state))
        rewards = [tree.node(h).reward for h in path]
        backpropagate(tree, path, rewards, mdp.gamma, terminal_value)
        tree.rollouts += 1
    return tree


#Extraction, trimming, reset
def best_child(tree: SearchTree, handle: int | None = None) -> Tuple[np.ndarray, int]:
    node = tree.node(tree.root if handle is None else handle)
    visited = [c for c in node.children if tree.node(c).N > 0]
    if not visited:
        raise PlannerStarvationError("Root has no visited children; the planner produced no plan.")
    best = visited[0]
    best_mean = tree.node(best).mean_value
    for c in visited[1:]:
        mean = tree.node(c).mean_value
        if mean > best_mean:
            best, best_mean = c, mean
    return tree.node(best).action_in.copy(), best


def re_root(tree: SearchTree, chosen: int) -> SearchTree:
    """Keep only the subtree under ``chosen``; retained nodes are not visited."""
    old_root = tree.root
    if chosen not in tree.node(old_root).children:
        raise TreeStructureError(f"Node {chosen} is not a first-level child of the root.")

    stack = [old_root]
    while stack:
        h = stack.pop()
        stack.extend(c for c in tree.node(h).children if c != chosen)
        tree.release(h)

    new_root = tree.node(chosen)
    new_root.parent = NO_PARENT
    tree.root = chosen
    tree.root_depth = new_root.depth
    return tree


def reset_check(
    tree_root_state: np.ndarray,
    measured_state: np.ndarray,
    tau: float,
    angle_indices: Sequence[int] = (),
) -> bool:
    if tau <= 0.0:
        raise InvalidStateError(f"tau must be > 0, got {tau}.")
    a = to_vector(tree_root_state, name="tree root state")
    b = to_vector(measured_state, name="measured state")
    if a.shape != b.shape:
        raise InvalidStateError(f"State dimension mismatch: {a.shape[0]} vs {b.shape[0]}.")
    return bool(np.linalg.norm(state_difference(a, b, angle_indices)) > tau)


#Inspection and export
def tree_size(tree: SearchTree) -> int:
    return len(tree)


def snapshot_statistics(tree: SearchTree) -> Dict[int, Tuple[float, int, Tuple[int, ...], int]]:
    return {
        h: (tree.node(h).V, tree.node(h).N, tuple(tree.node(h).children), tree.relative_depth(h))
        for h in tree.iter_subtree()
    }


def tree_records(tree: SearchTree) -> List[dict]:
    records = []
    for h in tree.iter_subtree():
        node = tree.node(h)
        records.append(
            {
                "id": h,
                "parent_id": None if h == tree.root else node.parent,
                "state": node.state.tolist(),
                "action": node.action_in.tolist(),
                "V": node.V,
                "N": node.N,
            }
        )
    return records


def export_tree_jsonl(tree: SearchTree, path: Union[str, Path]) -> int:
    records = tree_records(tree)
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")
    return len(records)
