import json
import logging
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from conftest import EchoDynamics, brute_force_first_action, make_binary_mdp
from mpt.models.errors import (
    ContactResolutionError,
    InvalidStateError,
    PlannerStarvationError,
    ScoringError,
    TreeStructureError,
)
from mpt.models.schemas import ActionSet, Box, MdpSpec, SearchParams
from mpt.models.tree import TreeNode
from mpt.services.mdp_service import build_value_estimate
from mpt.services.tree_service import (
    backpropagate,
    best_child,
    export_tree_jsonl,
    new_tree,
    re_root,
    reset_check,
    rollout_once,
    select_child,
    snapshot_statistics,
    tree_records,
    tree_size,
    uct_score,
    uct_search,
)

FAR_BARREL_STATE = np.array([0.0, 0.0, 0.0, 2.5, 2.5])


def _manual_tree(params=None):
    """Root with bare children; statistics are set by each test."""
    return new_tree(np.zeros(1), make_binary_mdp(), params or SearchParams(K=3))


def _chain(tree, parent, length):
    handles = []
    for i in range(length):
        parent = tree.add_child(parent, np.zeros(1), np.array([float(i)]), i, 0.0, False)
        handles.append(parent)
    return handles


def _subtree_snapshot(tree, handle):
    base = tree.node(handle).depth
    return {
        h: (tree.node(h).V, tree.node(h).N, tuple(tree.node(h).children), tree.node(h).depth - base)
        for h in tree.iter_subtree(handle)
    }


# ── scoring ──────────────────────────────────────────────────────────────────

def test_uct_score_examples():
    assert uct_score(TreeNode(np.zeros(1), np.zeros(1), V=0.0, N=1), 1, 1.0) == 0.0
    score = uct_score(TreeNode(np.zeros(1), np.zeros(1), V=2.0, N=4), 16, 1.0)
    assert score == pytest.approx(0.5 + math.sqrt(math.log(16) / 4))
    assert score == pytest.approx(1.3326, abs=1e-4)
    assert uct_score(TreeNode(np.zeros(1), np.zeros(1), V=3.0, N=4), 16, 0.0) == 0.75


def test_uct_score_rejects_unvisited_child():
    with pytest.raises(ScoringError):
        uct_score(TreeNode(np.zeros(1), np.zeros(1)), 4, 1.0)


def test_select_child_picks_highest_score_and_lowest_index_on_ties():
    tree = _manual_tree()
    a = tree.add_child(tree.root, np.zeros(1), np.array([0.0]), 0, 0.0, False)
    b = tree.add_child(tree.root, np.zeros(1), np.array([1.0]), 1, 0.0, False)
    tree.root_node.N = 2
    for h in (a, b):
        tree.node(h).N = 1
        tree.node(h).V = 0.5
    assert select_child(tree, tree.root, 1.0) == a
    tree.node(b).V = 0.9
    assert select_child(tree, tree.root, 1.0) == b


def test_select_child_without_children():
    tree = _manual_tree()
    with pytest.raises(ScoringError):
        select_child(tree, tree.root, 1.0)


# ── rollouts ─────────────────────────────────────────────────────────────────

def test_first_rollout_creates_one_chain_of_depth_k(pushcar_mdp):
    params = SearchParams(L=1, b=7, K=5)
    tree = new_tree(FAR_BARREL_STATE, pushcar_mdp, params)
    path = rollout_once(tree, pushcar_mdp, np.random.default_rng(0))
    assert len(path) == params.K + 1
    assert tree_size(tree) == params.K + 1


def test_seven_rollouts_expand_every_root_action(pushcar_mdp):
    tree = new_tree(FAR_BARREL_STATE, pushcar_mdp, SearchParams(L=7, b=7, K=3))
    uct_search(tree, pushcar_mdp, 7, np.random.default_rng(1))
    children = tree.root_node.children
    assert len(children) == 7
    assert sorted(tree.node(c).action_index for c in children) == list(range(7))


def test_search_is_deterministic_for_a_seed(pushcar_mdp):
    params = SearchParams(L=40, b=7, K=4)
    records = []
    for _ in range(2):
        tree = new_tree(FAR_BARREL_STATE, pushcar_mdp, params)
        uct_search(tree, pushcar_mdp, 40, np.random.default_rng(99))
        records.append(json.dumps(tree_records(tree)))
    assert records[0] == records[1]


def test_zero_iterations_leave_tree_unchanged(binary_mdp):
    tree = new_tree(np.zeros(2), binary_mdp, SearchParams(K=3))
    uct_search(tree, binary_mdp, 0, np.random.default_rng(0))
    assert tree_size(tree) == 1
    assert tree.root_node.N == 0


def test_single_iteration_builds_one_chain(binary_mdp):
    tree = new_tree(np.zeros(2), binary_mdp, SearchParams(K=3))
    uct_search(tree, binary_mdp, 1, np.random.default_rng(0))
    assert tree.root_node.N == 1
    assert tree_size(tree) == 4


def test_statistics_invariants_after_search(pushcar_mdp):
    params = SearchParams(L=150, b=7, K=5)
    tree = new_tree(FAR_BARREL_STATE, pushcar_mdp, params)
    uct_search(tree, pushcar_mdp, params.L, np.random.default_rng(7))
    assert tree.root_node.N == params.L

    seen = set()
    for h in tree.iter_subtree():
        assert h not in seen
        seen.add(h)
        node = tree.node(h)
        assert node.V >= 0.0
        assert len(node.children) <= params.b
        assert node.N >= len(node.children)
        assert node.N >= sum(tree.node(c).N for c in node.children)
        for c in node.children:
            assert tree.node(c).parent == h
    assert len(seen) == tree_size(tree)


def test_search_never_exceeds_depth_k(binary_mdp):
    tree = new_tree(np.zeros(2), binary_mdp, SearchParams(K=2))
    uct_search(tree, binary_mdp, 50, np.random.default_rng(3))
    assert max(tree.relative_depth(h) for h in tree.iter_subtree()) == 2


def test_infeasible_successors_are_terminal_with_zero_reward(binary_mdp):
    tree = new_tree(np.zeros(2), binary_mdp, SearchParams(K=6))
    uct_search(tree, binary_mdp, 40, np.random.default_rng(0))
    deep = [h for h in tree.iter_subtree() if tree.relative_depth(h) == 4]
    assert deep
    for h in deep:
        assert tree.node(h).terminal
        assert tree.node(h).reward == 0.0
        assert not tree.node(h).children


class _NanDynamics:
    def step(self, state, action):
        return np.array([math.nan])


def test_non_finite_rollout_is_truncated_and_logged(caplog):
    bounds = Box((-1.0,), (1.0,))
    mdp = MdpSpec(
        state_dim=1,
        action_dim=1,
        state_bounds=bounds,
        action_bounds=bounds,
        gamma=0.9,
        dynamics=_NanDynamics(),
        reward=lambda x, u: 1.0,
        action_set=ActionSet(mode="discrete", bounds=bounds, actions=((0.0,), (1.0,))),
    )
    tree = new_tree(np.zeros(1), mdp, SearchParams(K=3))
    with caplog.at_level(logging.WARNING, logger="mpt.services.tree_service"):
        uct_search(tree, mdp, 3, np.random.default_rng(0))
    assert tree_size(tree) == 1
    assert tree.root_node.N == 3
    assert "non-finite" in caplog.text


def _line_mdp(dynamics, reward=lambda x, u: 1.0, gamma=0.9, value_estimate="zero"):
    bounds = Box((-1.0,), (1.0,))
    return MdpSpec(
        state_dim=1,
        action_dim=1,
        state_bounds=bounds,
        action_bounds=bounds,
        gamma=gamma,
        dynamics=dynamics,
        reward=reward,
        action_set=ActionSet(mode="discrete", bounds=bounds, actions=((0.0,), (1.0,))),
        value_estimate=build_value_estimate(value_estimate, reward, gamma, 1),
    )


class _ContactFailureDynamics:
    def step(self, state, action):
        raise ContactResolutionError("penetration did not resolve")


def test_failed_model_steps_still_count_as_rollouts(caplog):
    mdp = _line_mdp(_ContactFailureDynamics())
    tree = new_tree(np.zeros(1), mdp, SearchParams(K=3))
    with caplog.at_level(logging.WARNING, logger="mpt.services.tree_service"):
        uct_search(tree, mdp, 5, np.random.default_rng(0))
    assert tree.root_node.N == 5
    assert tree.rollouts == 5
    assert tree_size(tree) == 1
    assert "model step failed" in caplog.text


def test_stationary_tail_keeps_reused_means_on_the_fresh_scale():
    gamma, r = 0.9, 0.5
    mdp = _line_mdp(EchoDynamics(), reward=lambda x, u: r, gamma=gamma, value_estimate="stationary")
    tree = new_tree(np.zeros(1), mdp, SearchParams(K=3))
    rng = np.random.default_rng(0)
    uct_search(tree, mdp, 30, rng)
    for _ in range(4):
        _, handle = best_child(tree)
        re_root(tree, handle)
        uct_search(tree, mdp, 30, rng)
        for h in tree.iter_subtree():
            assert tree.node(h).mean_value == pytest.approx(r / (1.0 - gamma))


def test_zero_tail_leaves_reused_means_short_of_fresh_ones():
    gamma, r = 0.9, 0.5
    mdp = _line_mdp(EchoDynamics(), reward=lambda x, u: r, gamma=gamma)
    tree = new_tree(np.zeros(1), mdp, SearchParams(K=3))
    rng = np.random.default_rng(0)
    uct_search(tree, mdp, 30, rng)
    _, handle = best_child(tree)
    re_root(tree, handle)
    uct_search(tree, mdp, 30, rng)
    # fresh returns from the new root carry four rewards, reused ones only three
    fresh = r * (1.0 - gamma**4) / (1.0 - gamma)
    assert tree.root_node.mean_value < fresh - 1e-9


# ── backpropagation ──────────────────────────────────────────────────────────

def test_backpropagate_single_node():
    tree = _manual_tree()
    backpropagate(tree, [tree.root], [0.7], 0.9, 0.0)
    assert tree.root_node.N == 1
    assert tree.root_node.V == pytest.approx(0.7)


def test_backpropagate_two_node_path_matches_hand_unrolled_loop():
    tree = _manual_tree()
    leaf = tree.add_child(tree.root, np.zeros(1), np.zeros(1), 0, 0.4, False)
    backpropagate(tree, [tree.root, leaf], [0.3, 0.4], 0.5, 0.0)
    assert tree.node(leaf).V == pytest.approx(0.4)
    assert tree.root_node.V == pytest.approx(0.3 + 0.5 * 0.4)


def test_backpropagate_seeds_leaf_with_terminal_value():
    tree = _manual_tree()
    leaf = tree.add_child(tree.root, np.zeros(1), np.zeros(1), 0, 0.0, False)
    backpropagate(tree, [tree.root, leaf], [0.0, 0.0], 0.5, 2.0)
    assert tree.node(leaf).V == pytest.approx(1.0)
    assert tree.root_node.V == pytest.approx(0.5)


def test_backpropagate_zero_rewards_only_count_visits():
    tree = _manual_tree()
    chain = _chain(tree, tree.root, 3)
    backpropagate(tree, [tree.root] + chain, [0.0] * 4, 0.9, 0.0)
    for h in [tree.root] + chain:
        assert tree.node(h).N == 1
        assert tree.node(h).V == 0.0


def test_backpropagate_misaligned_rewards():
    tree = _manual_tree()
    with pytest.raises(TreeStructureError):
        backpropagate(tree, [tree.root], [0.1, 0.2], 0.9)


# ── extraction ───────────────────────────────────────────────────────────────

def test_best_child_uses_mean_value():
    tree = _manual_tree()
    kids = [tree.add_child(tree.root, np.zeros(1), np.array([float(i)]), i, 0.0, False) for i in range(3)]
    for h, mean in zip(kids, (0.2, 0.9, 0.4)):
        tree.node(h).N = 10
        tree.node(h).V = 10 * mean
    action, handle = best_child(tree)
    assert handle == kids[1]
    assert action[0] == 1.0


def test_best_child_equal_means_picks_first():
    tree = _manual_tree()
    kids = [tree.add_child(tree.root, np.zeros(1), np.array([float(i)]), i, 0.0, False) for i in range(3)]
    for h in kids:
        tree.node(h).N, tree.node(h).V = 2, 1.0
    assert best_child(tree)[1] == kids[0]


def test_best_child_without_children_signals_starvation():
    with pytest.raises(PlannerStarvationError):
        best_child(_manual_tree())


def test_uct_finds_brute_force_optimum(binary_mdp):
    optimal_first, _ = brute_force_first_action(binary_mdp, depth=3)
    assert optimal_first == 1
    for seed in range(10):
        tree = new_tree(np.zeros(2), binary_mdp, SearchParams(K=3))
        uct_search(tree, binary_mdp, 3000, np.random.default_rng(seed))
        action, _ = best_child(tree)
        assert action[0] == float(optimal_first)


@pytest.mark.slow
def test_uct_brute_force_oracle_at_full_budget(binary_mdp):
    optimal_first, _ = brute_force_first_action(binary_mdp, depth=3)
    hits = 0
    for seed in range(100):
        tree = new_tree(np.zeros(2), binary_mdp, SearchParams(K=3))
        uct_search(tree, binary_mdp, 100_000, np.random.default_rng(seed))
        hits += int(best_child(tree)[0][0] == float(optimal_first))
    assert hits >= 99


# ── re-rooting and reset ─────────────────────────────────────────────────────

def test_re_root_keeps_only_chosen_subtree():
    tree = _manual_tree()
    a = tree.add_child(tree.root, np.zeros(1), np.array([0.0]), 0, 0.1, False)
    b = tree.add_child(tree.root, np.zeros(1), np.array([1.0]), 1, 0.2, False)
    _chain(tree, a, 5)
    _chain(tree, _chain(tree, a, 2)[0], 2)
    _chain(tree, b, 4)
    for h in tree.iter_subtree():
        tree.node(h).N, tree.node(h).V = 3, 1.5
    before = _subtree_snapshot(tree, a)
    assert len(before) == 10

    re_root(tree, a)
    assert tree.root == a
    assert tree_size(tree) == 10
    assert snapshot_statistics(tree) == before
    assert tree.relative_depth(a) == 0


def test_re_root_to_leaf_gives_single_root():
    tree = _manual_tree()
    leaf = tree.add_child(tree.root, np.zeros(1), np.zeros(1), 0, 0.5, False)
    tree.node(leaf).N, tree.node(leaf).V = 4, 2.0
    re_root(tree, leaf)
    assert tree_size(tree) == 1
    assert (tree.root_node.N, tree.root_node.V) == (4, 2.0)


def test_re_root_twice_equals_grandchild_subtree(binary_mdp):
    tree = new_tree(np.zeros(2), binary_mdp, SearchParams(K=3))
    uct_search(tree, binary_mdp, 60, np.random.default_rng(4))
    child = tree.root_node.children[0]
    grandchild = tree.node(child).children[0]
    expected = _subtree_snapshot(tree, grandchild)
    re_root(tree, child)
    re_root(tree, grandchild)
    assert snapshot_statistics(tree) == expected


def test_re_root_rejects_non_child():
    tree = _manual_tree()
    a = tree.add_child(tree.root, np.zeros(1), np.zeros(1), 0, 0.0, False)
    grandchild = tree.add_child(a, np.zeros(1), np.zeros(1), 0, 0.0, False)
    with pytest.raises(TreeStructureError):
        re_root(tree, grandchild)


def test_freed_slots_are_recycled_and_stale_handles_rejected():
    tree = _manual_tree()
    a = tree.add_child(tree.root, np.zeros(1), np.zeros(1), 0, 0.0, False)
    b = tree.add_child(tree.root, np.zeros(1), np.ones(1), 1, 0.0, False)
    old_root = tree.root
    re_root(tree, a)
    with pytest.raises(TreeStructureError):
        tree.node(b)
    new = tree.add_child(a, np.zeros(1), np.zeros(1), 0, 0.0, False)
    assert new in (old_root, b)
    assert len(tree.arena) == 3


@settings(max_examples=1000, deadline=None)
@given(st.integers(0, 2**32 - 1), st.integers(1, 60), st.integers(0, 1))
def test_re_root_preserves_retained_statistics(seed, iterations, pick):
    mdp = make_binary_mdp()
    tree = new_tree(np.zeros(2), mdp, SearchParams(K=3))
    uct_search(tree, mdp, iterations, np.random.default_rng(seed))
    children = tree.root_node.children
    chosen = children[pick % len(children)]
    before = _subtree_snapshot(tree, chosen)
    re_root(tree, chosen)
    assert snapshot_statistics(tree) == before
    assert tree_size(tree) == len(before)


def test_reset_check_examples():
    assert not reset_check([0.0, 0.0], [0.0, 0.0], 0.5)
    assert reset_check([0.0, 0.0], [0.6, 0.0], 0.5)
    assert not reset_check([0.0, 0.0], [0.5, 0.0], 0.5)


def test_reset_check_wraps_heading():
    a = [0.0, 0.0, math.pi - 0.01, 0.0, 0.0]
    b = [0.0, 0.0, -math.pi + 0.01, 0.0, 0.0]
    assert reset_check(a, b, 0.5)
    assert not reset_check(a, b, 0.5, angle_indices=(2,))


def test_reset_check_errors():
    with pytest.raises(InvalidStateError):
        reset_check([0.0, 0.0], [0.0, 0.0, 0.0], 0.5)
    with pytest.raises(InvalidStateError):
        reset_check([0.0], [0.0], 0.0)


def test_export_tree_jsonl(tmp_path, binary_mdp):
    tree = new_tree(np.zeros(2), binary_mdp, SearchParams(K=3))
    uct_search(tree, binary_mdp, 20, np.random.default_rng(0))
    path = tmp_path / "tree.jsonl"
    written = export_tree_jsonl(tree, path)
    lines = [json.loads(line) for line in path.read_text().splitlines()]
    assert written == len(lines) == tree_size(tree)
    assert lines[0]["parent_id"] is None
    assert lines[0]["N"] == 20
    assert set(lines[0]) == {"id", "parent_id", "state", "action", "V", "N"}
