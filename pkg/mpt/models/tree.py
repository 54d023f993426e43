"""
Index-based arena for the search tree.

Nodes are addressed by integer handles into ``SearchTree.arena``. Trimming
frees the slots of discarded nodes; freed slots are recycled by later
expansions, so retained nodes never move.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, List, Optional

import numpy as np

from mpt.models.errors import TreeStructureError
from mpt.models.schemas import SearchParams

NO_PARENT = -1


@dataclass(slots=True, eq=False)
class TreeNode:

    state: np.ndarray
    action_in: np.ndarray
    action_index: int = -1
    parent: int = NO_PARENT
    children: List[int] = field(default_factory=list)
    V: float = 0.0
    N: int = 0
    depth: int = 0
    reward: float = 0.0
    terminal: bool = False

    @property
    def mean_value(self) -> float:
        return self.V / self.N if self.N else 0.0


class SearchTree:

    def __init__(self, root_state: np.ndarray, action_dim: int, params: SearchParams) -> None:
        self.params = params
        self.action_dim = action_dim
        self.arena: List[Optional[TreeNode]] = []
        self.free: List[int] = []
        self.root = self.allocate(
            TreeNode(state=np.asarray(root_state, dtype=np.float64).copy(), action_in=np.zeros(action_dim))
        )
        self.root_depth = 0
        self.rollouts = 0

    def __len__(self) -> int:
        return len(self.arena) - len(self.free)

    def node(self, handle: int) -> TreeNode:
        node = self.arena[handle] if 0 <= handle < len(self.arena) else None
        if node is None:
            raise TreeStructureError(f"Handle {handle} does not refer to a live node.")
        return node

    @property
    def root_node(self) -> TreeNode:
        return self.node(self.root)

    def allocate(self, node: TreeNode) -> int:
        if self.free:
            handle = self.free.pop()
            self.arena[handle] = node
            return handle
        self.arena.append(node)
        return len(self.arena) - 1

    def release(self, handle: int) -> None:
        self.arena[handle] = None
        self.free.append(handle)

    def add_child(
        self,
        parent: int,
        state: np.ndarray,
        action: np.ndarray,
        action_index: int,
        reward: float,
        terminal: bool,
    ) -> int:
        parent_node = self.node(parent)
        child = TreeNode(
            state=state,
            action_in=np.asarray(action, dtype=np.float64).copy(),
            action_index=action_index,
            parent=parent,
            depth=parent_node.depth + 1,
            reward=reward,
            terminal=terminal,
        )
        handle = self.allocate(child)
        parent_node.children.append(handle)
        return handle

    def relative_depth(self, handle: int) -> int:
        return self.node(handle).depth - self.root_depth

    def iter_subtree(self, handle: Optional[int] = None) -> Iterator[int]:
        """Pre-order traversal in child insertion order."""
        stack = [self.root if handle is None else handle]
        while stack:
            h = stack.pop()
            yield h
            stack.extend(reversed(self.node(h).children))
