"""Binary space-partition tree shared by the RP and axis-parallel partitioners."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .geometry import CellData, InvalidInput, project

MEDIAN = "median"
NOISY = "noisy"
KD_MEDIAN = "kd_median"
DYADIC = "dyadic_midpoint"


class Node:
    """A tree node. Leaves have ``direction is None``.

    A point ``x`` routes left iff ``x @ direction <= threshold``.
    """

    __slots__ = ("indices", "level", "direction", "threshold", "kind", "left",
                 "right", "box", "axis")

    def __init__(self, indices, level, box=None):
        self.indices = np.asarray(indices, dtype=np.intp)
        self.level = int(level)
        self.direction = None
        self.threshold = None
        self.kind = None
        self.left = None
        self.right = None
        self.box = box
        self.axis = None

    @property
    def is_leaf(self):
        return self.left is None

    @property
    def count(self):
        return len(self.indices)

    @property
    def frozen(self):
        return self.count <= 1

    def cell(self) -> CellData:
        return CellData(self.indices, self.level)

    def set_split(self, direction, threshold, kind, left, right, axis=None):
        self.direction = direction
        self.threshold = float(threshold)
        self.kind = kind
        self.left = left
        self.right = right
        self.axis = axis

    def graft(self, other: "Node"):
        """Take over the split and children of ``other`` (a subtree root for this cell)."""
        if other.is_leaf:
            return
        self.set_split(other.direction, other.threshold, other.kind, other.left,
                       other.right, other.axis)

    def iter_nodes(self):
        stack = [self]
        while stack:
            node = stack.pop()
            yield node
            if not node.is_leaf:
                stack.append(node.right)
                stack.append(node.left)

    def leaves(self):
        return [n for n in self.iter_nodes() if n.is_leaf]

    def height(self):
        return max(n.level for n in self.iter_nodes()) - self.level

    def __repr__(self):
        if self.is_leaf:
            return f"Leaf(level={self.level}, n={self.count})"
        return f"Split({self.kind}, level={self.level}, n={self.count})"


@dataclass
class Subtree:
    """Result of growing a subtree below one cell."""

    root: Node
    depth: int
    rng_seed: tuple = ()
    n_directions: int = 0
    repetition: int = 0
    capped: bool = False
    stats: dict = field(default_factory=dict)

    @property
    def leaves(self):
        return self.root.leaves()

    def frontier(self):
        return [leaf.cell() for leaf in self.leaves]


def route(root: Node, x, stop=None) -> tuple[Node, int]:
    """Walk ``x`` down from ``root``; returns the reached node and path length.

    Descent ends at a leaf or at any node in ``stop`` (a set of node ids).
    """
    node, steps = root, 0
    while not node.is_leaf and (stop is None or id(node) not in stop):
        node = node.left if float(project(x, node.direction)) <= node.threshold else node.right
        steps += 1
    return node, steps


class RoutingTable:
    """Flattened copy of a tree for fast batch and single-point routing."""

    def __init__(self, root: Node, dim: int):
        nodes = list(root.iter_nodes())
        self.nodes = nodes
        self.index = {id(n): i for i, n in enumerate(nodes)}
        N = len(nodes)
        self.dim = dim
        self.directions = np.zeros((N, dim))
        self.thresholds = np.zeros(N)
        self.left = np.full(N, -1, dtype=np.intp)
        self.right = np.full(N, -1, dtype=np.intp)
        for i, n in enumerate(nodes):
            if not n.is_leaf:
                self.directions[i] = n.direction
                self.thresholds[i] = n.threshold
                self.left[i] = self.index[id(n.left)]
                self.right[i] = self.index[id(n.right)]
        self._dir_list = [d for d in self.directions]
        self._thr_list = self.thresholds.tolist()
        self._left_list = self.left.tolist()
        self._right_list = self.right.tolist()

    def stop_mask(self, stop_nodes) -> np.ndarray:
        mask = self.left < 0
        for n in stop_nodes:
            mask[self.index[id(n)]] = True
        return mask

    def route_one(self, x, stop_mask) -> tuple[int, int]:
        i, steps = 0, 0
        stop = stop_mask
        dirs, thr, left, right = self._dir_list, self._thr_list, self._left_list, self._right_list
        while not stop[i]:
            i = left[i] if float(project(x, dirs[i])) <= thr[i] else right[i]
            steps += 1
        return i, steps

    def route_batch(self, X, stop_mask) -> tuple[np.ndarray, np.ndarray]:
        X = np.asarray(X, dtype=np.float64)
        if X.ndim != 2 or X.shape[1] != self.dim:
            raise InvalidInput(f"expected queries of dimension {self.dim}")
        cur = np.zeros(len(X), dtype=np.intp)
        steps = np.zeros(len(X), dtype=np.intp)
        active = np.flatnonzero(~stop_mask[cur])
        while active.size:
            nid = cur[active]
            proj = project(X[active], self.directions[nid])
            go_left = proj <= self.thresholds[nid]
            cur[active] = np.where(go_left, self.left[nid], self.right[nid])
            steps[active] += 1
            active = active[~stop_mask[cur[active]]]
        return cur, steps


def check_partition(leaves, indices) -> bool:
    """True when the leaves' index sets are disjoint and cover ``indices``."""
    allidx = np.concatenate([np.asarray(l.indices, dtype=np.intp) for l in leaves]) \
        if leaves else np.zeros(0, dtype=np.intp)
    return len(allidx) == len(indices) and np.array_equal(np.sort(allidx), np.sort(indices))


def structure_violations(root: Node, n: int, X=None) -> list[str]:
    """Check depth/balance invariants of a built tree.

    * median splits send exactly ceil(m/2) points left;
    * a node's count is at most ceil(3/4 * grandparent count) + 1;
    * nodes at level >= 6 * ceil(log2 n) hold at most one point;
    * training points route to the child that holds them (when ``X`` given).
    """
    out = []
    cap = 6 * int(np.ceil(np.log2(max(n, 2))))
    parent = {}
    for node in root.iter_nodes():
        if node.level >= cap and node.count > 1:
            out.append(f"node at level {node.level} holds {node.count} points")
        if node.is_leaf:
            continue
        parent[id(node.left)] = node
        parent[id(node.right)] = node
        m = node.count
        if node.left.count + node.right.count != m:
            out.append(f"children do not partition node at level {node.level}")
        if node.kind in (MEDIAN, KD_MEDIAN) and node.left.count != (m + 1) // 2:
            out.append(f"unbalanced median split {node.left.count}/{node.right.count}")
        if X is not None:
            # training points tied exactly at a median threshold may sit right
            if node.left.count and np.any(project(X[node.left.indices], node.direction) > node.threshold):
                out.append(f"routing mismatch below level {node.level}")
            if node.right.count and np.any(project(X[node.right.indices], node.direction) < node.threshold):
                out.append(f"routing mismatch below level {node.level}")
            elif node.right.count and node.kind == NOISY and np.any(
                    project(X[node.right.indices], node.direction) <= node.threshold):
                out.append(f"routing mismatch below level {node.level}")
    for node in root.iter_nodes():
        p = parent.get(id(node))
        gp = parent.get(id(p)) if p is not None else None
        if gp is not None and node.count > int(np.ceil(0.75 * gp.count)) + 1:
            out.append(f"count {node.count} exceeds 3/4 of grandparent {gp.count}")
    return out
