"""Axis-parallel partitioners (k-d and dyadic) with the same frontier contract
as the RP subtrees: grow level by level until the frontier's average data
diameter reaches the target or the depth cap is hit."""

from __future__ import annotations

import numpy as np

from .geometry import CellData, InvalidInput, as_points, avg_from_parts, max_pairwise_distance
from .rptree import default_depth_cap, per_cell_median_split
from .tree import DYADIC, KD_MEDIAN, Node, Subtree

BOX_MARGIN = 1e-9


def _unit(D, axis):
    e = np.zeros(D)
    e[axis] = 1.0
    return e


class _Diams:
    def __init__(self, X):
        self.X = X
        self._cache = {}

    def __call__(self, node):
        v = self._cache.get(id(node))
        if v is None:
            v = max_pairwise_distance(self.X[node.indices]) if node.count > 1 else 0.0
            self._cache[id(node)] = v
        return v

    def avg(self, leaves):
        return avg_from_parts([l.count for l in leaves], [self(l) for l in leaves])


def _grow_levels(root, X, target, depth_cap, split):
    diams = _Diams(X)
    frontier = [root]
    depth = 0
    while True:
        if diams.avg(frontier) <= target:
            return Subtree(root, depth)
        if depth >= depth_cap:
            return Subtree(root, depth, capped=True)
        nxt = []
        grew = False
        for leaf in frontier:
            if not leaf.frozen and split(leaf):
                nxt.extend((leaf.left, leaf.right))
                grew = True
            else:
                nxt.append(leaf)
        if not grew:
            # nothing splittable left (e.g. duplicate points); report as capped
            return Subtree(root, depth, capped=True)
        frontier = nxt
        depth += 1


def kd_partition(root: CellData, data, target: float, depth_cap: int | None = None) -> Subtree:
    """k-d subtree: median split along the coordinate of largest data spread."""
    X = as_points(data)
    if target < 0:
        raise InvalidInput("target must be nonnegative")
    if depth_cap is None:
        depth_cap = default_depth_cap(len(X), root.depth)
    D = X.shape[1]
    node = Node(np.sort(root.indices), root.depth)

    def split(leaf):
        P = X[leaf.indices]
        axis = int(np.argmax(P.max(axis=0) - P.min(axis=0)))
        e = _unit(D, axis)
        lc, rc, thr = per_cell_median_split(leaf.cell(), X, e)
        leaf.set_split(e, thr, KD_MEDIAN, Node(lc.indices, lc.depth), Node(rc.indices, rc.depth),
                       axis=axis)
        return True

    return _grow_levels(node, X, target, depth_cap, split)


def bounding_box(P: np.ndarray):
    lo, hi = P.min(axis=0), P.max(axis=0)
    pad = BOX_MARGIN * np.maximum(hi - lo, np.maximum(np.abs(lo), np.abs(hi)))
    pad = np.where(pad > 0, pad, BOX_MARGIN)
    return lo - pad, hi + pad


def dyadic_partition(root: CellData, data, target: float, depth_cap: int | None = None,
                     box=None) -> Subtree:
    """Dyadic subtree: bisect the longest box side at its midpoint (ties to the lowest axis)."""
    X = as_points(data)
    if target < 0:
        raise InvalidInput("target must be nonnegative")
    if depth_cap is None:
        depth_cap = default_depth_cap(len(X), root.depth)
    D = X.shape[1]
    idx = np.sort(root.indices)
    if box is None:
        box = bounding_box(X[idx]) if len(idx) else (np.zeros(D), np.ones(D))
    node = Node(idx, root.depth, box=(np.asarray(box[0], float), np.asarray(box[1], float)))

    def split(leaf):
        lo, hi = leaf.box
        axis = int(np.argmax(hi - lo))
        mid = 0.5 * (lo[axis] + hi[axis])
        go_left = X[leaf.indices, axis] <= mid
        lhi, rlo = hi.copy(), lo.copy()
        lhi[axis] = mid
        rlo[axis] = mid
        left = Node(leaf.indices[go_left], leaf.level + 1, box=(lo, lhi))
        right = Node(leaf.indices[~go_left], leaf.level + 1, box=(rlo, hi))
        leaf.set_split(_unit(D, axis), mid, DYADIC, left, right, axis=axis)
        return True

    return _grow_levels(node, X, target, depth_cap, split)
