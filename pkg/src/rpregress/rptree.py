"""Randomized hyperplane splitting: basic RP subtrees and the boosted
shortest-of-R wrapper.

Levels alternate between noisy splits (one shared hyperplane, offset from the
subtree root's projection median) and balanced per-cell median splits. The
split kind at a level depends on the parity of the global tree level, so the
alternation continues seamlessly across grafted subtrees.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .geometry import (APPROX2, EXACT, CellData, InvalidInput, as_points, double_sweep,
                       max_pairwise_distance, project)
from .tree import MEDIAN, NOISY, Node, Subtree


class CoreFailure(RuntimeError):
    """Every repetition exceeded the depth cap before halving the diameter."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class RngStream:
    """Deterministic random stream identified by a master seed and a key path."""

    seed: int
    key: tuple = ()

    def child(self, *key) -> "RngStream":
        return RngStream(self.seed, self.key + tuple(int(k) for k in key))

    def generator(self) -> np.random.Generator:
        return np.random.default_rng(np.random.SeedSequence(self.seed, spawn_key=self.key))


def _as_generator(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    return np.random.default_rng(rng)


def sample_direction(D: int, rng) -> np.ndarray:
    """Gaussian direction with i.i.d. N(0, 1/D) coordinates."""
    if D < 1:
        raise InvalidInput("direction dimension must be >= 1")
    gen = _as_generator(rng)
    while True:
        v = gen.standard_normal(D) * (1.0 / math.sqrt(D))
        if v.any():
            return v


def sample_noise_offset(root_diam: float, D: int, rng) -> float:
    """Uniform offset on [-6 root_diam / sqrt(D), +6 root_diam / sqrt(D)]."""
    if root_diam < 0:
        raise InvalidInput("root diameter must be nonnegative")
    gen = _as_generator(rng)
    return (2.0 * gen.random() - 1.0) * 6.0 / math.sqrt(D) * root_diam


def repetitions(n: int, delta: float) -> int:
    """Number of basic subtrees grown per boosted call: ceil(log2(6 n^2 / delta))."""
    if not 0 < delta < 1:
        raise InvalidInput("delta must lie in (0, 1)")
    return max(1, math.ceil(math.log2(6.0 * n * n / delta)))


def default_depth_cap(n: int, level: int) -> int:
    return 6 * math.ceil(math.log2(max(n, 2))) - level


def per_cell_median_split(cell: CellData, data, direction):
    """Balanced split of one cell along ``direction``.

    Projections are sorted with ties broken by ascending sample index; the
    first ceil(m/2) go left. The routing threshold is the midpoint of the two
    middle order statistics.
    """
    X = as_points(data)
    idx = cell.indices
    m = len(idx)
    if m < 2:
        raise InvalidInput("median split needs at least two points")
    proj = project(X[idx], np.asarray(direction, dtype=np.float64))
    order = np.lexsort((idx, proj))
    h = (m + 1) // 2
    thr = 0.5 * (proj[order[h - 1]] + proj[order[h]])
    left = np.sort(idx[order[:h]])
    right = np.sort(idx[order[h:]])
    return CellData(left, cell.depth + 1), CellData(right, cell.depth + 1), float(thr)


# --------------------------------------------------------------------------
# vectorised grower


def _group(leaf_of):
    order = np.argsort(leaf_of, kind="stable")
    lf = leaf_of[order]
    starts = np.flatnonzero(np.r_[True, lf[1:] != lf[:-1]]) if len(lf) else np.zeros(0, np.intp)
    counts = np.diff(np.r_[starts, len(lf)])
    return order, starts, counts, lf[starts] if len(lf) else lf


def _sweep_bounds(P, starts, counts):
    """Per-group double-sweep (lower, upper) diameter bounds on grouped points."""
    G = len(starts)
    gpos = np.repeat(np.arange(G), counts)
    pos = np.arange(len(P))
    da = np.sqrt(np.sum((P - P[starts][gpos]) ** 2, axis=1))
    ra = np.maximum.reduceat(da, starts)
    big = len(P)
    b = np.minimum.reduceat(np.where(da == ra[gpos], pos, big), starts)
    db = np.sqrt(np.sum((P - P[b][gpos]) ** 2, axis=1))
    lb = np.maximum.reduceat(db, starts)
    ub = np.minimum(2.0 * ra, 2.0 * lb)
    return lb, ub


@dataclass
class _Growth:
    depth: int
    leaf_of: np.ndarray
    leaf_level: list
    records: list          # per level: (direction, kind, [(parent, left, right, thr), ...])
    n_leaves: int
    avg_diam: float
    n_directions: int


class _Grower:
    """Grows one basic RP subtree over the points ``X[gidx]``."""

    def __init__(self, Xr, gidx, target, level, root_diam, scope="root", mode=EXACT):
        self.Xr = Xr
        self.gidx = gidx
        self.m = len(gidx)
        self.D = Xr.shape[1]
        self.target = float(target)
        self.level = level
        self.root_diam = root_diam
        self.scope = scope
        self.mode = mode

    def run(self, depth_cap, gen) -> _Growth | None:
        m = self.m
        leaf_of = np.zeros(m, dtype=np.intp)
        count = [m]
        level = [self.level]
        lb = [self.root_diam]
        ub = [self.root_diam]
        exact = [self.root_diam]
        records = []
        self.split_parents = set()
        self.n_directions = 0
        i = 1
        while True:
            done, avg = self._halved(leaf_of, count, lb, ub, exact)
            if done:
                depth = max(level) - self.level
                return _Growth(depth, leaf_of, level, records, (len(count) + 1) // 2, avg,
                               self.n_directions)
            if i > depth_cap:
                return None
            v = sample_direction(self.D, gen)
            tau = sample_noise_offset(self.root_diam, self.D, gen)
            self.n_directions += 1
            noisy = (self.level + i) % 2 == 1
            leaf_of, splits = self._split_level(leaf_of, count, v, tau, noisy)
            for parent, _, _, _ in splits:
                self.split_parents.add(parent)
                for _ in range(2):
                    level.append(level[parent] + 1)
                    count.append(0)
                    lb.append(0.0)
                    ub.append(0.0)
                    exact.append(None)
            self._update_bounds(leaf_of, splits, count, lb, ub, exact)
            records.append((v, NOISY if noisy else MEDIAN, splits))
            i += 1

    def _split_level(self, leaf_of, count, v, tau, noisy):
        proj = project(self.Xr, v)
        active_leaf = np.asarray(count) >= 2
        act = np.flatnonzero(active_leaf[leaf_of])
        if act.size == 0:
            return leaf_of, []
        lf = leaf_of[act]
        pr = proj[act]
        order = np.lexsort((self.gidx[act], pr, lf))
        lf_s = lf[order]
        pr_s = pr[order]
        starts = np.flatnonzero(np.r_[True, lf_s[1:] != lf_s[:-1]])
        sizes = np.diff(np.r_[starts, len(lf_s)])
        parents = lf_s[starts]
        G = len(starts)
        gpos = np.repeat(np.arange(G), sizes)
        if noisy:
            if self.scope == "root":
                srt_all = np.sort(proj)
                mm = len(proj)
                t = np.full(G, 0.5 * (srt_all[(mm - 1) // 2] + srt_all[mm // 2]) + tau)
            else:
                lo = starts + (sizes - 1) // 2
                hi = starts + sizes // 2
                t = 0.5 * (pr_s[lo] + pr_s[hi]) + tau
            go_left_sorted = pr_s <= t[gpos]
        else:
            h = (sizes + 1) // 2
            rank = np.arange(len(lf_s)) - starts[gpos]
            go_left_sorted = rank < h[gpos]
            t = 0.5 * (pr_s[starts + h - 1] + pr_s[starts + h])
        base = len(count)
        left_id = base + 2 * np.arange(G)
        new_sorted = np.where(go_left_sorted, left_id[gpos], left_id[gpos] + 1)
        new_leaf_of = leaf_of.copy()
        new_leaf_of[act[order]] = new_sorted
        splits = [(int(parents[g]), int(left_id[g]), int(left_id[g]) + 1, float(t[g]))
                  for g in range(G)]
        return new_leaf_of, splits

    def _update_bounds(self, leaf_of, splits, count, lb, ub, exact):
        if not splits:
            return
        child_ids = np.array([c for s in splits for c in (s[1], s[2])])
        mask = np.isin(leaf_of, child_ids)
        pts = np.flatnonzero(mask)
        order, starts, counts, ids = _group(leaf_of[pts])
        P = self.Xr[pts[order]]
        if len(P):
            glb, gub = _sweep_bounds(P, starts, counts)
        for g, leaf in enumerate(ids.tolist()):
            count[leaf] = int(counts[g])
            lb[leaf] = float(glb[g]) if counts[g] > 1 else 0.0
            ub[leaf] = float(gub[g]) if counts[g] > 1 else 0.0
            if counts[g] <= 1:
                exact[leaf] = 0.0
        for parent, left, right, _ in splits:
            pub = exact[parent] if exact[parent] is not None else ub[parent]
            for c in (left, right):
                if count[c] == 0:
                    exact[c] = 0.0
                    continue
                ub[c] = min(ub[c], pub)
                if count[c] == count[parent] and exact[parent] is not None:
                    exact[c] = exact[parent]
                if self.mode == APPROX2:
                    exact[c] = lb[c]

    def _points_of(self, leaf, leaf_of):
        return self.Xr[leaf_of == leaf]

    def _halved(self, leaf_of, count, lb, ub, exact):
        """Exact decision of avg diameter <= target, refining bounds lazily."""
        M = self.m
        if M == 0:
            return True, 0.0
        live = [j for j in range(len(count)) if count[j] > 1 and j not in self.split_parents]
        T = self.target

        def value(j, which):
            e = exact[j]
            if e is not None:
                return e
            return lb[j] if which == 0 else ub[j]

        lo = math.sqrt(sum(count[j] * value(j, 0) ** 2 for j in live) / M)
        if lo > T:
            return False, lo
        hi = math.sqrt(sum(count[j] * value(j, 1) ** 2 for j in live) / M)
        if hi <= T:
            return True, hi if all(exact[j] is not None for j in live) else None
        pending = sorted((j for j in live if exact[j] is None),
                         key=lambda j: -count[j] * (ub[j] ** 2 - lb[j] ** 2))
        for j in pending:
            exact[j] = max_pairwise_distance(self._points_of(j, leaf_of))
            lo = math.sqrt(sum(count[k] * value(k, 0) ** 2 for k in live) / M)
            if lo > T:
                return False, lo
            hi = math.sqrt(sum(count[k] * value(k, 1) ** 2 for k in live) / M)
            if hi <= T:
                return True, hi if all(exact[k] is not None for k in live) else None
        return lo <= T, lo


def _build_subtree(growth: _Growth, gidx, level) -> Node:
    idx_of = {}
    order = np.argsort(growth.leaf_of, kind="stable")
    lf = growth.leaf_of[order]
    if len(lf):
        starts = np.flatnonzero(np.r_[True, lf[1:] != lf[:-1]])
        ends = np.r_[starts[1:], len(lf)]
        for s, e in zip(starts, ends):
            idx_of[int(lf[s])] = np.sort(gidx[order[s:e]])
    empty = np.zeros(0, dtype=np.intp)
    for _, _, splits in reversed(growth.records):
        for parent, left, right, _ in splits:
            idx_of[parent] = np.sort(np.concatenate([idx_of.get(left, empty),
                                                     idx_of.get(right, empty)]))
    root = Node(idx_of.get(0, np.asarray(gidx, dtype=np.intp)), level)
    nodes = {0: root}
    for v, kind, splits in growth.records:
        for parent, left, right, thr in splits:
            p = nodes[parent]
            ln = Node(idx_of.get(left, empty), p.level + 1)
            rn = Node(idx_of.get(right, empty), p.level + 1)
            p.set_split(v, thr, kind, ln, rn)
            nodes[left], nodes[right] = ln, rn
    return root


def _prepare(root: CellData, data):
    X = as_points(data)
    gidx = np.sort(np.asarray(root.indices, dtype=np.intp))
    if gidx.size and (gidx[0] < 0 or gidx[-1] >= len(X)):
        raise InvalidInput("cell index out of range")
    return X, gidx


class _SmallGrower:
    """Pure-Python grower for small cells, backed by a precomputed distance matrix.

    Produces the same records and leaf labels as :class:`_Grower` for the
    same random draws.
    """

    def __init__(self, Xr, gidx, target, level, root_diam, scope="root", mode=EXACT):
        self.Xr = Xr
        self.m = len(gidx)
        self.D = Xr.shape[1]
        self.target = float(target)
        self.level = level
        self.root_diam = root_diam
        self.scope = scope
        self.mode = mode
        if mode == EXACT:
            diff = Xr[:, None, :] - Xr[None, :, :]
            self.dist = np.sqrt(np.sum(diff * diff, axis=2)).tolist()
        else:
            self.dist = None
        self._diam_cache = {}

    def _diam(self, members):
        if len(members) < 2:
            return 0.0
        key = tuple(members)
        v = self._diam_cache.get(key)
        if v is None:
            if self.dist is not None:
                rows = self.dist
                v = max(rows[a][b] for k, a in enumerate(members) for b in members[k + 1:])
            else:
                from .geometry import double_sweep
                v = double_sweep(self.Xr[list(members)])[0]
            self._diam_cache[key] = v
        return v

    def run(self, depth_cap, gen) -> _Growth | None:
        m = self.m
        leaves = {0: list(range(m))}      # leaf id -> ascending local positions
        level = [self.level]
        records = []
        self.n_directions = 0
        next_id = 1
        i = 1
        while True:
            if m == 0:
                return _Growth(0, np.zeros(0, np.intp), level, records, 1, 0.0, 0)
            tot = 0.0
            for pts in leaves.values():
                if len(pts) > 1:
                    d = self._diam(pts) if len(pts) < m else self.root_diam
                    tot += len(pts) * d * d
            avg = math.sqrt(tot / m)
            if avg <= self.target:
                leaf_of = np.zeros(m, dtype=np.intp)
                for lid, pts in leaves.items():
                    leaf_of[pts] = lid
                return _Growth(max(level) - self.level, leaf_of, level, records, (len(level) + 1) // 2,
                               avg, self.n_directions)
            if i > depth_cap:
                return None
            v = sample_direction(self.D, gen)
            tau = sample_noise_offset(self.root_diam, self.D, gen)
            self.n_directions += 1
            noisy = (self.level + i) % 2 == 1
            proj_arr = project(self.Xr, v)
            proj = proj_arr.tolist()
            if noisy and self.scope == "root":
                srt_all = sorted(proj)
                t_root = 0.5 * (srt_all[(m - 1) // 2] + srt_all[m // 2]) + tau
            splits = []
            new_leaves = {}
            for lid in sorted(leaves):
                pts = leaves[lid]
                if len(pts) < 2:
                    new_leaves[lid] = pts
                    continue
                srt = sorted(pts, key=lambda p: (proj[p], p))
                k = len(srt)
                if noisy:
                    if self.scope == "root":
                        t = t_root
                    else:
                        t = 0.5 * (proj[srt[(k - 1) // 2]] + proj[srt[k // 2]]) + tau
                    left = [p for p in pts if proj[p] <= t]
                    right = [p for p in pts if proj[p] > t]
                else:
                    h = (k + 1) // 2
                    t = 0.5 * (proj[srt[h - 1]] + proj[srt[h]])
                    left = sorted(srt[:h])
                    right = sorted(srt[h:])
                splits.append((lid, next_id, next_id + 1, float(t)))
                new_leaves[next_id] = left
                new_leaves[next_id + 1] = right
                level.extend((level[lid] + 1, level[lid] + 1))
                next_id += 2
            leaves = new_leaves
            records.append((v, NOISY if noisy else MEDIAN, splits))
            i += 1


SMALL_CELL = 48


def _make_grower(Xr, gidx, target, level, root_diam, scope, mode):
    if scope not in ("root", "cell"):
        raise InvalidInput(f"unknown noisy_median_scope {scope!r}")
    cls = _SmallGrower if len(gidx) <= SMALL_CELL else _Grower
    return cls(Xr, gidx, target, level, root_diam, scope, mode)


def basic_rptree(root: CellData, data, target: float, level: int | None = None,
                 depth_cap: int | None = None, rng=0, *, noisy_median_scope="root",
                 diameter_mode=EXACT, root_diam=None) -> Subtree | None:
    """Grow one RP subtree until its frontier's average data diameter is at most ``target``.

    Returns ``None`` when ``depth_cap`` levels are exhausted first.
    """
    if target < 0:
        raise InvalidInput("target must be nonnegative")
    X, gidx = _prepare(root, data)
    level = root.depth if level is None else level
    if depth_cap is None:
        depth_cap = default_depth_cap(len(X), level)
    Xr = X[gidx]
    if root_diam is None:
        root_diam = _diam(Xr, diameter_mode)
    grower = _make_grower(Xr, gidx, target, level, root_diam, noisy_median_scope, diameter_mode)
    growth = grower.run(depth_cap, _as_generator(rng))
    if growth is None:
        return None
    key = rng.key if isinstance(rng, RngStream) else ()
    return Subtree(_build_subtree(growth, gidx, level), growth.depth, key, growth.n_directions,
                   stats={"avg_diam": growth.avg_diam, "n_leaves": growth.n_leaves})


def _diam(P, mode):
    if mode == APPROX2:
        return double_sweep(P)[0]
    if mode != EXACT:
        raise InvalidInput(f"unknown diameter mode {mode!r}")
    return max_pairwise_distance(P)


def core_rptree(root: CellData, data, target: float, delta: float, level: int | None = None,
                rng=None, *, n: int | None = None, depth_cap: int | None = None,
                n_repetitions: int | None = None, noisy_median_scope="root",
                diameter_mode=EXACT) -> Subtree:
    """Shortest of ``ceil(log2(6 n^2 / delta))`` independent basic subtrees.

    Ties go to the lowest repetition index. Repetitions are run in order and
    each is capped one level below the best depth seen so far, which can only
    discard repetitions that would have lost anyway.
    """
    if not 0 < delta < 1:
        raise InvalidInput("delta must lie in (0, 1)")
    if target < 0:
        raise InvalidInput("target must be nonnegative")
    X, gidx = _prepare(root, data)
    n = len(X) if n is None else n
    level = root.depth if level is None else level
    if rng is None:
        rng = RngStream(0)
    elif not isinstance(rng, RngStream):
        rng = RngStream(int(rng))
    R = n_repetitions if n_repetitions is not None else repetitions(n, delta)
    return boosted_subtree(X[gidx], gidx, target, level, rng, R,
                           default_depth_cap(n, level) if depth_cap is None else depth_cap,
                           noisy_median_scope, diameter_mode)


def boosted_subtree(Xr, gidx, target, level, rng: RngStream, R, depth_cap,
                    scope="root", mode=EXACT, root_diam=None) -> Subtree:
    """Unvalidated core of :func:`core_rptree`; ``gidx`` must be ascending."""
    if root_diam is None:
        root_diam = _diam(Xr, mode)
    grower = _make_grower(Xr, gidx, target, level, root_diam, scope, mode)
    best, best_rep = None, -1
    n_dirs = failed = run = 0
    for r in range(R):
        if best is not None and best.depth <= 1:
            break
        cap = depth_cap if best is None else min(depth_cap, best.depth - 1)
        run += 1
        growth = grower.run(cap, rng.child(r).generator())
        n_dirs += grower.n_directions
        if growth is None:
            failed += 1
            continue
        best, best_rep = growth, r
        if growth.depth == 0:
            break
    if best is None:
        raise CoreFailure(
            f"all {R} repetitions exceeded depth cap {depth_cap}",
            {"repetitions": R, "depth_cap": depth_cap, "level": level,
             "n_points": len(gidx), "target": target, "root_diam": root_diam},
        )
    return Subtree(_build_subtree(best, gidx, level), best.depth, rng.child(best_rep).key,
                   n_dirs, best_rep,
                   stats={"avg_diam": best.avg_diam, "root_diam": root_diam,
                          "repetitions": R, "run": run, "failed": failed,
                          "n_leaves": best.n_leaves})
