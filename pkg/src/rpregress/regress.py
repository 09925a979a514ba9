"""Adaptive RP-tree regression: grow the tree in diameter-halving rounds,
select one of the round frontiers, and fit a piecewise-constant regressor."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .baselines import bounding_box, dyadic_partition, kd_partition
from .data import Dataset
from .geometry import EXACT, CellData, InvalidInput, avg_from_parts
from .rptree import _diam as _mode_diameter
from .rptree import RngStream, boosted_subtree, default_depth_cap, repetitions
from .tree import Node, RoutingTable

log = logging.getLogger(__name__)

CV = "cv"
AUTOSTOP = "autostop"
PARTITIONERS = ("rptree", "kd", "dyadic")


class ConfigurationError(ValueError):
    pass


@dataclass(frozen=True)
class AlphaParams:
    n: int
    delta: float

    def __post_init__(self):
        if self.n < 1:
            raise InvalidInput("n must be >= 1")
        if not 0 < self.delta < 1:
            raise InvalidInput("delta must lie in (0, 1)")


def alpha(params: AlphaParams) -> float:
    """Complexity penalty (log2 n)^2 * max(1, log2 log2(n/delta)) + log2(1/delta)."""
    n, delta = params.n, params.delta
    if n < 2:
        raise InvalidInput("alpha needs n >= 2")
    loglog = max(1.0, math.log2(math.log2(n / delta)))
    return math.log2(n) ** 2 * loglog + math.log2(1.0 / delta)


@dataclass
class PartitionSnapshot:
    round: int
    nodes: list
    level: int
    size: int
    avg_diam: float

    @property
    def cells(self):
        return [node.cell() for node in self.nodes]


@dataclass
class Trace:
    snapshots: list = field(default_factory=list)
    subtree_depths: list = field(default_factory=list)   # (round, cell id, depth)
    selection: dict = field(default_factory=dict)
    n_directions: int = 0


class RegressorModel:
    """Piecewise-constant regressor over a frontier of a routing tree."""

    def __init__(self, root: Node, frontier: PartitionSnapshot, cell_means, default_output,
                 dim: int, table: RoutingTable | None = None):
        self.tree = root
        self.frontier = frontier
        self.cell_means = cell_means          # list aligned with frontier.nodes, None if empty
        self.default_output = np.asarray(default_output, dtype=np.float64)
        self.dim = dim
        self.table = table if table is not None else RoutingTable(root, dim)
        self._stop = self.table.stop_mask(frontier.nodes)
        values = np.tile(self.default_output, (len(self.table.nodes), 1))
        for node, mean in zip(frontier.nodes, cell_means):
            if mean is not None:
                values[self.table.index[id(node)]] = mean
        self._values = values

    @property
    def height(self):
        return max(n.level for n in self.table.nodes)

    def _check(self, x):
        x = np.asarray(x, dtype=np.float64)
        if x.shape[-1] != self.dim:
            raise InvalidInput(f"query dimension {x.shape[-1]} != {self.dim}")
        if not np.all(np.isfinite(x)):
            raise InvalidInput("query must be finite")
        return x

    def predict_one(self, x, return_path=False):
        x = self._check(x)
        i, steps = self.table.route_one(x, self._stop)
        out = self._values[i].copy()
        return (out, steps) if return_path else out

    def predict(self, X, return_path=False):
        """Predictions for a batch of queries (or a single query vector)."""
        X = self._check(X)
        if X.ndim == 1:
            return self.predict_one(X, return_path)
        cur, steps = self.table.route_batch(X, self._stop)
        out = self._values[cur]
        return (out, steps) if return_path else out


def fit_cell_means(frontier: PartitionSnapshot, data: Dataset, root: Node | None = None,
                   table: RoutingTable | None = None) -> RegressorModel:
    y0 = data.Y.mean(axis=0)
    means = [data.Y[node.indices].mean(axis=0) if node.count else None
             for node in frontier.nodes]
    root = root if root is not None else _find_root(frontier, table)
    return RegressorModel(root, frontier, means, y0, data.D, table)


def _find_root(frontier, table):
    if table is not None:
        return table.nodes[0]
    if len(frontier.nodes) == 1:
        return frontier.nodes[0]
    raise InvalidInput("a routing tree root is required for multi-cell frontiers")


def empirical_risk(model: RegressorModel, test: Dataset) -> float:
    """Mean squared Euclidean error of the model on ``test``."""
    if len(test) == 0:
        raise InvalidInput("empty test set")
    resid = test.Y - model.predict(test.X)
    return float(np.mean(np.sum(resid**2, axis=1)))


def decrease_rate(trace: Trace) -> int:
    if not trace.subtree_depths:
        raise InvalidInput("trace holds no subtree depths")
    return max(d for _, _, d in trace.subtree_depths)


def cv_trigger(snap: PartitionSnapshot, n: int) -> bool:
    return snap.avg_diam == 0 or snap.level >= 2 * math.log2(n)


def select_cv(candidates, train: Dataset, test: Dataset | None, table: RoutingTable):
    """Index of the candidate frontier with the smallest test risk, and all risks.

    Ties go to the earliest (smallest) partition.
    """
    if test is None:
        raise ConfigurationError("cross-validation selection needs a test set")
    risks = []
    for snap in candidates:
        model = fit_cell_means(snap, train, table.nodes[0], table)
        risks.append(empirical_risk(model, test))
    best = int(np.argmin(risks))          # first minimum
    return best, risks


def _diam_power(snap, squared):
    return snap.avg_diam**2 if squared else snap.avg_diam


def autostop_trigger(snap: PartitionSnapshot, n: int, alpha_n: float, root_diam: float,
                     squared: bool = True) -> bool:
    num = n * _diam_power(snap, squared)
    den = alpha_n * (root_diam**2 if squared else root_diam)
    if num == 0:
        return True
    if den == 0:
        return False
    return snap.level >= math.log2(num / den)


def autostop_objective(snap: PartitionSnapshot, n: int, alpha_n: float, squared=True) -> float:
    return alpha_n / n * snap.size + _diam_power(snap, squared)


def select_autostop(snapshots, params: AlphaParams, root_diam: float, squared: bool = True,
                    alpha_n: float | None = None):
    """Penalised choice between the last two snapshots once the trigger fires.

    Returns ``(index, objectives)``, or ``(None, None)`` when the trigger on
    the last snapshot has not fired. With a single snapshot it is compared
    with itself. ``alpha_n`` overrides the penalty computed from ``params``.
    """
    a = alpha(params) if alpha_n is None else float(alpha_n)
    cur = snapshots[-1]
    if not autostop_trigger(cur, params.n, a, root_diam, squared):
        return None, None
    i = len(snapshots) - 1
    prev_i = max(i - 1, 0)
    objs = [autostop_objective(snapshots[prev_i], params.n, a, squared),
            autostop_objective(cur, params.n, a, squared)]
    if objs[1] < objs[0]:
        return i, objs
    if objs[1] == objs[0] and cur.size < snapshots[prev_i].size:
        return i, objs
    return prev_i, objs


class _Diameters:
    def __init__(self, X, mode):
        self.X, self.mode = X, mode
        self._cache = {}

    def __call__(self, node):
        v = self._cache.get(id(node))
        if v is None:
            v = _mode_diameter(self.X[node.indices], self.mode) if node.count > 1 else 0.0
            self._cache[id(node)] = v
        return v

    def snapshot(self, rnd, nodes):
        avg = avg_from_parts([n.count for n in nodes], [self(n) for n in nodes])
        return PartitionSnapshot(rnd, list(nodes), max(n.level for n in nodes), len(nodes), avg)


@dataclass
class AdaptiveResult:
    model: RegressorModel
    trace: Trace

    def __iter__(self):
        return iter((self.model, self.trace))


def adaptive_rptree(data: Dataset, delta: float = 0.05, option: str = CV, rng=0, *,
                    test: Dataset | None = None, partitioner: str = "rptree",
                    noisy_median_scope: str = "root", diameter_mode: str = EXACT,
                    squared_diam: bool = True, n_repetitions: int | None = None,
                    max_rounds: int = 200, check_halving: bool = True):
    """Fit the adaptive partition regressor; returns ``(model, trace)``.

    Round i replaces each frontier cell A by the leaves of a subtree that
    halves its average data diameter. After every round the chosen stopping
    rule is evaluated; cross-validation needs ``test``.
    """
    if option not in (CV, AUTOSTOP):
        raise ConfigurationError(f"unknown selection option {option!r}")
    if partitioner not in PARTITIONERS:
        raise ConfigurationError(f"unknown partitioner {partitioner!r}")
    if option == CV and test is None:
        raise ConfigurationError("cross-validation selection needs a test set")
    if not 0 < delta < 1:
        raise InvalidInput("delta must lie in (0, 1)")
    X = data.X
    n = len(X)
    if n < 2:
        raise InvalidInput("adaptive_rptree needs at least two samples")
    stream = rng if isinstance(rng, RngStream) else RngStream(int(rng))
    diams = _Diameters(X, diameter_mode)

    root = Node(np.arange(n), 0)
    if partitioner == "dyadic":
        root.box = bounding_box(X)
    frontier = [root]
    trace = Trace()
    trace.snapshots.append(diams.snapshot(0, frontier))
    root_diam = diams(root)
    params = AlphaParams(n, delta)
    chosen = None

    for rnd in range(1, max_rounds + 1):
        new_frontier = []
        for cid, cell in enumerate(frontier):
            target = diams(cell) / 2
            sub = _grow(partitioner, cell, X, target, delta, n, stream.child(rnd, cid),
                        noisy_median_scope, diameter_mode, n_repetitions, diams(cell))
            trace.subtree_depths.append((rnd, cid, sub.depth))
            trace.n_directions += sub.n_directions
            cell.graft(sub.root)
            new_frontier.extend(cell.leaves())
        frontier = new_frontier
        snap = diams.snapshot(rnd, frontier)
        prev = trace.snapshots[-1]
        if check_halving and partitioner == "rptree" and snap.avg_diam > prev.avg_diam / 2 + 1e-12:
            raise AssertionError(
                f"round {rnd}: average diameter {snap.avg_diam} not halved from {prev.avg_diam}")
        trace.snapshots.append(snap)
        stalled = snap.size == prev.size and snap.avg_diam > 0
        if option == CV:
            if cv_trigger(snap, n) or stalled:
                chosen = "cv"
                break
        else:
            j, objs = select_autostop(trace.snapshots, params, root_diam, squared_diam)
            if j is not None:
                trace.selection = {"option": AUTOSTOP, "round": rnd, "chosen": j,
                                   "objectives": objs, "alpha": alpha(params)}
                chosen = j
                break
            if stalled:
                log.warning("partitioner stalled at round %d; stopping", rnd)
                chosen = len(trace.snapshots) - 1
                trace.selection = {"option": AUTOSTOP, "round": rnd, "chosen": chosen,
                                   "objectives": None, "stalled": True}
                break
    else:
        log.warning("max_rounds=%d reached without trigger", max_rounds)

    table = RoutingTable(root, data.D)
    if option == CV:
        j, risks = select_cv(trace.snapshots, data, test, table)
        trace.selection = {"option": CV, "round": trace.snapshots[-1].round, "chosen": j,
                           "risks": risks}
    else:
        j = chosen if chosen is not None else len(trace.snapshots) - 1
    model = fit_cell_means(trace.snapshots[j], data, root, table)
    return AdaptiveResult(model, trace)


def _grow(partitioner, cell: Node, X, target, delta, n, stream, scope, mode, n_reps, root_diam):
    cd = CellData(cell.indices, cell.level)
    cap = default_depth_cap(n, cell.level)
    if partitioner == "rptree":
        R = n_reps if n_reps is not None else repetitions(n, delta)
        return boosted_subtree(X[cell.indices], cell.indices, target, cell.level, stream, R, cap,
                               scope, mode, root_diam=root_diam)
    if partitioner == "kd":
        return kd_partition(cd, X, target, cap)
    sub = dyadic_partition(cd, X, target, cap, box=cell.box)
    return sub
