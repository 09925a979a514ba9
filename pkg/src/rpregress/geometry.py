"""Point-set primitives: data diameters, average data diameter and a greedy
doubling-dimension estimate used as a test oracle."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

EXACT = "exact"
APPROX2 = "approx2"

_BLOCK = 512


class InvalidInput(ValueError):
    """Raised when an operation receives malformed or out-of-range input."""


@dataclass(frozen=True)
class CellData:
    """Sample indices falling in one cell, plus the cell's level in the tree."""

    indices: np.ndarray
    depth: int = 0

    def __post_init__(self):
        idx = np.asarray(self.indices, dtype=np.intp).reshape(-1)
        object.__setattr__(self, "indices", idx)
        if self.depth < 0:
            raise InvalidInput("cell depth must be >= 0")

    def __len__(self):
        return len(self.indices)


@dataclass(frozen=True)
class DiameterSummary:
    value: float
    method: str = EXACT

    def __float__(self):
        return float(self.value)


def as_points(data) -> np.ndarray:
    """Coerce to a finite float64 array of shape (n, D)."""
    X = np.asarray(data, dtype=np.float64)
    if X.ndim == 1:
        X = X.reshape(-1, 1)
    if X.ndim != 2:
        raise InvalidInput(f"expected a 2-d point array, got shape {X.shape}")
    if not np.all(np.isfinite(X)):
        raise InvalidInput("points must have finite coordinates")
    return X


def project(X, v) -> np.ndarray:
    # elementwise product + row sum gives identical bits for one row or many
    return np.multiply(X, v).sum(axis=-1)


def _cell_points(cell, X):
    idx = cell.indices if isinstance(cell, CellData) else np.asarray(cell, dtype=np.intp)
    if idx.size and (idx.min() < 0 or idx.max() >= len(X)):
        raise InvalidInput("cell index out of range")
    return X[idx]


def max_pairwise_distance(P: np.ndarray) -> float:
    """Exact diameter of a point array, blockwise so memory stays O(block * m)."""
    m = len(P)
    if m < 2:
        return 0.0
    P = P - P.mean(axis=0)
    sq = np.einsum("ij,ij->i", P, P)
    best, best_pair = -1.0, (0, 0)
    for lo in range(0, m, _BLOCK):
        hi = min(lo + _BLOCK, m)
        d2 = sq[lo:hi, None] + sq[None, lo:] - 2.0 * (P[lo:hi] @ P[lo:].T)
        k = int(np.argmax(d2))
        r, c = divmod(k, d2.shape[1])
        if d2[r, c] > best:
            best, best_pair = d2[r, c], (lo + r, lo + c)
    # recompute the winning pair directly to shed the norm-expansion rounding
    i, j = best_pair
    return float(np.sqrt(np.sum((P[i] - P[j]) ** 2)))


def double_sweep(P: np.ndarray) -> tuple[float, float]:
    """Lower and upper diameter bounds from two farthest-point sweeps.

    Starts at the first point. The lower bound is the second sweep's
    farthest distance; the upper bound is twice the smaller sweep radius.
    """
    if len(P) < 2:
        return 0.0, 0.0
    da = np.sqrt(np.sum((P - P[0]) ** 2, axis=1))
    b = int(np.argmax(da))
    db = np.sqrt(np.sum((P - P[b]) ** 2, axis=1))
    lb = float(db.max())
    return lb, min(2.0 * float(da[b]), 2.0 * lb)


def data_diameter(cell, data) -> DiameterSummary:
    """Maximum Euclidean distance between sample points in ``cell`` (0 if fewer than two)."""
    X = as_points(data)
    return DiameterSummary(max_pairwise_distance(_cell_points(cell, X)), EXACT)


def approx_diameter(cell, data) -> DiameterSummary:
    X = as_points(data)
    P = _cell_points(cell, X)
    return DiameterSummary(double_sweep(P)[0], APPROX2)


def diameter(cell, data, mode: str = EXACT) -> float:
    if mode == EXACT:
        return data_diameter(cell, data).value
    if mode == APPROX2:
        return approx_diameter(cell, data).value
    raise InvalidInput(f"unknown diameter mode {mode!r}")


def avg_from_parts(counts, diams) -> float:
    """sqrt of the count-weighted mean of squared diameters."""
    counts = np.asarray(counts, dtype=np.float64)
    diams = np.asarray(diams, dtype=np.float64)
    total = counts.sum()
    if total <= 0:
        return 0.0
    return float(np.sqrt(np.sum(counts * diams**2) / total))


def avg_data_diameter(cells, data, mode: str = EXACT) -> float:
    """Average data diameter of a collection of disjoint cells.

    Each cell is weighted by its empirical mass, so empty cells drop out.
    """
    X = as_points(data)
    seen = set()
    counts, diams = [], []
    for cell in cells:
        idx = cell.indices if isinstance(cell, CellData) else np.asarray(cell, dtype=np.intp)
        s = set(idx.tolist())
        if len(s) != len(idx) or seen & s:
            raise InvalidInput("cells overlap in their index sets")
        seen |= s
        counts.append(len(idx))
        diams.append(diameter(idx, X, mode) if len(idx) > 1 else 0.0)
    return avg_from_parts(counts, diams)


def _greedy_cover(P, r, order):
    """Centers of a greedy r-cover of P, visiting points in ``order``."""
    uncovered = np.ones(len(P), dtype=bool)
    centers = []
    for i in order:
        if not uncovered[i]:
            continue
        centers.append(i)
        uncovered &= np.sum((P - P[i]) ** 2, axis=1) > r * r
    return centers


def _within(P, r):
    """Boolean matrix of pairs at distance <= r."""
    near = np.empty((len(P), len(P)), dtype=bool)
    step = max(1, 2**22 // max(1, len(P) * P.shape[1]))
    for i in range(0, len(P), step):
        near[i:i + step] = np.sum((P[i:i + step, None, :] - P[None, :, :]) ** 2, axis=2) <= r * r
    return near


def _max_coverage_cover(near, order):
    """Set-cover greedy on a precomputed ``near`` matrix: repeatedly take the
    centre covering most uncovered points, ties to the earliest in ``order``."""
    near = near[np.ix_(order, order)]
    uncovered = np.ones(len(near), dtype=bool)
    centers = []
    while uncovered.any():
        gain = near[:, uncovered].sum(axis=1)
        c = int(np.argmax(gain))
        centers.append(c)
        uncovered &= ~near[c]
    # drop centres whose points are all covered by the others
    for c in list(reversed(centers)):
        others = [k for k in centers if k != c]
        if others and near[others].any(axis=0).all():
            centers = others
    return [int(order[c]) for c in centers]


def doubling_estimate(data, scales, seed: int = 0, trials: int = 8) -> np.ndarray:
    """Greedy upper-bound estimate of the local doubling dimension per scale.

    For each radius ``r`` the points are covered by r-balls (greedy, in a
    seeded shuffled order); every ball's members are then covered by
    r/2-balls with the max-coverage greedy, keeping the smallest cover over
    ``trials`` shuffled tie-break orders. The estimate is log2 of the
    largest child cover.
    """
    X = as_points(data)
    if len(X) == 0:
        raise InvalidInput("doubling_estimate needs at least one point")
    scales = [float(r) for r in scales]
    if any(r <= 0 for r in scales):
        raise InvalidInput("scales must be positive")
    rng = np.random.default_rng(seed)
    out = []
    for r in scales:
        order = rng.permutation(len(X))
        worst = 1
        for c in _greedy_cover(X, r, order):
            members = np.flatnonzero(np.sum((X - X[c]) ** 2, axis=1) <= r * r)
            near = _within(X[members], r / 2)
            best = min(len(_max_coverage_cover(near, rng.permutation(len(members))))
                       for _ in range(max(1, trials)))
            worst = max(worst, best)
        out.append(np.log2(worst))
    return np.asarray(out)
