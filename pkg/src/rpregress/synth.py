"""Synthetic inputs of known intrinsic dimension and Lipschitz targets with
bounded noise, so excess risk can be measured against the true function."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .data import Dataset
from .geometry import InvalidInput, as_points

FAMILIES = ("sparse_star", "subspace", "sphere_manifold", "hilbert_curve")


def _rng(rng):
    return rng if isinstance(rng, np.random.Generator) else np.random.default_rng(rng)


def random_orthonormal(D: int, k: int, seed) -> np.ndarray:
    """D x k matrix with orthonormal columns (QR of a seeded Gaussian matrix)."""
    if seed is None:
        return np.eye(D, k)
    G = np.random.default_rng(seed).normal(size=(D, k))
    Q, R = np.linalg.qr(G)
    return Q * np.sign(np.diag(R))


def gen_sparse_star(D: int, epsilon: float, n: int, rng=None) -> np.ndarray:
    """Points t e_i + s eps e_j with i != j, s = +-1 and t ~ U[-1, 1]."""
    if D < 2:
        raise InvalidInput("sparse star needs D >= 2")
    if not 0 < epsilon < 1:
        raise InvalidInput("epsilon must lie in (0, 1)")
    g = _rng(rng)
    i = g.integers(0, D, size=n)
    j = (i + g.integers(1, D, size=n)) % D
    sign = np.where(g.random(n) < 0.5, -1.0, 1.0)
    t = g.uniform(-1.0, 1.0, size=n)
    X = np.zeros((n, D))
    rows = np.arange(n)
    X[rows, i] = t
    X[rows, j] = sign * epsilon
    return X


def gen_subspace(D: int, d: int, n: int, rotation_seed=0, rng=None) -> np.ndarray:
    """Uniform points of [-1, 1]^d embedded by a seeded orthonormal D x d map."""
    if not 1 <= d <= D:
        raise InvalidInput("need 1 <= d <= D")
    Z = _rng(rng).uniform(-1.0, 1.0, size=(n, d))
    return Z @ random_orthonormal(D, d, rotation_seed).T


def gen_sphere_manifold(D: int, d: int, n: int, rotation_seed=0, rng=None) -> np.ndarray:
    """Uniform points on the unit d-sphere, embedded orthonormally in R^D."""
    if not 1 <= d < D:
        raise InvalidInput("need 1 <= d < D")
    G = _rng(rng).normal(size=(n, d + 1))
    G /= np.linalg.norm(G, axis=1, keepdims=True)
    return G @ random_orthonormal(D, d + 1, rotation_seed).T


def _hilbert_d2xy(order: int, h: np.ndarray):
    x = np.zeros_like(h)
    y = np.zeros_like(h)
    t = h.copy()
    s = 1
    while s < (1 << order):
        rx = 1 & (t // 2)
        ry = 1 & (t ^ rx)
        flip = ry == 0
        swap_x = np.where(flip & (rx == 1), s - 1 - x, x)
        swap_y = np.where(flip & (rx == 1), s - 1 - y, y)
        x, y = np.where(flip, swap_y, swap_x), np.where(flip, swap_x, swap_y)
        x = x + s * rx
        y = y + s * ry
        t //= 4
        s *= 2
    return x, y


def gen_hilbert_curve(D: int, n: int, order: int = 6, rotation_seed=0, rng=None) -> np.ndarray:
    """Points along a planar Hilbert curve of the given order, embedded in R^D."""
    if D < 2:
        raise InvalidInput("hilbert curve needs D >= 2")
    g = _rng(rng)
    cells = 1 << (2 * order)
    u = g.uniform(0, cells - 1, size=n)
    h = np.floor(u).astype(np.int64)
    frac = u - h
    x0, y0 = _hilbert_d2xy(order, h)
    x1, y1 = _hilbert_d2xy(order, np.minimum(h + 1, cells - 1))
    side = (1 << order) - 1
    P = np.c_[x0 + frac * (x1 - x0), y0 + frac * (y1 - y0)] / side * 2.0 - 1.0
    return P @ random_orthonormal(D, 2, rotation_seed).T


@dataclass(frozen=True)
class GeneratorSpec:
    family: str = "subspace"
    D: int = 8
    d: int = 2
    epsilon: float = 0.05
    rotation_seed: int | None = 0
    order: int = 6

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise InvalidInput(f"unknown generator family {self.family!r}")

    def sample(self, n: int, rng=None) -> np.ndarray:
        if self.family == "sparse_star":
            return gen_sparse_star(self.D, self.epsilon, n, rng)
        if self.family == "subspace":
            return gen_subspace(self.D, self.d, n, self.rotation_seed, rng)
        if self.family == "sphere_manifold":
            return gen_sphere_manifold(self.D, self.d, n, self.rotation_seed, rng)
        return gen_hilbert_curve(self.D, n, self.order, self.rotation_seed, rng)


@dataclass
class FunctionSpec:
    """Known regression function: ``linear`` x.w, ``sine`` sin(c x.w)/c, or ``constant``.

    ``w`` may be a vector (scalar output) or a (D', D) matrix.
    """

    kind: str = "linear"
    w: np.ndarray | None = None
    c: float = 4.0
    value: np.ndarray | float = 0.0

    def __post_init__(self):
        if self.kind not in ("linear", "sine", "constant"):
            raise InvalidInput(f"unknown function kind {self.kind!r}")
        if self.kind != "constant":
            if self.w is None:
                raise InvalidInput("linear and sine functions need weights w")
            self.w = np.atleast_2d(np.asarray(self.w, dtype=np.float64))
        self.value = np.atleast_1d(np.asarray(self.value, dtype=np.float64))

    @property
    def lipschitz(self) -> float:
        if self.kind == "constant":
            return 0.0
        return float(np.linalg.norm(self.w, 2))

    @property
    def D_out(self) -> int:
        return len(self.value) if self.kind == "constant" else self.w.shape[0]

    def __call__(self, X) -> np.ndarray:
        X = np.asarray(X, dtype=np.float64)
        if self.kind == "constant":
            return np.tile(self.value, (len(X), 1))
        z = X @ self.w.T
        if self.kind == "linear":
            return z
        return np.sin(self.c * z) / self.c

    @classmethod
    def linear_with_lipschitz(cls, D: int, lam: float, seed=0) -> "FunctionSpec":
        w = np.random.default_rng(seed).normal(size=D)
        return cls("linear", lam * w / np.linalg.norm(w))


@dataclass(frozen=True)
class NoiseSpec:
    """Bounded output noise: all Y lie in a ball of diameter ``y_diameter``."""

    y_diameter: float = 2.0
    kind: str = "uniform"


def _uniform_ball(g, n, k, r):
    u = g.normal(size=(n, k))
    u /= np.linalg.norm(u, axis=1, keepdims=True)
    return u * (r * g.random(n) ** (1.0 / k))[:, None]


@dataclass
class RegressionProblem:
    """Generator + function + noise; draws training, test and evaluation samples."""

    generator: GeneratorSpec
    f: FunctionSpec
    noise: NoiseSpec = field(default_factory=NoiseSpec)

    range_margin: float = 0.02

    def __post_init__(self):
        # fixed output centre/range so every draw shares one noise law
        F = self.f(self.generator.sample(100_000, np.random.default_rng(2**31 - 1)))
        lo, hi = F.min(axis=0), F.max(axis=0)
        self.center = 0.5 * (lo + hi)
        self.f_range = float(np.linalg.norm(hi - lo)) * (1 + self.range_margin)

    def points(self, n, rng=None):
        return self.generator.sample(n, rng)

    def dataset(self, n, rng=None) -> Dataset:
        g = _rng(rng)
        return gen_regression(self.points(n, g), self.f, self.noise, g,
                              center=self.center, f_range=self.f_range)


def gen_regression(points, f_spec: FunctionSpec, noise: NoiseSpec, rng=None, *,
                   center=None, f_range=None) -> Dataset:
    """Y = f(X) + eta with eta bounded so every Y lies in a ball of the stated diameter.

    The noise radius is ``(y_diameter - range(f)) / 2``; the range of f is
    taken from ``points`` unless given.
    """
    X = as_points(points)
    g = _rng(rng)
    F = f_spec(X)
    if f_range is None:
        lo, hi = F.min(axis=0), F.max(axis=0)
        center = 0.5 * (lo + hi)
        f_range = float(np.linalg.norm(hi - lo))
    r = noise.y_diameter / 2 - f_range / 2
    if r < 0:
        raise InvalidInput(
            f"function range exceeds output diameter {noise.y_diameter}; noise radius {r:.3g} < 0")
    k = F.shape[1]
    if noise.kind == "uniform":
        eta = _uniform_ball(g, len(X), k, r)
        floor = r * r * k / (k + 2)
    elif noise.kind == "gaussian":
        eta = g.normal(scale=r / 2, size=F.shape)
        norms = np.linalg.norm(eta, axis=1, keepdims=True)
        eta = np.where(norms > r, eta * r / np.maximum(norms, 1e-300), eta)
        floor = _clipped_gaussian_floor(k, r)
    else:
        raise InvalidInput(f"unknown noise kind {noise.kind!r}")
    Y = F + eta
    dev = Y - center
    norms = np.linalg.norm(dev, axis=1, keepdims=True)
    lim = noise.y_diameter / 2
    Y = np.where(norms > lim, center + dev * lim / np.maximum(norms, 1e-300), Y)
    return Dataset(X, Y, f=f_spec, noise_floor=floor)


def _clipped_gaussian_floor(k, r, m=200_000):
    g = np.random.default_rng(12345)
    eta = g.normal(scale=r / 2, size=(m, k))
    sq = np.sum(eta**2, axis=1)
    return float(np.mean(np.minimum(sq, r * r)))


def oracle_excess_risk(model, f_spec: FunctionSpec, points, return_se: bool = False):
    """Monte-Carlo estimate of E ||f(X) - f_n(X)||^2 over ``points``."""
    X = as_points(points)
    err = np.sum((f_spec(X) - model.predict(X)) ** 2, axis=1)
    mean = float(err.mean())
    if return_se:
        return mean, float(err.std(ddof=1) / math.sqrt(len(err))) if len(err) > 1 else 0.0
    return mean
