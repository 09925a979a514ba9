import itertools
import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpregress.data import Dataset
from rpregress.geometry import CellData, InvalidInput, data_diameter, doubling_estimate
from rpregress.regress import CV, adaptive_rptree, empirical_risk
from rpregress.synth import (
    FunctionSpec, GeneratorSpec, NoiseSpec, RegressionProblem, gen_hilbert_curve, gen_regression,
    gen_sparse_star, gen_sphere_manifold, gen_subspace, oracle_excess_risk, random_orthonormal,
)


class ShiftedTruth:
    """Stand-in model predicting f(x) + c."""

    def __init__(self, f, c):
        self.f, self.c = f, np.asarray(c, dtype=float)

    def predict(self, X):
        return self.f(X) + self.c


def test_sparse_star_structure():
    eps = 0.05
    X = gen_sparse_star(10, eps, 500, np.random.default_rng(0))
    nz = X != 0
    assert np.all(nz.sum(axis=1) == 2)
    assert np.all(np.abs(X) <= 1)
    assert np.all(np.any(np.isclose(np.abs(X), eps, rtol=0, atol=0) & nz, axis=1))


def test_sparse_star_diameter_bounds():
    eps = 0.05
    X = gen_sparse_star(6, eps, 400, np.random.default_rng(1))
    brute = max(math.dist(a, b) for a, b in itertools.combinations(X.tolist(), 2))
    d = data_diameter(CellData(np.arange(400)), X).value
    assert d == pytest.approx(brute, rel=1e-12)
    assert 1.9 <= d <= 2 * math.sqrt(1 + eps**2)


def test_sparse_star_rejects_bad_parameters():
    with pytest.raises(InvalidInput):
        gen_sparse_star(1, 0.1, 5)
    with pytest.raises(InvalidInput):
        gen_sparse_star(4, 1.5, 5)


def test_sparse_star_doubling_grows_logarithmically():
    est = {D: doubling_estimate(gen_sparse_star(D, 0.05, 1000, np.random.default_rng(0)), [0.5])[0]
           for D in (8, 32, 128)}
    # one more bit per doubling of D at most; linear growth would add ~D/8 bits
    assert est[32] <= est[8] + math.log2(32 / 8)
    assert est[128] <= est[8] + math.log2(128 / 8)
    assert est[128] < est[8] + 4


def test_subspace_full_dimension_identity_is_cube():
    X = gen_subspace(3, 3, 2000, rotation_seed=None, rng=2)
    assert np.all(np.abs(X) <= 1)
    assert np.allclose(X.mean(axis=0), 0, atol=0.1)
    assert np.allclose(X.min(axis=0), -1, atol=0.02) and np.allclose(X.max(axis=0), 1, atol=0.02)


def test_subspace_lies_on_embedded_plane_and_preserves_distances():
    D, d = 12, 3
    Q = random_orthonormal(D, d, 5)
    Z = np.random.default_rng(3).uniform(-1, 1, size=(200, d))
    X = gen_subspace(D, d, 200, rotation_seed=5, rng=3)
    assert np.allclose(X, Z @ Q.T, rtol=0, atol=1e-12)
    resid = X - (X @ Q) @ Q.T
    assert np.max(np.abs(resid)) <= 1e-10
    for i, j in [(0, 1), (5, 99), (17, 150)]:
        assert np.linalg.norm(X[i] - X[j]) == pytest.approx(np.linalg.norm(Z[i] - Z[j]), rel=1e-10)


def test_subspace_rejects_bad_d():
    with pytest.raises(InvalidInput):
        gen_subspace(3, 4, 10)


def test_sphere_points_are_unit():
    X = gen_sphere_manifold(10, 3, 500, rotation_seed=1, rng=0)
    assert np.allclose(np.linalg.norm(X, axis=1), 1, atol=1e-10)


def test_circle_diameter_and_means():
    n = 3000
    X = gen_sphere_manifold(6, 1, n, rotation_seed=2, rng=4)
    assert data_diameter(CellData(np.arange(n)), X).value == pytest.approx(2, abs=1e-3)
    assert np.all(np.abs(X.mean(axis=0)) <= 3 / math.sqrt(n))


def test_hilbert_curve_in_plane():
    X = gen_hilbert_curve(5, 300, order=4, rotation_seed=None, rng=1)
    assert np.all(X[:, 2:] == 0)
    assert np.all(np.abs(X[:, :2]) <= 1 + 1e-12)


def test_orthonormal_columns():
    Q = random_orthonormal(20, 6, 9)
    assert np.allclose(Q.T @ Q, np.eye(6), atol=1e-12)


@pytest.mark.parametrize("family", ["sparse_star", "subspace", "sphere_manifold", "hilbert_curve"])
def test_generators_are_seed_deterministic(family):
    spec = GeneratorSpec(family, D=7, d=2)
    assert np.array_equal(spec.sample(50, 11), spec.sample(50, 11))
    assert not np.array_equal(spec.sample(50, 11), spec.sample(50, 12))


def test_zero_noise_linear_is_exact():
    X = gen_subspace(5, 2, 100, rng=0)
    f = FunctionSpec.linear_with_lipschitz(5, 1.5, seed=1)
    F = f(X)
    rng_f = float(np.linalg.norm(F.max(axis=0) - F.min(axis=0)))
    data = gen_regression(X, f, NoiseSpec(rng_f), 0)
    assert np.allclose(data.Y, X @ f.w.T, rtol=0, atol=1e-12)
    assert data.noise_floor == 0


def test_constant_function_noise_radius():
    X = np.random.default_rng(0).normal(size=(400, 3))
    f = FunctionSpec("constant", value=[2.0, -1.0])
    data = gen_regression(X, f, NoiseSpec(1.0), 1)
    assert np.all(np.linalg.norm(data.Y - [2.0, -1.0], axis=1) <= 0.5 + 1e-12)
    assert data.noise_floor == pytest.approx(0.25 * 2 / 4)


def test_noise_radius_negative_is_error():
    X = np.linspace(0, 1, 10)[:, None]
    with pytest.raises(InvalidInput):
        gen_regression(X, FunctionSpec("linear", [3.0]), NoiseSpec(1.0), 0)


@pytest.mark.parametrize("kind", ["linear", "sine"])
def test_declared_lipschitz_constant_holds(kind):
    g = np.random.default_rng(6)
    w = g.normal(size=(2, 5))
    f = FunctionSpec(kind, w, c=3.0)
    A, B = g.normal(size=(10_000, 5)), g.normal(size=(10_000, 5))
    ratio = np.linalg.norm(f(A) - f(B), axis=1) / np.linalg.norm(A - B, axis=1)
    assert ratio.max() <= f.lipschitz * (1 + 1e-6)


def test_outputs_within_declared_ball():
    prob = RegressionProblem(GeneratorSpec("subspace", 6, 2), FunctionSpec.linear_with_lipschitz(6, 1.0),
                             NoiseSpec(5.0, "gaussian"))
    data = prob.dataset(2000, 3)
    assert np.all(np.linalg.norm(data.Y - prob.center, axis=1) <= 2.5 + 1e-12)


def test_oracle_risk_of_truth_and_shift():
    f = FunctionSpec.linear_with_lipschitz(4, 2.0, seed=2)
    X = gen_subspace(4, 2, 5000, rng=1)
    assert oracle_excess_risk(ShiftedTruth(f, [0.0]), f, X) == 0.0
    risk, se = oracle_excess_risk(ShiftedTruth(f, [0.3]), f, X, return_se=True)
    assert risk == pytest.approx(0.09, rel=1e-12) and se == pytest.approx(0, abs=1e-12)


def test_risk_decomposition_single_configuration():
    prob = RegressionProblem(GeneratorSpec("subspace", 8, 2, rotation_seed=1),
                             FunctionSpec.linear_with_lipschitz(8, 1.0, seed=3))
    prob.noise = NoiseSpec(prob.f_range + 1.0)
    g = np.random.default_rng(4)
    train, cv_set, test = prob.dataset(400, g), prob.dataset(400, g), prob.dataset(20_000, g)
    model, _ = adaptive_rptree(train, 0.1, CV, 0, test=cv_set)
    emp_terms = np.sum((test.Y - model.predict(test.X)) ** 2, axis=1)
    exc, se_exc = oracle_excess_risk(model, prob.f, prob.points(100_000, g), return_se=True)
    se = math.sqrt(emp_terms.var(ddof=1) / len(emp_terms) + se_exc**2)
    assert abs(empirical_risk(model, test) - (exc + test.noise_floor)) <= 3 * se


@settings(max_examples=30, deadline=None)
@given(st.integers(1, 3), st.floats(0.05, 3.0), st.integers(0, 2**31 - 1))
def test_oracle_risk_nonnegative(k, scale, seed):
    g = np.random.default_rng(seed)
    f = FunctionSpec("sine", g.normal(size=(k, 3)))
    X = g.normal(size=(50, 3))
    other = ShiftedTruth(FunctionSpec("linear", g.normal(size=(k, 3)) * scale), np.zeros(k))
    assert oracle_excess_risk(other, f, X) >= 0


def test_dataset_rejects_mismatch():
    with pytest.raises(InvalidInput):
        Dataset(np.zeros((3, 2)), np.zeros((2, 1)))
