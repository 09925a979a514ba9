import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rpregress.data import Dataset
from rpregress.geometry import CellData, InvalidInput, avg_data_diameter
from rpregress.regress import (
    AUTOSTOP, CV, AlphaParams, ConfigurationError, PartitionSnapshot, RegressorModel, Trace,
    adaptive_rptree, alpha, autostop_objective, decrease_rate, empirical_risk, fit_cell_means,
    select_autostop, select_cv,
)
from rpregress.synth import FunctionSpec, GeneratorSpec, NoiseSpec, RegressionProblem, random_orthonormal
from rpregress.tree import Node, RoutingTable, structure_violations


def ln_log2(x):
    return math.log(x) / math.log(2)


def snap(size, avg, level=0, rnd=0):
    return PartitionSnapshot(rnd, [Node(np.arange(0), level)] * size, level, size, avg)


def linear_problem(family="subspace", D=8, d=2, noise_radius=0.5, lam=1.0, seed=0):
    span = d + 1 if family == "sphere_manifold" else d
    w = random_orthonormal(D, span, seed) @ np.r_[0.6, 0.8, np.zeros(span - 2)]
    prob = RegressionProblem(GeneratorSpec(family, D, d, rotation_seed=seed),
                             FunctionSpec("linear", lam * w))
    prob.noise = NoiseSpec(prob.f_range + 2 * noise_radius)
    return prob


def path_predicates(root, target):
    """Sequence of (direction, threshold, goes_left) from root to ``target``."""
    stack = [(root, [])]
    while stack:
        node, path = stack.pop()
        if node is target:
            return path
        if not node.is_leaf:
            stack.append((node.left, path + [(node.direction, node.threshold, True)]))
            stack.append((node.right, path + [(node.direction, node.threshold, False)]))
    raise AssertionError("node not in tree")


def scan_predict(model, Q):
    """Linear-scan oracle: for each query, the frontier cell whose every split predicate holds."""
    out = np.full((len(Q), model.default_output.shape[0]), np.nan)
    hits = np.zeros(len(Q), dtype=int)
    for node, mean in zip(model.frontier.nodes, model.cell_means):
        ok = np.ones(len(Q), dtype=bool)
        for v, t, left in path_predicates(model.tree, node):
            ok &= (np.einsum("ij,j->i", Q, v) <= t) == left
        out[ok] = model.default_output if mean is None else mean
        hits += ok
    assert np.all(hits == 1)
    return out


# ---------------------------------------------------------------- alpha

def test_alpha_example_value():
    n, delta = 1024, 0.1
    expected = ln_log2(n) ** 2 * ln_log2(ln_log2(n / delta)) + ln_log2(1 / delta)
    assert alpha(AlphaParams(n, delta)) == pytest.approx(expected, rel=1e-12)
    assert alpha(AlphaParams(n, delta)) == pytest.approx(377.0, abs=0.5)


def test_alpha_clamp():
    # log2 log2 (2 / 0.5) = 1 sits on the clamp; 3 / 0.9 falls below it
    assert alpha(AlphaParams(2, 0.5)) == pytest.approx(2.0)
    assert alpha(AlphaParams(3, 0.9)) == pytest.approx(ln_log2(3) ** 2 + ln_log2(1 / 0.9))
    # n = 4, delta = 0.5 is above the clamp: log2 log2 8 = log2 3
    assert alpha(AlphaParams(4, 0.5)) == pytest.approx(4 * ln_log2(3) + 1)


def test_alpha_rejects_small_n():
    with pytest.raises(InvalidInput):
        alpha(AlphaParams(1, 0.1))
    with pytest.raises(InvalidInput):
        AlphaParams(10, 1.0)


@given(st.integers(2, 10**7), st.floats(1e-6, 0.999))
def test_alpha_monotone_in_n(n, delta):
    assert alpha(AlphaParams(n, delta)) <= alpha(AlphaParams(n + 1, delta)) + 1e-9


# ---------------------------------------------------------------- selectors

def test_autostop_zero_diameter_triggers():
    snaps = [snap(1, 1.0), snap(4, 0.0, level=2)]
    j, objs = select_autostop(snaps, AlphaParams(100, 0.1), root_diam=1.0)
    assert j is not None and len(objs) == 2


def test_autostop_example_arithmetic():
    n = 1000
    snaps = [snap(8, 0.5, level=3), snap(32, 0.25, level=5)]
    j, objs = select_autostop(snaps, AlphaParams(n, 0.1), root_diam=10.0, alpha_n=0.01 * n)
    assert objs == pytest.approx([0.33, 0.3825])
    assert j == 0


def test_autostop_tie_goes_to_smaller_partition():
    n = 100
    a = 0.01 * n
    # 0.01 * 4 + 0.16 == 0.01 * 8 + 0.12
    snaps = [snap(4, 0.4, level=2), snap(8, math.sqrt(0.12), level=3)]
    objs = [autostop_objective(s, n, a) for s in snaps]
    assert objs[0] == pytest.approx(objs[1])
    snaps[1].avg_diam = math.sqrt(objs[0] - 0.08)
    j, got = select_autostop(snaps, AlphaParams(n, 0.1), 10.0, alpha_n=a)
    assert got[0] == got[1] and j == 0


def test_autostop_not_triggered():
    snaps = [snap(1, 2.0)]
    assert select_autostop(snaps, AlphaParams(10**6, 0.1), root_diam=2.0) == (None, None)


def test_autostop_round_zero_compares_with_itself():
    j, objs = select_autostop([snap(1, 0.0)], AlphaParams(10, 0.1), 1.0)
    assert j == 0 and objs[0] == objs[1]


def constant_data(n, value, D=3, seed=0):
    X = np.random.default_rng(seed).normal(size=(n, D))
    return Dataset(X, np.full((n, 1), value))


def test_select_cv_single_candidate():
    train = constant_data(20, 1.0)
    root = Node(np.arange(20), 0)
    table = RoutingTable(root, 3)
    j, risks = select_cv([PartitionSnapshot(0, [root], 0, 1, 1.0)], train, constant_data(5, 2.0), table)
    assert j == 0 and risks == [pytest.approx(1.0)]


def test_select_cv_needs_test_set():
    root = Node(np.arange(3), 0)
    with pytest.raises(ConfigurationError):
        select_cv([], constant_data(3, 0.0), None, RoutingTable(root, 3))
    with pytest.raises(ConfigurationError):
        adaptive_rptree(constant_data(3, 0.0), option=CV)
    with pytest.raises(ConfigurationError):
        adaptive_rptree(constant_data(3, 0.0), option="bic")


def test_cv_constant_function_picks_root():
    train, test = constant_data(64, 3.0, seed=1), constant_data(64, 3.0, seed=2)
    model, trace = adaptive_rptree(train, 0.05, CV, 4, test=test)
    assert trace.selection["chosen"] == 0
    assert all(r == 0 for r in trace.selection["risks"])
    assert model.frontier.size == 1


def test_cv_sweet_spot_on_circle():
    prob = linear_problem("sphere_manifold", D=8, d=1, noise_radius=0.5, seed=3)
    inner = 0
    for s in range(20):
        g = np.random.default_rng(s)
        train, test = prob.dataset(256, g), prob.dataset(256, g)
        _, trace = adaptive_rptree(train, 0.05, CV, s, test=test)
        j = trace.selection["chosen"]
        risks = trace.selection["risks"]
        assert risks[j] == min(risks)
        inner += 0 < j < len(trace.snapshots) - 1
    assert inner >= 16


# ---------------------------------------------------------------- adaptive loop

@pytest.mark.parametrize("option", [CV, AUTOSTOP])
def test_two_points_split_into_singletons(option):
    data = Dataset(np.array([[0.0, 0.0], [1.0, 2.0]]), np.array([[1.0], [5.0]]))
    model, trace = adaptive_rptree(data, 0.1, option, 0, test=data)
    s1 = trace.snapshots[1]
    assert s1.avg_diam == 0
    assert sorted(len(n.indices) for n in s1.nodes if n.count) == [1, 1]
    assert len(trace.snapshots) == 2
    if option == CV:
        assert trace.selection["chosen"] == 1
        assert np.allclose(model.predict(data.X), data.Y)


@pytest.mark.parametrize("option", [CV, AUTOSTOP])
def test_identical_inputs_give_global_mean(option):
    X = np.ones((30, 4))
    Y = np.random.default_rng(0).normal(size=(30, 2))
    data = Dataset(X, Y)
    model, trace = adaptive_rptree(data, 0.1, option, 0, test=data)
    assert trace.snapshots[0].avg_diam == 0
    assert np.allclose(model.predict(np.zeros((3, 4))), Y.mean(axis=0))


def test_rejects_single_sample_and_nonfinite():
    with pytest.raises(InvalidInput):
        adaptive_rptree(constant_data(1, 0.0), option=AUTOSTOP)
    with pytest.raises(InvalidInput):
        Dataset(np.array([[np.nan, 0.0]]), np.zeros((1, 1)))


def test_subspace_512_selects_within_levels_and_small_k():
    prob = linear_problem(D=32, d=2, seed=1)
    g = np.random.default_rng(5)
    train, test = prob.dataset(512, g), prob.dataset(512, g)
    model, trace = adaptive_rptree(train, 0.05, CV, 2, test=test)
    assert trace.snapshots[-1].level <= math.ceil(2 * math.log2(512)) + decrease_rate(trace)
    assert 1 <= decrease_rate(trace) <= 8
    assert structure_violations(model.tree, 512, train.X) == []


def test_decrease_rate_independent_of_ambient_dimension():
    ks = {}
    for D in (16, 64):
        prob = linear_problem(D=D, d=2, seed=4)
        g = np.random.default_rng(6)
        train, test = prob.dataset(1024, g), prob.dataset(1024, g)
        ks[D] = decrease_rate(adaptive_rptree(train, 0.05, CV, 1, test=test).trace)
    assert 1 <= ks[64] <= 2 * ks[16]


def test_decrease_rate_examples():
    t = Trace(subtree_depths=[(1, 0, 1), (1, 1, 3), (2, 0, 2)])
    assert decrease_rate(t) == 3
    assert decrease_rate(Trace(subtree_depths=[(1, 0, 0)])) == 0
    with pytest.raises(InvalidInput):
        decrease_rate(Trace())


@st.composite
def small_problems(draw):
    n = draw(st.integers(2, 120))
    D = draw(st.integers(1, 5))
    seed = draw(st.integers(0, 2**31 - 1))
    g = np.random.default_rng(seed)
    X = g.normal(size=(n, D))
    if draw(st.booleans()):
        X = np.round(X, 1)
    Y = g.normal(size=(n, draw(st.integers(1, 2))))
    option = draw(st.sampled_from([CV, AUTOSTOP]))
    return Dataset(X, Y), Dataset(g.normal(size=(n, D)), g.normal(size=Y.shape)), option, seed


@settings(max_examples=40, deadline=None)
@given(small_problems())
def test_adaptive_invariants(args):
    train, test, option, seed = args
    n = len(train)
    model, trace = adaptive_rptree(train, 0.1, option, seed, test=test)
    snaps = trace.snapshots
    for a, b in zip(snaps, snaps[1:]):
        assert b.avg_diam <= a.avg_diam / 2 + 1e-12
        assert b.size >= a.size and b.level >= a.level
    for s in snaps:
        cells = s.cells
        assert sorted(np.concatenate([c.indices for c in cells]).tolist()) == list(range(n))
        assert s.avg_diam == pytest.approx(avg_data_diameter(cells, train.X), rel=1e-12, abs=1e-15)
    assert structure_violations(model.tree, n, train.X) == []
    sel = trace.selection
    if option == CV:
        assert sel["risks"][sel["chosen"]] == min(sel["risks"])
    elif sel.get("objectives"):
        assert sel["objectives"][1 if sel["chosen"] == len(snaps) - 1 else 0] == min(sel["objectives"])
    # training points in singleton cells are fitted exactly
    for node, mean in zip(model.frontier.nodes, model.cell_means):
        if node.count == 1:
            assert np.array_equal(model.predict_one(train.X[node.indices[0]]), train.Y[node.indices[0]])
    # replay
    model2, trace2 = adaptive_rptree(train, 0.1, option, seed, test=test)
    assert [s.size for s in trace2.snapshots] == [s.size for s in snaps]
    assert trace2.subtree_depths == trace.subtree_depths
    assert np.array_equal(model2.predict(test.X), model.predict(test.X))


# ---------------------------------------------------------------- model

def test_fit_cell_means_example():
    X = np.array([[0.0], [1.0], [5.0]])
    Y = np.array([[1.0], [3.0], [10.0]])
    root = Node(np.arange(3), 0)
    left, right, empty = Node(np.array([0, 1]), 1), Node(np.array([2]), 1), None
    root.set_split(np.array([1.0]), 2.0, "median", left, right)
    right.set_split(np.array([1.0]), 7.0, "noisy", Node(np.array([2]), 2),
                    Node(np.array([], dtype=np.intp), 2))
    empty = right.right
    nodes = [left, right.left, empty]
    model = fit_cell_means(PartitionSnapshot(1, nodes, 2, 3, 0.0), Dataset(X, Y), root)
    assert model.predict_one(np.array([0.5]))[0] == 2.0
    assert model.predict_one(np.array([6.0]))[0] == 10.0
    assert model.predict_one(np.array([9.0]))[0] == pytest.approx(14 / 3)   # y0


def test_cell_means_match_streaming_oracle():
    prob = linear_problem(D=4, d=2, seed=2)
    g = np.random.default_rng(3)
    train, test = prob.dataset(50, g), prob.dataset(50, g)
    model, _ = adaptive_rptree(train, 0.1, CV, 0, test=test)
    for node, mean in zip(model.frontier.nodes, model.cell_means):
        if node.count == 0:
            assert mean is None
            continue
        acc = [math.fsum(train.Y[i, k] for i in node.indices) / node.count
               for k in range(train.D_out)]
        assert np.allclose(mean, acc, rtol=1e-12, atol=0)


def test_predict_matches_linear_scan_oracle():
    prob = linear_problem(D=5, d=2, seed=7)
    g = np.random.default_rng(8)
    train, test = prob.dataset(300, g), prob.dataset(300, g)
    model, _ = adaptive_rptree(train, 0.1, CV, 3, test=test)
    Q = g.normal(size=(1000, 5))
    assert np.array_equal(model.predict(Q), scan_predict(model, Q))
    assert all(np.array_equal(model.predict_one(q), y) for q, y in zip(Q[:50], scan_predict(model, Q[:50])))
    for i in range(len(train)):
        y, steps = model.predict_one(train.X[i], return_path=True)
        assert steps <= 6 * math.ceil(math.log2(len(train)))


def test_depth_zero_model_predicts_global_mean():
    data = constant_data(10, 0.0)
    data.Y[:] = np.arange(10)[:, None]
    root = Node(np.arange(10), 0)
    model = fit_cell_means(PartitionSnapshot(0, [root], 0, 1, 1.0), data)
    assert np.all(model.predict(np.random.default_rng(0).normal(size=(7, 3))) == 4.5)


def test_predict_rejects_wrong_dimension():
    data = constant_data(10, 0.0)
    model = fit_cell_means(PartitionSnapshot(0, [Node(np.arange(10), 0)], 0, 1, 1.0), data)
    with pytest.raises(InvalidInput):
        model.predict(np.zeros(4))
    with pytest.raises(InvalidInput):
        model.predict(np.zeros((2, 2)))


def test_empirical_risk_examples():
    data = constant_data(10, 0.0)
    root = Node(np.arange(10), 0)
    model = RegressorModel(root, PartitionSnapshot(0, [root], 0, 1, 0.0), [np.array([2.0])],
                           np.array([2.0]), 3)
    assert empirical_risk(model, Dataset(np.zeros((1, 3)), np.array([[5.0]]))) == 9.0
    assert empirical_risk(model, Dataset(np.ones((4, 3)), np.full((4, 1), 2.0))) == 0.0
    with pytest.raises(InvalidInput):
        empirical_risk(model, Dataset(np.zeros((0, 3)), np.zeros((0, 1))))


def test_empirical_risk_matches_accumulation_oracle():
    prob = linear_problem(D=4, d=2, seed=9)
    g = np.random.default_rng(10)
    train, test = prob.dataset(100, g), prob.dataset(100, g)
    model, _ = adaptive_rptree(train, 0.1, CV, 0, test=test)
    total = 0.0
    terms = []
    for x, y in zip(test.X, test.Y):
        p = model.predict_one(x)
        terms.append(math.fsum((a - b) ** 2 for a, b in zip(y, p)))
    total = math.fsum(terms) / len(terms)
    assert empirical_risk(model, test) == pytest.approx(total, rel=1e-12)
