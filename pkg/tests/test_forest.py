import itertools
import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from aipwlab.dgp import DgpSpec, oracle_nuisances, sample_covariates
from aipwlab.errors import InvalidInputError, InvalidParameterError
from aipwlab.forest import (
    Forest,
    ForestParams,
    available_backends,
    best_split,
    cv_loss,
    cv_tune,
    default_grid,
    fit_forest,
)
from oracles import brute_force_split

BACKENDS = available_backends()


# -- best_split -----------------------------------------------------------


@pytest.mark.parametrize("backend", BACKENDS)
def test_best_split_worked_example(backend):
    res = best_split([[1.0], [2.0], [3.0], [4.0]], [0.0, 0.0, 1.0, 1.0], backend=backend)
    assert res[0] == 0
    assert res[1] == 2.5
    assert res[2] == pytest.approx(0.25, abs=1e-15)


@pytest.mark.parametrize("backend", BACKENDS)
def test_best_split_constant_response_is_none(backend):
    X = np.arange(10.0).reshape(5, 2)
    assert best_split(X, np.full(5, 3.7), backend=backend) is None


@pytest.mark.parametrize("backend", BACKENDS)
def test_best_split_tie_goes_to_lowest_feature_then_threshold(backend):
    X = np.array([[1.0, 1.0], [2.0, 2.0], [3.0, 3.0], [4.0, 4.0]])
    y = np.array([0.0, 0.0, 1.0, 1.0])
    assert best_split(X, y, backend=backend)[:2] == (0, 2.5)
    assert best_split(X, y, features=[1], backend=backend)[:2] == (1, 2.5)
    # symmetric response: thresholds 1.5 and 5.5 tie
    X = np.arange(1.0, 7.0)[:, None]
    f, thr, _ = best_split(X, np.array([1.0, 0, 0, 0, 0, 1.0]), backend=backend)
    assert (f, thr) == (0, 1.5)


@pytest.mark.parametrize("backend", BACKENDS)
def test_best_split_respects_min_leaf(backend):
    X = np.arange(6.0)[:, None]
    y = np.array([5.0, 0, 0, 0, 0, 0])
    assert best_split(X, y, min_leaf=1, backend=backend)[1] == 0.5
    assert best_split(X, y, min_leaf=2, backend=backend)[1] == 1.5
    assert best_split(X, y, min_leaf=4, backend=backend) is None


@pytest.mark.parametrize("backend", BACKENDS)
def test_best_split_constant_feature_never_chosen(backend):
    rng = np.random.default_rng(0)
    X = np.column_stack([np.ones(30), rng.normal(size=30)])
    y = rng.normal(size=30)
    assert best_split(X, y, backend=backend)[0] == 1
    assert best_split(X, y, features=[0], backend=backend) is None


_small = st.integers(-4, 4).map(float)


@settings(max_examples=1000, deadline=None)
@given(
    st.integers(2, 14).flatmap(
        lambda n: st.tuples(
            arrays(np.float64, (n, 3), elements=_small),
            arrays(np.float64, n, elements=_small),
            st.integers(1, 4),
        )
    )
)
def test_best_split_matches_brute_force(case):
    X, y, min_leaf = case
    expected = brute_force_split(X, y, range(3), min_leaf)
    for backend in BACKENDS:
        got = best_split(X, y, min_leaf=min_leaf, backend=backend)
        if expected is None:
            assert got is None
        else:
            assert got is not None
            assert got[2] == pytest.approx(expected[2], rel=1e-9, abs=1e-12)
            assert (got[0], got[1]) == (expected[0], expected[1])


# -- fitting basics -------------------------------------------------------


@pytest.mark.parametrize("backend", BACKENDS)
def test_constant_response_predicts_constant(backend):
    rng = np.random.default_rng(1)
    X = rng.normal(size=(200, 3))
    f = fit_forest(X, np.full(200, 2.5), ForestParams(num_trees=20, seed=3), backend=backend)
    assert np.all(f.predict(rng.normal(size=(50, 3))) == 2.5)


@pytest.mark.parametrize("backend", BACKENDS)
def test_single_tree_with_huge_min_leaf_predicts_estimation_mean(backend):
    rng = np.random.default_rng(2)
    n = 100
    X, y = rng.normal(size=(n, 2)), rng.normal(size=n)
    params = ForestParams(num_trees=1, min_leaf=n, seed=5)
    f = fit_forest(X, y, params, backend=backend, record_provenance=True)
    _, est = f.provenance[0]
    assert f.feature[0] == -1 and len(f.feature) == 1
    assert f.predict(rng.normal(size=(10, 2))) == pytest.approx(np.full(10, y[est].mean()), abs=1e-12)


@pytest.mark.parametrize("backend", BACKENDS)
def test_step_function_accuracy(backend):
    rng = np.random.default_rng(3)
    X = rng.normal(size=(5000, 2))
    y = (X[:, 0] > 0).astype(float)
    f = fit_forest(X, y, ForestParams(seed=1), backend=backend)
    Xt = rng.normal(size=(10**4, 2))
    mse = np.mean((f.predict(Xt) - (Xt[:, 0] > 0)) ** 2)
    assert mse < 0.05


def test_probability_forest_on_example2_propensity():
    spec = DgpSpec.example2(4)
    oracle = oracle_nuisances(spec)
    rng = np.random.default_rng(4)
    X = sample_covariates(5000, spec.covariates, rng)[:, :2]
    Xt = sample_covariates(10**4, spec.covariates, rng)[:, :2]
    pad = lambda A: np.column_stack([A, np.zeros((len(A), 2))])
    d = (rng.random(5000) < oracle.pi1(pad(X))).astype(float)
    f = fit_forest(X, d, ForestParams(seed=2), task="probability")
    pred = f.predict(Xt)
    assert pred.min() >= 0 and pred.max() <= 1
    assert np.mean(np.abs(pred - oracle.pi1(pad(Xt)))) < 0.08


def test_predictions_within_estimation_range():
    rng = np.random.default_rng(5)
    X, y = rng.normal(size=(300, 3)), rng.normal(size=300)
    f = fit_forest(X, y, ForestParams(num_trees=30, seed=0), record_provenance=True)
    est = np.unique(np.concatenate([e for _, e in f.provenance]))
    pred = f.predict(rng.normal(size=(500, 3)) * 3)
    assert pred.min() >= y[est].min() - 1e-12 and pred.max() <= y[est].max() + 1e-12


def test_prediction_is_mean_over_trees():
    rng = np.random.default_rng(6)
    X, y = rng.normal(size=(200, 2)), rng.normal(size=200)
    f = fit_forest(X, y, ForestParams(num_trees=7, seed=4))
    Xq = rng.normal(size=(20, 2))
    per_tree = np.array([f.value[f.offsets[t] + f.apply(Xq, t)] for t in range(7)])
    np.testing.assert_allclose(f.predict(Xq), per_tree.mean(axis=0), rtol=0, atol=1e-14)


def test_threshold_comparison_goes_left_on_equality():
    X = np.array([[0.0], [0.0], [1.0], [1.0]] * 10)
    y = X[:, 0] * 10
    f = fit_forest(X, y, ForestParams(num_trees=5, min_leaf=1, subsample_fraction=1.0, seed=0))
    root_thr = f.threshold[0]
    assert root_thr == 0.5
    assert f.predict([[0.5]])[0] == 0.0
    assert f.predict([[np.nextafter(0.5, 1)]])[0] == 10.0


# -- honesty and structure ------------------------------------------------


@pytest.mark.parametrize("backend", BACKENDS)
def test_honesty_leaf_values_use_only_estimation_rows(backend):
    rng = np.random.default_rng(7)
    n = 400
    X, y = rng.normal(size=(n, 3)), rng.normal(size=n)
    params = ForestParams(num_trees=12, min_leaf=3, seed=11)
    f = fit_forest(X, y, params, backend=backend, record_provenance=True)
    n_sub = int(0.5 * n)
    for t, (struct, est) in enumerate(f.provenance):
        assert len(struct) == n_sub // 2 and len(struct) + len(est) == n_sub
        assert not set(struct) & set(est)
        leaves = f.apply(X[est], t)
        base = f.offsets[t]
        for leaf in np.unique(leaves):
            rows = est[leaves == leaf]
            assert f.count[base + leaf] == len(rows)
            assert f.value[base + leaf] == pytest.approx(y[rows].mean(), rel=0, abs=1e-12)


def test_every_leaf_reachable_and_empty_leaves_inherit():
    rng = np.random.default_rng(9)
    n = 60
    X, y = rng.normal(size=(n, 2)), rng.normal(size=n)
    f = fit_forest(X, y, ForestParams(num_trees=40, min_leaf=1, seed=1), record_provenance=True)
    assert f.empty_leaves > 0
    seen_empty = 0
    for t in range(f.num_trees):
        root = f.tree(t)

        def walk(node, parent_value, lo, hi):
            nonlocal seen_empty
            if node.is_leaf:
                if node.count == 0:
                    seen_empty += 1
                    assert node.value == parent_value
                return
            thr = node.threshold
            assert lo[node.feature] < thr < hi[node.feature]
            lo2, hi2 = lo.copy(), hi.copy()
            hi2[node.feature] = thr
            lo2[node.feature] = thr
            walk(node.left, node.value, lo, hi2)
            walk(node.right, node.value, lo2, hi)

        walk(root, None, np.full(2, -np.inf), np.full(2, np.inf))
    assert seen_empty == f.empty_leaves


def test_max_depth_limits_tree():
    rng = np.random.default_rng(10)
    X, y = rng.normal(size=(500, 3)), rng.normal(size=500)
    f = fit_forest(X, y, ForestParams(num_trees=5, min_leaf=1, max_depth=2, seed=0))

    def depth(node):
        return 0 if node.is_leaf else 1 + max(depth(node.left), depth(node.right))

    assert max(depth(f.tree(t)) for t in range(5)) <= 2
    stump = fit_forest(X, y, ForestParams(num_trees=3, max_depth=0, seed=0))
    assert np.all(stump.feature == -1)


# -- determinism, backends, invariances -----------------------------------


def test_determinism():
    rng = np.random.default_rng(11)
    X, y = rng.normal(size=(300, 4)), rng.normal(size=300)
    params = ForestParams(num_trees=25, seed=99)
    a = fit_forest(X, y, params).predict(X)
    b = fit_forest(X, y, params).predict(X)
    assert a.tobytes() == b.tobytes()
    c = fit_forest(X, y, ForestParams(num_trees=25, seed=100)).predict(X)
    assert not np.array_equal(a, c)


@pytest.mark.skipif(len(BACKENDS) < 2, reason="compiled backend not built")
@pytest.mark.parametrize("task", ["regression", "probability"])
@pytest.mark.parametrize("p,mtry", [(5, None), (40, 1)])  # presorted and per-node sort paths
def test_backends_bitwise_identical(task, p, mtry):
    rng = np.random.default_rng(12)
    X = rng.normal(size=(400, p))
    X[:, 4] = np.round(X[:, 4])  # ties
    y = (X[:, 0] + rng.normal(size=400) > 0).astype(float) if task == "probability" else rng.normal(size=400)
    params = ForestParams(num_trees=15, min_leaf=2, mtry=mtry, seed=7)
    fc = fit_forest(X, y, params, task, backend="compiled", record_provenance=True)
    fp = fit_forest(X, y, params, task, backend="python", record_provenance=True)
    for k in ("offsets", "feature", "threshold", "left", "right", "value", "count"):
        assert getattr(fc, k).tobytes() == getattr(fp, k).tobytes(), k
    assert fc.empty_leaves == fp.empty_leaves
    for (s1, e1), (s2, e2) in zip(fc.provenance, fp.provenance):
        assert np.array_equal(s1, s2) and np.array_equal(e1, e2)
    Xq = rng.normal(size=(100, p))
    assert fc.predict(Xq, backend="python").tobytes() == fc.predict(Xq, backend="compiled").tobytes()


def test_query_row_permutation():
    rng = np.random.default_rng(13)
    X, y = rng.normal(size=(300, 3)), rng.normal(size=300)
    f = fit_forest(X, y, ForestParams(num_trees=20, seed=1))
    Xq = rng.normal(size=(80, 3))
    perm = rng.permutation(80)
    assert f.predict(Xq[perm]).tobytes() == f.predict(Xq)[perm].tobytes()


@settings(max_examples=25, deadline=None)
@given(st.integers(0, 2**32), st.integers(10, 80))
def test_probability_forest_in_unit_interval(seed, n):
    rng = np.random.default_rng(seed)
    X = rng.normal(size=(n, 2))
    d = (rng.random(n) < 0.3).astype(float)
    f = fit_forest(X, d, ForestParams(num_trees=5, min_leaf=1, seed=seed), task="probability")
    pred = f.predict(rng.normal(size=(50, 2)) * 5)
    assert np.all((pred >= 0) & (pred <= 1))


def test_monotone_capacity_example2_mu0():
    spec = DgpSpec.example2(10)
    mu0 = oracle_nuisances(spec).mu0
    small, large = [], []
    for s in range(10):
        rng = np.random.default_rng(100 + s)
        Xt = sample_covariates(2000, spec.covariates, rng)
        for n, out in ((500, small), (4000, large)):
            X = sample_covariates(n, spec.covariates, rng)
            y = mu0(X) + rng.normal(size=n)
            f = fit_forest(X, y, ForestParams(num_trees=100, seed=s))
            out.append(np.mean((f.predict(Xt) - mu0(Xt)) ** 2))
    assert np.mean(large) < np.mean(small)


# -- validation and serialization -----------------------------------------


def test_errors():
    X = np.zeros((10, 2))
    with pytest.raises(InvalidInputError):
        fit_forest(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(InvalidInputError):
        fit_forest(X, np.zeros(9))
    with pytest.raises(InvalidInputError):
        fit_forest(X, np.full(10, 0.5), task="probability")
    with pytest.raises(InvalidParameterError):
        fit_forest(X, np.zeros(10), task="classification")
    f = fit_forest(X, np.zeros(10), ForestParams(num_trees=2))
    with pytest.raises(InvalidInputError, match="columns"):
        f.predict(np.zeros((3, 3)))
    for bad in ({"mtry": 0}, {"min_leaf": 0}, {"subsample_fraction": 0.0},
                {"subsample_fraction": 1.5}, {"honesty_fraction": 1.0}, {"num_trees": 0}):
        with pytest.raises(InvalidParameterError):
            ForestParams(**bad)
    with pytest.raises(InvalidParameterError):
        ForestParams(mtry=5).resolve_mtry(3)
    with pytest.raises(InvalidParameterError, match="valid keys"):
        ForestParams.from_dict({"trees": 3})


def test_mtry_default_is_ceil_sqrt_p():
    assert ForestParams().resolve_mtry(2) == 2
    assert ForestParams().resolve_mtry(20) == 5
    assert ForestParams().resolve_mtry(200) == 15


def test_json_roundtrip():
    rng = np.random.default_rng(14)
    X, y = rng.normal(size=(100, 3)), rng.normal(size=100)
    f = fit_forest(X, y, ForestParams(num_trees=4, max_depth=3, seed=8))
    doc = json.loads(f.to_json())
    assert doc["format"] == "aipwlab.forest" and doc["version"] == 1
    assert doc["params"]["seed"] == 8
    g = Forest.from_json(f.to_json())
    assert g.predict(X).tobytes() == f.predict(X).tobytes()
    doc["version"] = 99
    with pytest.raises(InvalidInputError):
        Forest.from_dict(doc)


# -- tuning ---------------------------------------------------------------


def test_default_grid():
    grid = default_grid(20)
    assert [(g.mtry, g.min_leaf) for g in grid] == list(itertools.product((5, 7, 20), (5, 20, 50)))
    assert [(g.mtry, g.min_leaf) for g in default_grid(2)] == [(2, 5), (2, 20), (2, 50), (1, 5), (1, 20), (1, 50)]
    assert [(g.mtry, g.min_leaf) for g in default_grid(1)] == [(1, 5), (1, 20), (1, 50)]


def test_cv_tune_singleton_skips_cv(monkeypatch):
    import aipwlab.forest.forest as mod

    def boom(*a, **k):
        raise AssertionError("cv should not run")

    monkeypatch.setattr(mod, "cv_loss", boom)
    p = ForestParams(num_trees=3)
    assert cv_tune(np.zeros((10, 1)), np.zeros(10), "regression", [p]) is p


def test_cv_tune_selects_small_leaves_for_linear_signal():
    rng = np.random.default_rng(15)
    n = 400
    X = rng.normal(size=(n, 1))
    y = X[:, 0].copy()
    grid = [ForestParams(num_trees=30, min_leaf=5, seed=1), ForestParams(num_trees=30, min_leaf=n // 2, seed=1)]
    best = cv_tune(X, y, "regression", grid, k=5, rng=np.random.default_rng(0))
    folds = np.array_split(np.random.default_rng(0).permutation(n), 5)
    losses = [cv_loss(X, y, g, "regression", folds) for g in grid]
    assert losses[0] < losses[1]
    assert best.min_leaf == 5


def test_cv_tune_duplicates_first_wins_and_errors():
    rng = np.random.default_rng(16)
    X, y = rng.normal(size=(50, 2)), rng.normal(size=50)
    a = ForestParams(num_trees=5, seed=1)
    b = ForestParams(num_trees=5, seed=1)
    assert cv_tune(X, y, "regression", [a, b], k=3, rng=np.random.default_rng(1)) is a
    with pytest.raises(InvalidParameterError):
        cv_tune(X, y, "regression", [], k=3)
    with pytest.raises(InvalidParameterError):
        cv_tune(X, y, "regression", [a], k=1)
    with pytest.raises(InvalidInputError):
        cv_tune(X[:2], y[:2], "regression", [a, b], k=3)
