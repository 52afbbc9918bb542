import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from perften.errors import DataError, DimensionError, EmptyDataError
from perften.trees import LGBM_STYLE, XGB_STYLE, BoostConfig, TreeEnsemble, fit_gbdt, predict_gbdt

GROWTHS = ["level_wise", "leaf_wise"]


def four_categories(reps=1):
    X = np.repeat(np.eye(4), reps, axis=0)
    y = np.repeat([10.0, 20.0, 30.0, 40.0], reps)
    return X, y


def check_limits(ens):
    cfg = ens.config
    for tree in ens.trees:
        if cfg.growth == "level_wise":
            assert tree.max_depth <= cfg.max_depth
        else:
            assert tree.n_leaves <= cfg.max_leaves


def test_defaults():
    cfg = BoostConfig()
    assert (cfg.learning_rate, cfg.n_trees, cfg.max_depth, cfg.max_leaves) == (0.1, 100, 10, 100)
    assert cfg.l2_leaf_penalty == 1.0 and cfg.min_samples_leaf == 1
    assert XGB_STYLE.growth == "level_wise" and LGBM_STYLE.growth == "leaf_wise"


@pytest.mark.parametrize("growth", GROWTHS)
def test_constant_target(growth):
    X = np.random.default_rng(0).random((20, 3))
    ens = fit_gbdt(X, np.full(20, 3.25), BoostConfig(growth=growth, n_trees=10))
    np.testing.assert_array_equal(predict_gbdt(ens, X), 3.25)
    assert all(t.n_leaves == 1 for t in ens.trees)


@pytest.mark.parametrize("growth", GROWTHS)
def test_vanishing_learning_rate_gives_mean(growth):
    rng = np.random.default_rng(1)
    X, y = rng.random((30, 4)), rng.random(30)
    ens = fit_gbdt(X, y, BoostConfig(growth=growth, learning_rate=1e-300, n_trees=5))
    np.testing.assert_array_equal(predict_gbdt(ens, X), np.mean(y))


@pytest.mark.parametrize("growth", GROWTHS)
def test_four_category_convergence(growth):
    X, y = four_categories()
    ens = fit_gbdt(X, y, BoostConfig(growth=growth, l2_leaf_penalty=0.0))
    pred = predict_gbdt(ens, X)
    assert np.sqrt(np.mean((pred - y) ** 2)) < 0.05
    assert np.all(np.abs(pred - y) < 0.05)
    # each isolated category's residual decays geometrically by (1 - lr) per round
    assert np.max(np.abs(pred - y)) <= 30 * 0.9 ** 100 + 1e-9
    check_limits(ens)


def test_empty_ensemble_predicts_base():
    X, y = four_categories()
    ens = fit_gbdt(X, y, BoostConfig(n_trees=0))
    np.testing.assert_array_equal(predict_gbdt(ens, X), 25.0)


@pytest.mark.parametrize("growth", GROWTHS)
def test_single_tree_exact_fit_one_hot(growth):
    # every split on a one-hot column peels off one category, so k categories need depth k - 1
    X, y = four_categories(reps=3)
    ens = fit_gbdt(X, y, BoostConfig(growth=growth, n_trees=1, learning_rate=1.0, l2_leaf_penalty=0.0, max_depth=3))
    np.testing.assert_allclose(predict_gbdt(ens, X), y, atol=1e-12)


def test_single_tree_exact_fit_log_depth():
    # categories coded on one ordered feature are separable at depth ceil(log2(k))
    X = np.repeat(np.arange(8.0), 2)[:, None]
    y = np.repeat(10.0 * np.arange(1, 9), 2)
    ens = fit_gbdt(X, y, BoostConfig(n_trees=1, learning_rate=1.0, l2_leaf_penalty=0.0, max_depth=3))
    np.testing.assert_allclose(predict_gbdt(ens, X), y, atol=1e-12)


def test_leaf_value_uses_penalty():
    # one split on x separates two groups; leaf = sum(resid) / (n + lambda)
    X = np.array([[0.0], [0.0], [1.0], [1.0]])
    y = np.array([0.0, 0.0, 4.0, 4.0])
    ens = fit_gbdt(X, y, BoostConfig(n_trees=1, learning_rate=1.0, l2_leaf_penalty=1.0))
    tree = ens.trees[0]
    assert tree.threshold[0] == 0.5
    np.testing.assert_allclose(predict_gbdt(ens, X), [2 - 4 / 3, 2 - 4 / 3, 2 + 4 / 3, 2 + 4 / 3])


def test_tie_break_lowest_feature():
    X = np.array([[0.0, 0.0], [1.0, 1.0]])  # both features give the same split
    ens = fit_gbdt(X, np.array([0.0, 1.0]), BoostConfig(n_trees=1))
    assert ens.trees[0].feature[0] == 0


@pytest.mark.parametrize("growth", GROWTHS)
@settings(max_examples=25, deadline=None)
@given(seed=st.integers(0, 2**31 - 1), n=st.integers(2, 40), p=st.integers(1, 5))
def test_training_error_non_increasing_without_penalty(growth, seed, n, p):
    rng = np.random.default_rng(seed)
    X = rng.integers(0, 4, (n, p)).astype(float)
    y = rng.normal(size=n)
    sse = []
    fit_gbdt(X, y, BoostConfig(growth=growth, n_trees=15, l2_leaf_penalty=0.0, max_depth=3, max_leaves=6),
             callback=lambda k, pred: sse.append(float(np.sum((y - pred) ** 2))))
    assert all(b <= a * (1 + 1e-12) + 1e-12 for a, b in zip(sse, sse[1:]))


@pytest.mark.parametrize("max_depth,max_leaves", [(1, 2), (2, 3), (3, 5), (10, 100)])
def test_structural_limits(max_depth, max_leaves):
    rng = np.random.default_rng(4)
    X, y = rng.random((200, 6)), rng.normal(size=200)
    for growth in GROWTHS:
        ens = fit_gbdt(X, y, BoostConfig(growth=growth, n_trees=5, max_depth=max_depth, max_leaves=max_leaves))
        check_limits(ens)
        if growth == "level_wise":
            assert max(t.max_depth for t in ens.trees) == max_depth
        else:
            assert max(t.n_leaves for t in ens.trees) == max_leaves


def test_min_samples_leaf():
    rng = np.random.default_rng(8)
    X, y = rng.random((50, 2)), rng.normal(size=50)
    ens = fit_gbdt(X, y, BoostConfig(n_trees=3, min_samples_leaf=10, max_depth=4))
    for tree in ens.trees:
        leaves = tree.predict(X)
        _, counts = np.unique(leaves, return_counts=True)
        assert counts.min() >= 10


@pytest.mark.parametrize("growth", GROWTHS)
def test_deterministic_and_serializable(growth):
    rng = np.random.default_rng(2)
    X, y = rng.random((60, 5)), rng.normal(size=60)
    cfg = BoostConfig(growth=growth, n_trees=20)
    a, b = fit_gbdt(X, y, cfg, seed=3), fit_gbdt(X, y, cfg, seed=3)
    assert a.dumps() == b.dumps()
    back = TreeEnsemble.loads(a.dumps())
    np.testing.assert_array_equal(predict_gbdt(back, X), predict_gbdt(a, X))


def test_row_permutation():
    rng = np.random.default_rng(6)
    X, y = rng.random((40, 3)), rng.normal(size=40)
    ens = fit_gbdt(X, y, BoostConfig(n_trees=10))
    perm = rng.permutation(40)
    np.testing.assert_array_equal(predict_gbdt(ens, X[perm]), predict_gbdt(ens, X)[perm])


def test_errors():
    with pytest.raises(EmptyDataError):
        fit_gbdt(np.zeros((0, 2)), np.zeros(0))
    with pytest.raises(DataError):
        fit_gbdt(np.zeros((2, 1)), [1.0, np.nan])
    with pytest.raises(DimensionError):
        fit_gbdt(np.zeros((3, 1)), [1.0, 2.0])
    ens = fit_gbdt(np.zeros((2, 3)), [1.0, 2.0], BoostConfig(n_trees=1))
    with pytest.raises(DimensionError):
        predict_gbdt(ens, np.zeros((2, 4)))
    with pytest.raises(ValueError):
        BoostConfig(growth="depth_first")
