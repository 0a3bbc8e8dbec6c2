import itertools

import numpy as np
import pytest

from loskit.errors import ConfigInvalid, EmptyInput, LengthMismatch, SchemaMismatch
from loskit.learn import (
    ForestConfig,
    GbdtConfig,
    HyperGrid,
    TreeConfig,
    apply_target_encoder,
    fit_gbdt,
    fit_random_forest,
    fit_regression_tree,
    fit_target_encoder,
    grid_search,
    predict,
)


class TestTargetEncoder:
    def test_single_category_infer_is_global_mean(self):
        enc = fit_target_encoder(["a"] * 6, [1, 2, 3, 4, 5, 6], prior=5.0, n_folds=3)
        out = apply_target_encoder(enc, ["a"] * 6, "infer")
        np.testing.assert_allclose(out, 3.5)

    def test_huge_prior_collapses_to_mean(self):
        cats = ["a", "b", "a", "b", "c"]
        y = [1.0, 10.0, 2.0, 11.0, 5.0]
        enc = fit_target_encoder(cats, y, prior=1e12, n_folds=2)
        out = apply_target_encoder(enc, cats, "infer")
        np.testing.assert_allclose(out, np.mean(y), atol=1e-6)

    def test_unseen_category_gets_mean(self):
        enc = fit_target_encoder(["a", "b"], [2.0, 4.0], prior=1.0, n_folds=2)
        out = apply_target_encoder(enc, ["zzz"], "infer")
        np.testing.assert_allclose(out, 3.0)

    def test_hand_worked_fold_arithmetic(self):
        # two categories, two folds; verify the out-of-fold formula by hand
        cats = ["a", "a", "a", "b", "b", "b"]
        y = np.array([1.0, 2.0, 9.0, 10.0, 20.0, 30.0])
        prior, folds = 2.0, 2
        enc = fit_target_encoder(cats, y, prior=prior, n_folds=folds, seed=123)
        got = apply_target_encoder(enc, cats, "train")
        y_mean = y.mean()
        for i, (c, f) in enumerate(zip(cats, enc.folds)):
            sum_oof = sum(
                y[j] for j in range(len(cats)) if cats[j] == c and enc.folds[j] != f
            )
            n_oof = sum(
                1 for j in range(len(cats)) if cats[j] == c and enc.folds[j] != f
            )
            expected = (sum_oof + prior * y_mean) / (n_oof + prior)
            assert got[i] == pytest.approx(expected, abs=1e-12), f"row {i}"

    def test_out_of_fold_never_uses_own_fold(self):
        # leakage bound: recompute each row's encoding excluding its fold
        rng = np.random.default_rng(0)
        n = 400
        cats = rng.integers(0, 12, n).tolist()
        y = rng.normal(5, 2, n)
        enc = fit_target_encoder(cats, y, prior=5.0, n_folds=5, seed=7)
        got = apply_target_encoder(enc, cats, "train")
        y_mean = y.mean()
        cats_arr = np.asarray(cats)
        for i in range(n):
            oof = (cats_arr == cats[i]) & (enc.folds != enc.folds[i])
            expected = (y[oof].sum() + 5.0 * y_mean) / (oof.sum() + 5.0)
            assert got[i] == pytest.approx(expected, rel=1e-12)

    def test_fold_assignment_depends_only_on_seed_and_ordinal(self):
        enc1 = fit_target_encoder(["a"] * 10, np.arange(10.0), seed=3)
        enc2 = fit_target_encoder(["b"] * 10, np.arange(10.0) * 2, seed=3)
        np.testing.assert_array_equal(enc1.folds, enc2.folds)

    def test_errors(self):
        with pytest.raises(LengthMismatch):
            fit_target_encoder(["a"], [1.0, 2.0])
        with pytest.raises(ConfigInvalid):
            fit_target_encoder(["a", "b"], [1.0, 2.0], n_folds=1)
        enc = fit_target_encoder(["a", "b"], [1.0, 2.0])
        with pytest.raises(LengthMismatch):
            apply_target_encoder(enc, ["a"], "train")


def exhaustive_best_split(X, y, min_leaf=1):
    """Oracle: enumerate every (feature, midpoint) split, rank by SSE; splits
    within the tie tolerance resolve to (lowest feature, lowest threshold)."""
    n, p = X.shape
    sse_parent = float(((y - y.mean()) ** 2).sum())
    tie_eps = 1e-9 * max(1.0, sse_parent)
    candidates = []
    for j in range(p):
        values = sorted(set(X[:, j]))
        for lo, hi in zip(values, values[1:]):
            thr = (lo + hi) / 2
            left = y[X[:, j] <= thr]
            right = y[X[:, j] > thr]
            if len(left) < min_leaf or len(right) < min_leaf:
                continue
            sse = ((left - left.mean()) ** 2).sum() + ((right - right.mean()) ** 2).sum()
            candidates.append((float(sse), j, thr))
    if not candidates:
        return None
    sse_min = min(c[0] for c in candidates)
    if sse_parent - sse_min <= tie_eps:  # no real gain anywhere
        return None
    tied = [(j, thr) for sse, j, thr in candidates if sse <= sse_min + tie_eps]
    return min(tied)


class TestRegressionTree:
    def test_constant_target_single_leaf(self):
        X = np.arange(12.0).reshape(-1, 1)
        tree = fit_regression_tree(X, np.full(12, 3.25), TreeConfig(max_depth=5, min_leaf=1))
        assert tree.n_nodes == 1
        np.testing.assert_allclose(predict(tree, X), 3.25)

    def test_step_function_depth_one(self):
        X = np.linspace(0, 1, 10).reshape(-1, 1)
        y = (X[:, 0] > 0.5).astype(float)
        tree = fit_regression_tree(X, y, TreeConfig(max_depth=1, min_leaf=1))
        oracle = exhaustive_best_split(X, y)
        assert tree.feature[0] == oracle[0]
        assert tree.threshold[0] == pytest.approx(oracle[1], abs=1e-12)
        assert np.mean((predict(tree, X) - y) ** 2) < 1e-12

    def test_min_leaf_equals_n_gives_single_leaf(self):
        X = np.arange(10.0).reshape(-1, 1)
        y = np.arange(10.0)
        tree = fit_regression_tree(X, y, TreeConfig(max_depth=4, min_leaf=10))
        assert tree.n_nodes == 1
        np.testing.assert_allclose(predict(tree, X), y.mean())

    def test_root_split_matches_exhaustive_oracle(self):
        rng = np.random.default_rng(99)
        for trial in range(120):
            n = int(rng.integers(4, 11))
            p = int(rng.integers(1, 4))
            X = rng.normal(0, 1, (n, p))
            y = rng.normal(0, 1, n)
            tree = fit_regression_tree(X, y, TreeConfig(max_depth=1, min_leaf=1))
            oracle = exhaustive_best_split(X, y)
            if oracle is None:
                assert tree.n_nodes == 1, f"trial {trial}"
                continue
            assert tree.feature[0] == oracle[0], f"trial {trial}"
            assert tree.threshold[0] == pytest.approx(oracle[1], abs=1e-12), f"trial {trial}"

    def test_leaf_values_are_leaf_means(self):
        rng = np.random.default_rng(1)
        X = rng.normal(0, 1, (100, 3))
        y = rng.normal(0, 1, 100)
        tree = fit_regression_tree(X, y, TreeConfig(max_depth=3, min_leaf=5))
        pred = predict(tree, X)
        for leaf_value in np.unique(pred):
            mask = pred == leaf_value
            assert leaf_value == pytest.approx(y[mask].mean(), abs=1e-9)

    def test_empty_input(self):
        with pytest.raises(EmptyInput):
            fit_regression_tree(np.empty((0, 2)), [])


class TestRandomForest:
    def test_degenerate_config_equals_single_tree(self):
        rng = np.random.default_rng(2)
        X = rng.normal(0, 1, (60, 3))
        y = rng.normal(0, 1, 60)
        forest = fit_random_forest(
            X, y, ForestConfig(n_trees=1, bootstrap=False, mtry=3, max_depth=4, min_leaf=2)
        )
        tree = fit_regression_tree(X, y, TreeConfig(max_depth=4, min_leaf=2))
        np.testing.assert_allclose(predict(forest, X), predict(tree, X))

    def test_same_seed_same_predictions(self):
        rng = np.random.default_rng(3)
        X = rng.normal(0, 1, (80, 4))
        y = rng.normal(0, 1, 80)
        cfg = ForestConfig(n_trees=12, seed=42)
        np.testing.assert_array_equal(
            predict(fit_random_forest(X, y, cfg), X),
            predict(fit_random_forest(X, y, cfg), X),
        )

    def test_prediction_is_mean_of_member_trees(self):
        rng = np.random.default_rng(4)
        X = rng.normal(0, 1, (50, 3))
        y = rng.normal(0, 1, 50)
        forest = fit_random_forest(X, y, ForestConfig(n_trees=7, seed=1))
        member = np.stack([predict(t, X) for t in forest.trees])
        np.testing.assert_allclose(predict(forest, X), member.mean(axis=0), atol=1e-12)


class TestGbdt:
    def test_zero_rounds_predicts_mean(self):
        rng = np.random.default_rng(5)
        X = rng.normal(0, 1, (30, 2))
        y = rng.normal(3, 1, 30)
        model = fit_gbdt(X, y, GbdtConfig(n_rounds=0))
        np.testing.assert_allclose(predict(model, X), y.mean())

    def test_training_mse_non_increasing(self):
        for seed in range(3):
            rng = np.random.default_rng(seed)
            X = rng.normal(0, 1, (200, 4))
            y = X[:, 0] * 2 + np.sin(X[:, 1]) + rng.normal(0, 0.3, 200)
            model = fit_gbdt(X, y, GbdtConfig(n_rounds=40, learning_rate=0.2, seed=seed))
            mse = np.asarray(model.train_mse)
            assert np.all(np.diff(mse) <= 1e-12)

    def test_interpolation_on_distinct_rows(self):
        rng = np.random.default_rng(8)
        X = rng.normal(0, 1, (20, 2))
        y = rng.normal(0, 1, 20)
        model = fit_gbdt(
            X, y, GbdtConfig(n_rounds=50, learning_rate=1.0, max_depth=10, min_leaf=1)
        )
        assert np.mean((predict(model, X) - y) ** 2) < 1e-6

    def test_boosting_telescope(self):
        rng = np.random.default_rng(9)
        X = rng.normal(0, 1, (100, 3))
        y = rng.normal(0, 1, 100)
        model = fit_gbdt(X, y, GbdtConfig(n_rounds=15, learning_rate=0.1))
        manual = np.full(100, model.base)
        for tree in model.trees:
            manual += model.config.learning_rate * predict(tree, X)
        np.testing.assert_allclose(predict(model, X), manual, atol=1e-9)

    def test_categorical_columns_are_target_encoded(self):
        rng = np.random.default_rng(10)
        n = 300
        cat = rng.integers(0, 3, n)
        effect = np.array([2.0, 5.0, 11.0])
        y = effect[cat] + rng.normal(0, 0.2, n)
        X = np.column_stack([cat.astype(float), rng.normal(0, 1, n)])
        model = fit_gbdt(
            X, y, GbdtConfig(n_rounds=60, learning_rate=0.2), categorical_columns=[0]
        )
        pred = predict(model, X)
        assert np.mean(np.abs(pred - y)) < 0.5
        # unseen category id at predict time must not crash and falls back to y mean
        X_unseen = np.array([[99.0, 0.0]])
        assert np.isfinite(predict(model, X_unseen)[0])

    def test_config_validation(self):
        with pytest.raises(ConfigInvalid):
            GbdtConfig(learning_rate=0.0)
        with pytest.raises(ConfigInvalid):
            GbdtConfig(learning_rate=1.5)
        with pytest.raises(ConfigInvalid):
            GbdtConfig(subsample=0.0)


class TestPredict:
    def test_empty_input(self):
        X = np.arange(20.0).reshape(-1, 2)
        model = fit_gbdt(X, np.arange(10.0), GbdtConfig(n_rounds=3))
        assert predict(model, np.empty((0, 2))).shape == (0,)

    def test_schema_mismatch(self):
        X = np.arange(20.0).reshape(-1, 2)
        model = fit_gbdt(X, np.arange(10.0), GbdtConfig(n_rounds=3))
        with pytest.raises(SchemaMismatch):
            predict(model, np.zeros((4, 3)))

    def test_row_order_invariance(self):
        rng = np.random.default_rng(11)
        X = rng.normal(0, 1, (50, 3))
        y = rng.normal(0, 1, 50)
        model = fit_random_forest(X, y, ForestConfig(n_trees=5, seed=0))
        perm = rng.permutation(50)
        np.testing.assert_allclose(predict(model, X[perm])[np.argsort(perm)], predict(model, X))


class TestGridSearch:
    def _data(self):
        rng = np.random.default_rng(12)
        X = rng.normal(0, 1, (300, 4))
        y = 3 * X[:, 0] + X[:, 1] ** 2 + rng.normal(0, 0.5, 300)
        return (X[:200], y[:200]), (X[200:], y[200:])

    def test_single_point_grid(self):
        train, val = self._data()
        grid = HyperGrid({"n_rounds": (20,), "max_depth": (3,)})
        best, board = grid_search("gbdt", grid, train, val)
        assert best.n_rounds == 20 and best.max_depth == 3
        assert len(board) == 1

    def test_leaderboard_length_equals_grid_cardinality(self):
        train, val = self._data()
        grid = HyperGrid({"n_rounds": (5, 10), "max_depth": (2, 3, 4)})
        _, board = grid_search("gbdt", grid, train, val)
        assert len(board) == len(grid) == 6
        combos = [tuple(r.params.items()) for r in board]
        assert combos == [
            tuple({"n_rounds": a, "max_depth": b}.items())
            for a, b in itertools.product((5, 10), (2, 3, 4))
        ]

    def test_degenerate_config_loses(self):
        train, val = self._data()
        grid = HyperGrid({"n_rounds": (30,), "max_depth": (4,), "min_leaf": (5, 200)})
        best, _ = grid_search("gbdt", grid, train, val, seed=1)
        assert best.min_leaf == 5

    def test_fit_errors_recorded_not_raised(self):
        train, val = self._data()
        grid = HyperGrid({"n_rounds": (10,), "learning_rate": (0.1, 5.0)})
        best, board = grid_search("gbdt", grid, train, val)
        assert best.learning_rate == 0.1
        failed = [r for r in board if r.error]
        assert len(failed) == 1 and "ConfigInvalid" in failed[0].error

    def test_metric_validation(self):
        train, val = self._data()
        with pytest.raises(ConfigInvalid):
            grid_search("gbdt", HyperGrid({"n_rounds": (5,)}), train, val, metric="MAPE")

    def test_tie_break_prefers_smaller_model(self):
        # constant target: every config scores identically -> fewest rounds, smallest depth
        X = np.arange(40.0).reshape(-1, 1)
        y = np.full(40, 2.0)
        grid = HyperGrid({"n_rounds": (50, 5), "max_depth": (6, 2)})
        best, _ = grid_search("gbdt", grid, (X[:30], y[:30]), (X[30:], y[30:]))
        assert best.n_rounds == 5 and best.max_depth == 2
