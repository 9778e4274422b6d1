"""Tests for the honest Riesz forest learner."""

import numpy as np
import pytest

from autodml import forestriesz as fr
from autodml import moments, neuralcore as nc
from autodml.dataset import Dataset
from autodml.errors import (ArgumentError, ConfigError, DegenerateLeafError,
                            EmptyTreeError, NumericError, ShapeError,
                            ValidationError)
from autodml.moments import make_moment


def binary_data(n, seed, d=4, p_fn=None):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, d))
    p = 0.5 * np.ones(n) if p_fn is None else p_fn(x)
    t = (rng.uniform(size=n) < p).astype(np.float64)
    y = t * (1.0 + x[:, 0]) + x[:, 1] + 0.3 * rng.standard_normal(n)
    return Dataset(y, t, x, "binary")


def continuous_data(n, seed, d=3):
    rng = np.random.default_rng(seed)
    x = rng.uniform(-1.0, 1.0, size=(n, d))
    t = 1.0 + x[:, 0] + 0.5 * rng.standard_normal(n)
    y = t * (1.0 + 0.5 * x[:, 1]) + 0.3 * rng.standard_normal(n)
    return Dataset(y, t, x, "continuous")


ATE = make_moment("ate")


def assert_same_structure(a, b, fields):
    for field in fields:
        lhs, rhs = getattr(a, field), getattr(b, field)
        equal_nan = lhs.dtype.kind == "f"
        assert np.array_equal(lhs, rhs, equal_nan=equal_nan), field


class TestFeatureMap:
    def test_binary_indicator_values(self):
        fmap = fr.FeatureMap("binary_indicators")
        out = fmap.evaluate(np.array([0.0, 1.0]))
        assert np.array_equal(out, np.array([[1.0, 0.0], [0.0, 1.0]]))
        assert fmap.d_phi == 2
        assert not fmap.smooth

    def test_polynomial_values_and_derivative(self):
        fmap = fr.FeatureMap("polynomial", degree=3)
        out = fmap.evaluate(np.array([2.0]))
        assert np.array_equal(out, np.array([[1.0, 2.0, 4.0, 8.0]]))
        der = fmap.derivative(np.array([2.0]))
        assert np.array_equal(der, np.array([[0.0, 1.0, 4.0, 12.0]]))

    def test_degree_zero_is_constant(self):
        fmap = fr.FeatureMap("polynomial", degree=0)
        assert np.array_equal(fmap.evaluate([0.3, 7.0]),
                              np.ones((2, 1)))
        assert np.array_equal(fmap.derivative([0.3, 7.0]),
                              np.zeros((2, 1)))

    def test_indicator_map_has_no_derivative(self):
        with pytest.raises(ArgumentError):
            fr.FeatureMap("binary_indicators").derivative([0.0])

    def test_invalid_maps_rejected(self):
        with pytest.raises(ArgumentError):
            fr.FeatureMap("splines")
        with pytest.raises(ArgumentError):
            fr.FeatureMap("polynomial", degree=-1)

    def test_default_map_by_moment(self):
        assert fr.default_feature_map(ATE).kind == "binary_indicators"
        deriv = fr.default_feature_map(make_moment("avg_derivative"))
        assert deriv.kind == "polynomial" and deriv.degree == 3


class TestLeafSolve:
    def test_one_control_three_treated_is_ips(self):
        # 1 control + 3 treated: J = diag(1/4, 3/4), M = (-1, 1),
        # beta = (-4, 4/3); alpha is the within-leaf IPS weight.
        t = np.array([0.0, 1.0, 1.0, 1.0])
        x = np.zeros((4, 1))
        beta = fr.leaf_solve(t, x, ATE, fr.FeatureMap("binary_indicators"),
                             l2=0.0)
        assert np.max(np.abs(beta - np.array([-4.0, 4.0 / 3.0]))) < 1e-12
        alpha = fr.FeatureMap("binary_indicators").evaluate(t) @ beta
        assert np.max(np.abs(alpha - np.array(
            [-4.0, 4.0 / 3.0, 4.0 / 3.0, 4.0 / 3.0]))) < 1e-12

    def test_matches_brute_force_minimizer(self):
        # The ridge solution minimizes mean(alpha^2) - 2 mean(m(alpha)).
        from scipy.optimize import minimize
        rng = np.random.default_rng(3)
        n = 40
        x = rng.uniform(-1, 1, size=(n, 2))
        t = (rng.uniform(size=n) < 0.4).astype(np.float64)
        fmap = fr.FeatureMap("binary_indicators")
        phi = fmap.evaluate(t)
        mvec = fr._phi_moment_matrix(ATE, fmap, t, x)

        def loss(beta):
            alpha = phi @ beta
            return float(np.mean(alpha ** 2) - 2.0 * np.mean(mvec @ beta)
                         + 0.01 * beta @ beta)

        got = fr.leaf_solve(t, x, ATE, fmap, l2=0.01)
        ref = minimize(loss, np.zeros(2), method="Nelder-Mead",
                       options={"xatol": 1e-10, "fatol": 1e-14,
                                "maxiter": 4000}).x
        assert np.max(np.abs(got - ref)) < 1e-6

    def test_constant_basis_zero_moment(self):
        # Degree-0 map under an exact derivative moment: M = 0, beta = 0.
        moment = make_moment("avg_derivative",
                             derivative_mode="exact_if_available")
        t = np.array([0.7, 0.7, 0.7])
        x = np.zeros((3, 1))
        beta = fr.leaf_solve(t, x, moment, fr.FeatureMap("polynomial", 0),
                             l2=0.0)
        assert np.array_equal(beta, np.zeros(1))

    def test_large_ridge_shrinks_to_zero(self):
        t = np.array([0.0, 1.0, 1.0, 0.0])
        x = np.zeros((4, 1))
        beta = fr.leaf_solve(t, x, ATE, fr.FeatureMap("binary_indicators"),
                             l2=1e12)
        assert np.max(np.abs(beta)) < 1e-9

    def test_single_arm_leaf_is_degenerate(self):
        t = np.ones(6)
        x = np.zeros((6, 1))
        with pytest.raises(DegenerateLeafError):
            fr.leaf_solve(t, x, ATE, fr.FeatureMap("binary_indicators"),
                          l2=0.0)

    def test_moment_matrix_matches_moment_apply(self):
        # Componentwise m(W; phi_j) agrees bitwise with applying the
        # moment to each basis column as an oracle.
        rng = np.random.default_rng(11)
        n = 25
        x = rng.uniform(-1, 1, size=(n, 3))
        t = (rng.uniform(size=n) < 0.5).astype(np.float64)
        y = rng.standard_normal(n)
        fmap = fr.FeatureMap("binary_indicators")
        mat = fr._phi_moment_matrix(ATE, fmap, t, x)

        class Basis:
            def __init__(self, j):
                self.j = j

            def __call__(self, tq, xq):
                return fmap.evaluate(tq)[:, self.j]

        for j in range(fmap.d_phi):
            assert np.array_equal(mat[:, j], ATE.apply(Basis(j), y, t, x))


class TestSplitCriterion:
    def test_count_weighted_ips_formula(self):
        # A child with n0 controls and n1 treated contributes
        # n^2 (1/n0 + 1/n1) at l2=0.
        fmap = fr.FeatureMap("binary_indicators")
        left = fr.node_stats(np.array([0.0, 0.0, 1.0, 1.0, 1.0]),
                             np.zeros((5, 1)), ATE, fmap)
        right = fr.node_stats(np.array([0.0, 1.0]),
                              np.zeros((2, 1)), ATE, fmap)
        expected = 25.0 * (1.0 / 2.0 + 1.0 / 3.0) + 4.0 * (1.0 + 1.0)
        assert abs(fr.split_criterion(left, right) - expected) < 1e-12

    def test_identical_children_equal_parent_value(self):
        fmap = fr.FeatureMap("binary_indicators")
        t = np.array([0.0, 1.0, 1.0, 0.0, 1.0])
        x = np.zeros((5, 1))
        child = fr.node_stats(t, x, ATE, fmap)
        parent = fr.node_stats(np.concatenate([t, t]),
                               np.zeros((10, 1)), ATE, fmap)
        both = fr.split_criterion(child, child)
        beta = np.linalg.solve(parent.j, parent.m)
        assert abs(both - parent.count * beta @ parent.j @ beta) < 1e-12

    def test_single_arm_child_discarded(self):
        fmap = fr.FeatureMap("binary_indicators")
        left = fr.node_stats(np.array([0.0, 1.0]), np.zeros((2, 1)),
                             ATE, fmap)
        right = fr.node_stats(np.ones(3), np.zeros((3, 1)), ATE, fmap)
        with pytest.raises(DegenerateLeafError):
            fr.split_criterion(left, right)

    def test_node_stats_validation(self):
        with pytest.raises(ArgumentError):
            fr.NodeStats(0, np.eye(2), np.zeros(2))
        with pytest.raises(ShapeError):
            fr.NodeStats(3, np.eye(3), np.zeros(2))


class TestGrowTree:
    def test_pure_noise_gives_root_only_tree(self):
        data = binary_data(300, seed=5)
        config = fr.RieszForestConfig(
            n_trees=1, min_samples_leaf=30, max_samples=1.0,
            min_impurity_decrease=1e9, multitask=False, seed=0)
        tree = fr.grow_tree(data, np.arange(data.n), config, ATE, seed=0)
        assert tree.n_leaves == 1
        assert tree.feature[0] == -1

    def test_propensity_regime_split_is_found(self):
        # p jumps from 0.2 to 0.8 at x1 = 0; with all features in the
        # candidate set the first split must be on column 0 near 0.
        def p_fn(x):
            return np.where(x[:, 0] < 0.0, 0.2, 0.8)

        data = binary_data(800, seed=9, d=4, p_fn=p_fn)
        config = fr.RieszForestConfig(
            n_trees=1, min_samples_leaf=60, max_samples=1.0,
            multitask=False, max_features=4, seed=0)
        tree = fr.grow_tree(data, np.arange(data.n), config, ATE, seed=3)
        assert tree.feature[0] == 0
        assert abs(tree.threshold[0]) < 0.25

    def test_same_seed_same_tree(self):
        data = binary_data(400, seed=2)
        config = fr.RieszForestConfig(n_trees=1, min_samples_leaf=40,
                                      multitask=True)
        a = fr.grow_tree(data, np.arange(data.n), config, ATE, seed=17)
        b = fr.grow_tree(data, np.arange(data.n), config, ATE, seed=17)
        assert_same_structure(a, b, ("feature", "threshold", "left",
                                     "right", "leaf_id", "leaf_count",
                                     "leaf_j", "leaf_m", "leaf_m_reg"))

    def test_too_few_samples(self):
        data = binary_data(80, seed=1)
        config = fr.RieszForestConfig(min_samples_leaf=50, multitask=False)
        with pytest.raises(EmptyTreeError):
            fr.grow_tree(data, np.arange(80), config, ATE, seed=0)

    def test_subsample_too_small_for_root_leaf(self):
        # 100 indices pass the precondition but the 0.5 subsample's
        # estimation half cannot reach min_samples_leaf.
        data = binary_data(100, seed=1)
        config = fr.RieszForestConfig(min_samples_leaf=50, max_samples=0.5,
                                      multitask=False)
        with pytest.raises(EmptyTreeError):
            fr.grow_tree(data, np.arange(100), config, ATE, seed=0)

    def test_splits_only_on_covariate_columns(self):
        data = binary_data(500, seed=8)
        config = fr.RieszForestConfig(n_trees=1, min_samples_leaf=30,
                                      multitask=True, max_samples=1.0)
        tree = fr.grow_tree(data, np.arange(data.n), config, ATE, seed=1)
        internal = tree.feature[tree.feature >= 0]
        assert internal.size > 0
        assert np.all(internal < data.d)

    def test_estimation_half_leaf_counts(self):
        data = binary_data(600, seed=4)
        config = fr.RieszForestConfig(n_trees=1, min_samples_leaf=45,
                                      multitask=True)
        for seed in range(4):
            tree = fr.grow_tree(data, np.arange(data.n), config, ATE, seed)
            assert np.all(tree.leaf_count >= 45)
            assert int(np.sum(tree.leaf_count)) == tree.est_indices.shape[0]

    def test_honesty_structure_ignores_estimation_outcomes(self):
        data = binary_data(500, seed=13)
        config = fr.RieszForestConfig(n_trees=1, min_samples_leaf=40,
                                      multitask=True, max_samples=1.0)
        tree = fr.grow_tree(data, np.arange(data.n), config, ATE, seed=21)
        rng = np.random.default_rng(0)
        y2 = data.y.copy()
        est = tree.est_indices
        y2[est] = y2[rng.permutation(est)]
        data2 = Dataset(y2, data.t, data.x, "binary")
        tree2 = fr.grow_tree(data2, np.arange(data.n), config, ATE, seed=21)
        assert_same_structure(tree, tree2,
                              ("feature", "threshold", "left", "right"))
        assert not np.array_equal(tree.leaf_m_reg, tree2.leaf_m_reg)

    def test_max_depth_zero_forces_leaf(self):
        data = binary_data(300, seed=5)
        config = fr.RieszForestConfig(n_trees=1, min_samples_leaf=20,
                                      multitask=False, max_depth=0)
        tree = fr.grow_tree(data, np.arange(data.n), config, ATE, seed=0)
        assert tree.n_leaves == 1


class TestCriterionBruteForce:
    def _node(self, n=90, seed=33):
        rng = np.random.default_rng(seed)
        x = rng.uniform(-1, 1, size=(n, 2))
        t = (rng.uniform(size=n) < 0.45).astype(np.float64)
        y = rng.standard_normal(n)
        return y, t, x

    def test_criterion_equals_negative_piecewise_loss(self):
        # For every candidate threshold, sum |child| beta'J beta equals
        # -n * (empirical Riesz loss of the piecewise solution) at l2=0.
        y, t, x = self._node()
        n = t.shape[0]
        fmap = fr.FeatureMap("binary_indicators")
        data = Dataset(y, t, x, "binary")
        for f in range(2):
            values = np.unique(x[:, f])
            thresholds = 0.5 * (values[:-1] + values[1:])
            for thr in thresholds:
                left = x[:, f] <= thr
                if min(left.sum(), n - left.sum()) < 10:
                    continue
                try:
                    crit = fr.split_criterion(
                        fr.node_stats(t[left], x[left], ATE, fmap),
                        fr.node_stats(t[~left], x[~left], ATE, fmap))
                except DegenerateLeafError:
                    continue
                beta_l = fr.leaf_solve(t[left], x[left], ATE, fmap, 0.0)
                beta_r = fr.leaf_solve(t[~left], x[~left], ATE, fmap, 0.0)

                def alpha(tq, xq):
                    phi = fmap.evaluate(tq)
                    beta = np.where((xq[:, f] <= thr)[:, None],
                                    beta_l, beta_r)
                    return np.sum(phi * beta, axis=1)

                loss = moments.empirical_riesz_loss(alpha, ATE, data)
                assert abs(crit + n * loss) < 1e-10 * max(1.0, abs(crit))

    def test_grown_split_matches_brute_force_argmax(self):
        y, t, x = self._node(n=100, seed=44)
        data = Dataset(y, t, x, "binary")
        msl = 15
        config = fr.RieszForestConfig(
            n_trees=1, min_samples_leaf=msl, max_samples=1.0, honest=False,
            multitask=False, max_features=2, max_depth=1, l2=0.0,
            min_impurity_decrease=0.0)
        tree = fr.grow_tree(data, np.arange(data.n), config, ATE, seed=0)
        assert tree.feature[0] >= 0

        fmap = fr.FeatureMap("binary_indicators")
        best = (-np.inf, None, None)
        for f in range(2):
            order = np.argsort(x[:, f], kind="stable")
            vals = x[order, f]
            for i in range(len(vals) - 1):
                if vals[i] >= vals[i + 1]:
                    continue
                k = i + 1
                if k < msl or len(vals) - k < msl:
                    continue
                thr = 0.5 * (vals[i] + vals[i + 1])
                left = x[:, f] <= thr
                try:
                    crit = fr.split_criterion(
                        fr.node_stats(t[left], x[left], ATE, fmap),
                        fr.node_stats(t[~left], x[~left], ATE, fmap))
                except DegenerateLeafError:
                    continue
                if crit > best[0]:
                    best = (crit, f, thr)
        assert tree.feature[0] == best[1]
        assert abs(tree.threshold[0] - best[2]) < 1e-12


class TestForestPredict:
    def test_root_only_tree_equals_leaf_solve_exactly(self):
        data = binary_data(400, seed=6)
        config = fr.RieszForestConfig(
            n_trees=1, min_samples_leaf=50, min_impurity_decrease=1e9,
            multitask=False, seed=12)
        forest = fr.fit_forest(data, ATE, config)
        tree = forest.trees[0]
        est = tree.est_indices
        beta_ref = fr.leaf_solve(data.t[est], data.x[est], ATE,
                                 forest.feature_map, config.l2)
        beta = fr.predict_beta(forest, data.x[:7])
        for row in beta:
            assert np.array_equal(row, beta_ref)

    def test_ips_recovery_on_full_sample(self):
        data = binary_data(240, seed=10, p_fn=lambda x: 0.4 * np.ones(len(x)))
        config = fr.RieszForestConfig(
            n_trees=1, min_samples_leaf=50, max_samples=1.0, honest=False,
            min_impurity_decrease=1e9, l2=0.0, multitask=False, seed=0)
        forest = fr.fit_forest(data, ATE, config)
        alpha = fr.predict_alpha(forest, data.t, data.x)
        ips = float(np.mean(alpha * data.y))
        treated = data.y[data.t == 1.0].mean()
        control = data.y[data.t == 0.0].mean()
        assert abs(ips - (treated - control)) < 1e-10

    def test_binary_contrast_matches_beta(self):
        data = binary_data(500, seed=3)
        config = fr.RieszForestConfig(n_trees=10, min_samples_leaf=50,
                                      multitask=False, seed=4)
        forest = fr.fit_forest(data, ATE, config)
        xq = data.x[:9]
        beta = fr.predict_beta(forest, xq)
        hi = fr.predict_alpha(forest, np.ones(9), xq)
        lo = fr.predict_alpha(forest, np.zeros(9), xq)
        assert np.max(np.abs((hi - lo) - (beta[:, 1] - beta[:, 0]))) < 1e-12

    def test_polynomial_analytic_derivative_vs_fd(self):
        data = continuous_data(600, seed=7)
        moment = make_moment("avg_derivative")
        config = fr.RieszForestConfig(n_trees=10, min_samples_leaf=60,
                                      seed=2, multitask=False)
        forest = fr.fit_forest(data, moment, config)
        oracle = forest.alpha_oracle()
        assert isinstance(oracle, fr.SmoothForestOracle)
        tq = np.full(12, 0.7)
        xq = data.x[:12]
        h = 1e-4
        fd = (oracle(tq + h, xq) - oracle(tq - h, xq)) / (2.0 * h)
        exact = oracle.d_dt(tq, xq)
        rel = np.abs(fd - exact) / (1.0 + np.abs(exact))
        assert np.max(rel) < 1e-6

    def test_exact_mode_moment_uses_analytic_channel(self):
        data = continuous_data(400, seed=15)
        fit_moment = make_moment("avg_derivative")
        config = fr.RieszForestConfig(n_trees=5, min_samples_leaf=60,
                                      seed=0, multitask=False)
        forest = fr.fit_forest(data, fit_moment, config)
        oracle = forest.alpha_oracle()
        exact_moment = make_moment("avg_derivative",
                                   derivative_mode="exact_if_available")
        applied = exact_moment.apply(oracle, data.y, data.t, data.x)
        assert np.array_equal(applied, oracle.d_dt(data.t, data.x))

    def test_multitask_constant_outcome_fits_exactly(self):
        rng = np.random.default_rng(0)
        n = 320
        x = rng.uniform(-1, 1, size=(n, 3))
        t = (rng.uniform(size=n) < 0.5).astype(np.float64)
        data = Dataset(np.full(n, 0.37), t, x, "binary")
        config = fr.RieszForestConfig(n_trees=5, min_samples_leaf=50,
                                      l2=0.0, multitask=True, seed=1)
        forest = fr.fit_forest(data, ATE, config)
        for tq in (np.zeros(6), np.ones(6), np.full(6, 0.3)):
            g = fr.predict_g(forest, tq, x[:6])
            assert np.max(np.abs(g - 0.37)) < 1e-10

    def test_more_trees_reduce_prediction_variance(self):
        data = binary_data(240, seed=20, d=3)
        xq = data.x[:1]

        def predict_with(b, seed):
            config = fr.RieszForestConfig(
                n_trees=b, min_samples_leaf=20, multitask=False, seed=seed)
            forest = fr.fit_forest(data, ATE, config)
            return fr.predict_alpha(forest, np.ones(1), xq)[0]

        seeds = range(100, 120)
        small = np.var([predict_with(4, s) for s in seeds])
        large = np.var([predict_with(32, s) for s in seeds])
        assert large < small

    def test_parallel_build_matches_serial(self):
        data = binary_data(300, seed=30)
        base = dict(n_trees=8, min_samples_leaf=40, multitask=True, seed=9)
        serial = fr.fit_forest(data, ATE,
                               fr.RieszForestConfig(n_jobs=1, **base))
        threaded = fr.fit_forest(data, ATE,
                                 fr.RieszForestConfig(n_jobs=2, **base))
        for a, b in zip(serial.trees, threaded.trees):
            assert_same_structure(a, b, ("feature", "threshold",
                                         "leaf_j", "leaf_m"))

    def test_degenerate_aggregate_raises(self):
        rng = np.random.default_rng(1)
        n = 120
        x = rng.uniform(-1, 1, size=(n, 2))
        data = Dataset(rng.standard_normal(n), np.ones(n), x, "binary")
        config = fr.RieszForestConfig(
            n_trees=1, min_samples_leaf=50, max_samples=1.0, honest=False,
            l2=0.0, multitask=False, seed=0)
        forest = fr.fit_forest(data, ATE, config)
        with pytest.raises(NumericError):
            fr.predict_alpha(forest, np.ones(2), x[:2])

    def test_channel_guards(self):
        data = binary_data(300, seed=2)
        config = fr.RieszForestConfig(n_trees=2, min_samples_leaf=50,
                                      multitask=False)
        forest = fr.fit_forest(data, ATE, config)
        with pytest.raises(ArgumentError):
            forest.g_oracle()
        with pytest.raises(ArgumentError):
            fr.predict_g(forest, np.zeros(2), data.x[:2])

    def test_query_shape_checked(self):
        data = binary_data(300, seed=2)
        config = fr.RieszForestConfig(n_trees=2, min_samples_leaf=50,
                                      multitask=False)
        forest = fr.fit_forest(data, ATE, config)
        with pytest.raises(ShapeError):
            fr.predict_beta(forest, np.zeros((3, 7)))

    def test_moment_treatment_mismatch(self):
        data = continuous_data(300, seed=2)
        config = fr.RieszForestConfig(n_trees=2, min_samples_leaf=50)
        with pytest.raises(ValidationError):
            fr.fit_forest(data, ATE, config)


class TestRegressionForest:
    def test_step_function_recovery(self):
        rng = np.random.default_rng(5)
        n = 700
        x = rng.uniform(-1, 1, size=(n, 2))
        y = (x[:, 0] > 0.0).astype(np.float64) + 0.05 * rng.standard_normal(n)
        forest = fr.fit_regression_forest(
            x, y, fr.RieszForestConfig(n_trees=20, min_samples_leaf=50,
                                       l2=0.0, seed=3))
        xq = np.array([[-0.7, 0.0], [0.7, 0.0]])
        pred = fr.predict_regression(forest, xq)
        assert abs(pred[0] - 0.0) < 0.15
        assert abs(pred[1] - 1.0) < 0.15

    def test_constant_outcome_exact(self):
        rng = np.random.default_rng(6)
        x = rng.uniform(-1, 1, size=(250, 2))
        forest = fr.fit_regression_forest(x, np.full(250, -2.5))
        pred = fr.predict_regression(forest, x[:5])
        assert np.max(np.abs(pred - (-2.5))) < 1e-10

    def test_riesz_channel_blocked(self):
        rng = np.random.default_rng(7)
        x = rng.uniform(-1, 1, size=(250, 2))
        forest = fr.fit_regression_forest(x, x[:, 0])
        with pytest.raises(ArgumentError):
            forest.alpha_oracle()
        with pytest.raises(ArgumentError):
            fr.predict_beta(forest, x[:2])


class TestSerialization:
    def test_round_trip_preserves_predictions(self, tmp_path):
        data = binary_data(400, seed=19)
        config = fr.RieszForestConfig(n_trees=6, min_samples_leaf=50,
                                      multitask=True, seed=5)
        forest = fr.fit_forest(data, ATE, config)
        path = str(tmp_path / "forest.bin")
        forest.save(path)
        loaded = fr.RieszForest.load(path)
        xq = data.x[:11]
        assert np.array_equal(fr.predict_alpha(forest, np.ones(11), xq),
                              fr.predict_alpha(loaded, np.ones(11), xq))
        assert np.array_equal(fr.predict_g(forest, np.zeros(11), xq),
                              fr.predict_g(loaded, np.zeros(11), xq))
        assert loaded.config == forest.config
        assert loaded.feature_map == forest.feature_map

    def test_refit_is_byte_identical(self, tmp_path):
        data = binary_data(300, seed=23)
        config = fr.RieszForestConfig(n_trees=4, min_samples_leaf=50,
                                      multitask=True, seed=7)
        p1, p2 = str(tmp_path / "a.bin"), str(tmp_path / "b.bin")
        fr.fit_forest(data, ATE, config).save(p1)
        fr.fit_forest(data, ATE, config).save(p2)
        with open(p1, "rb") as fh:
            b1 = fh.read()
        with open(p2, "rb") as fh:
            b2 = fh.read()
        assert b1 == b2

    def test_wrong_kind_rejected(self, tmp_path):
        rng = np.random.default_rng(0)
        params = nc.init_mlp([2, 3, 1], ["elu", "identity"], rng)
        path = str(tmp_path / "net.bin")
        nc.save_mlp(path, params)
        with pytest.raises(ValidationError):
            fr.load_forest(path)


class TestConfigValidation:
    @pytest.mark.parametrize("kwargs", [
        {"n_trees": 0},
        {"min_samples_leaf": 0},
        {"max_samples": 0.0},
        {"max_samples": 1.5},
        {"min_impurity_decrease": -1.0},
        {"l2": -0.1},
        {"max_depth": -1},
        {"max_features": 0},
        {"n_jobs": 0},
    ])
    def test_bad_values_rejected(self, kwargs):
        with pytest.raises(ConfigError):
            fr.RieszForestConfig(**kwargs)
