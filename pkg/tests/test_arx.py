import numpy as np
import pytest

from vsensor.arx import (
    ArxCoefficients,
    arx_to_statespace,
    build_regressor,
    extract_local_models,
    fit_arx_ls,
    grow_segmentation_tree,
    regressor_matrix,
    simulate_arx,
)
from vsensor.benchmarks import SyntheticConfig, SwitchingLaw, simulate_switching, simulate_synthetic
from vsensor.dataset import TimeSeriesDataset
from vsensor.errors import ConfigError, DataError


def gamma_from_roots(roots, b_lags, c):
    """Assemble a coefficient vector whose output recursion has the given poles."""
    roots = np.asarray(roots, dtype=float)
    M = len(roots)
    poly = np.poly(roots)  # [1, a_1, ..., a_M]
    a = poly[1:]
    b_lags = np.asarray(b_lags, dtype=float).reshape(M, -1)
    gamma = np.concatenate([a[::-1], b_lags[::-1].ravel(), [c]])
    return ArxCoefficients(order=M, n_u=b_lags.shape[1], gamma=gamma)


def dataset_from_model(coeffs, T, seed, u_scale=1.0):
    rng = np.random.default_rng(seed)
    u = u_scale * rng.standard_normal((T, coeffs.n_u))
    y = simulate_arx(coeffs, u)
    return TimeSeriesDataset(u=u, y=y[:, None], rho=np.zeros((T, 1)))


class TestRegressor:
    def test_hand_example_order_one(self):
        ds = TimeSeriesDataset(u=[[3.0], [0.0]], y=[[2.0], [0.0]], rho=[[0.0], [0.0]])
        np.testing.assert_array_equal(build_regressor(ds, 1, 1), [-2.0, 3.0, 1.0])

    def test_zero_history_keeps_affine_term(self):
        ds = TimeSeriesDataset(u=np.zeros((4, 2)), y=np.zeros((4, 1)), rho=np.zeros((4, 1)))
        row = build_regressor(ds, 3, 3)
        np.testing.assert_array_equal(row, [0.0] * 9 + [1.0])

    def test_short_history_rejected(self):
        ds = TimeSeriesDataset(u=np.zeros((4, 1)), y=np.zeros((4, 1)), rho=np.zeros((4, 1)))
        with pytest.raises(DataError):
            build_regressor(ds, 3, 2)

    def test_index_arithmetic_oracle(self):
        rng = np.random.default_rng(0)
        T, M, n_u = 30, 5, 2
        ds = TimeSeriesDataset(
            u=rng.standard_normal((T, n_u)),
            y=rng.standard_normal((T, 1)),
            rho=np.zeros((T, 1)),
        )
        k = 12
        row = build_regressor(ds, M, k)
        assert row.shape == (16,)
        # hand-unrolled construction
        expected = []
        for i in range(M, 0, -1):
            expected.append(-ds.y[k - i, 0])
        for i in range(M, 0, -1):
            expected.extend(ds.u[k - i])
        expected.append(1.0)
        np.testing.assert_array_equal(row, expected)

    def test_matrix_rows_match_single_rows(self):
        rng = np.random.default_rng(1)
        ds = TimeSeriesDataset(
            u=rng.standard_normal((20, 2)),
            y=rng.standard_normal((20, 1)),
            rho=np.zeros((20, 1)),
        )
        phi, targets = regressor_matrix(ds, 4)
        for r in range(len(phi)):
            np.testing.assert_array_equal(phi[r], build_regressor(ds, 4, 4 + r))
            assert targets[r] == ds.y[4 + r, 0]


class TestLeastSquares:
    def test_recovers_noiseless_arx2(self):
        truth = gamma_from_roots([0.5, -0.3], [[1.2], [-0.7]], c=0.4)
        ds = dataset_from_model(truth, T=600, seed=2)
        fitted = fit_arx_ls(ds, 2)
        assert np.max(np.abs(fitted.gamma - truth.gamma)) < 1e-8

    def test_constant_data_ridge_fallback(self):
        c = 3.0
        T = 50
        ds = TimeSeriesDataset(
            u=np.zeros((T, 1)), y=np.full((T, 1), c), rho=np.zeros((T, 1))
        )
        fitted = fit_arx_ls(ds, 2)
        phi, _ = regressor_matrix(ds, 2)
        preds = phi @ fitted.gamma
        np.testing.assert_allclose(preds, c, rtol=1e-6)
        # the model's equilibrium output reproduces the constant
        eq = fitted.c / (1.0 + fitted.a_lags.sum())
        assert eq == pytest.approx(c, rel=1e-6)

    def test_dual_solver_oracle(self):
        rng = np.random.default_rng(3)
        ds = TimeSeriesDataset(
            u=rng.standard_normal((300, 2)),
            y=rng.standard_normal((300, 1)),
            rho=np.zeros((300, 1)),
        )
        fitted = fit_arx_ls(ds, 3)
        phi, targets = regressor_matrix(ds, 3)
        gamma_qr, *_ = np.linalg.lstsq(phi, targets, rcond=None)
        assert np.max(np.abs(fitted.gamma - gamma_qr)) < 1e-9

    def test_too_few_samples_rejected(self):
        rng = np.random.default_rng(4)
        ds = TimeSeriesDataset(
            u=rng.standard_normal((8, 1)),
            y=rng.standard_normal((8, 1)),
            rho=np.zeros((8, 1)),
        )
        with pytest.raises(DataError):
            fit_arx_ls(ds, 3)  # 7 gamma entries > 5 usable rows

    def test_restricted_sample_indices(self):
        truth = gamma_from_roots([0.4], [[2.0]], c=0.0)
        ds = dataset_from_model(truth, T=200, seed=5)
        subset = np.arange(50, 150)
        fitted = fit_arx_ls(ds, 1, sample_indices=subset)
        assert np.max(np.abs(fitted.gamma - truth.gamma)) < 1e-8


class TestStateSpace:
    def test_hand_example_order_one(self):
        coeffs = ArxCoefficients(order=1, n_u=1, gamma=np.array([0.5, 2.0, 1.0]))
        ss = arx_to_statespace(coeffs)
        np.testing.assert_array_equal(ss.A, [[-0.5]])
        np.testing.assert_array_equal(ss.B, [[2.0]])
        np.testing.assert_array_equal(ss.C, [[1.0]])
        np.testing.assert_array_equal(ss.d, [1.0])
        assert ss.e == 0.0

    def test_simulation_equivalence(self):
        rng = np.random.default_rng(6)
        for trial in range(5):
            M = int(rng.integers(1, 6))
            roots = rng.uniform(-0.8, 0.8, M)
            coeffs = gamma_from_roots(roots, rng.standard_normal((M, 2)), c=rng.normal())
            ss = arx_to_statespace(coeffs)
            u = rng.standard_normal((200, 2))
            y_arx = simulate_arx(coeffs, u)
            y_ss = ss.simulate(u, x0=ss.zero_history_state())
            assert np.max(np.abs(y_arx - y_ss)) < 1e-10

    def test_fir_case_nilpotent(self):
        M = 4
        gamma = np.concatenate([np.zeros(M), np.ones(M), [0.5]])
        ss = arx_to_statespace(ArxCoefficients(order=M, n_u=1, gamma=gamma))
        assert np.max(np.abs(np.linalg.matrix_power(ss.A, M))) == 0.0

    def test_observability_full_rank(self):
        rng = np.random.default_rng(7)
        for _ in range(5):
            M = int(rng.integers(1, 6))
            coeffs = gamma_from_roots(
                rng.uniform(-0.9, 0.9, M), rng.standard_normal((M, 1)), c=0.0
            )
            ss = arx_to_statespace(coeffs)
            obs = np.vstack([ss.C @ np.linalg.matrix_power(ss.A, i) for i in range(M)])
            assert np.linalg.matrix_rank(obs) == M


def switching_ds(T=6000, seed=0):
    return simulate_switching(
        SyntheticConfig(T=T, seed=seed, alpha=0.0, rho_law=SwitchingLaw())
    )


class TestSegmentationTree:
    def test_switching_modes_recovered(self):
        ds = switching_ds(seed=1)
        tree = grow_segmentation_tree(ds, 5, 4)
        assert tree.leaf_count == 4
        centroids = sorted(leaf.rho_centroid[0] for leaf in tree.leaves())
        for got, want in zip(centroids, [0.0, 0.5, 1.0, 1.5]):
            assert abs(got - want) < 0.05

    def test_single_leaf_equals_global_fit(self):
        ds = simulate_synthetic(SyntheticConfig(T=2000, seed=2))
        tree = grow_segmentation_tree(ds, 5, 1)
        assert tree.leaf_count == 1
        global_fit = fit_arx_ls(ds, 5)
        np.testing.assert_array_equal(tree.leaves()[0].model.gamma, global_fit.gamma)

    def test_total_sse_non_increasing_in_leaf_cap(self):
        ds = simulate_synthetic(SyntheticConfig(T=3000, seed=3))
        totals = []
        for cap in range(1, 8):
            tree = grow_segmentation_tree(ds, 5, cap)
            totals.append(sum(leaf.sse for leaf in tree.leaves()))
        for prev, nxt in zip(totals, totals[1:]):
            assert nxt <= prev + 1e-9 * max(1.0, abs(prev))

    def test_leaf_optimality_vs_parent_model(self):
        ds = simulate_synthetic(SyntheticConfig(T=3000, seed=4))
        tree = grow_segmentation_tree(ds, 5, 2)
        parent = fit_arx_ls(ds, 5)
        phi, targets = regressor_matrix(ds, 5)
        rho = ds.rho[5:, 0]
        root = tree.root
        for side, leaf in (("left", root.left), ("right", root.right)):
            mask = rho <= root.threshold if side == "left" else rho > root.threshold
            parent_sse = np.sum((targets[mask] - phi[mask] @ parent.gamma) ** 2)
            assert leaf.sse <= parent_sse * (1 + 1e-9)

    def test_leaf_models_are_exact_leaf_fits(self):
        ds = switching_ds(T=4000, seed=5)
        tree = grow_segmentation_tree(ds, 3, 4)
        phi, targets = regressor_matrix(ds, 3)
        rho = ds.rho[3:]
        for leaf in tree.leaves():
            rows = np.array([tree.lookup(r) is leaf for r in rho])
            assert rows.sum() == leaf.sample_count
            refit, *_ = np.linalg.lstsq(phi[rows], targets[rows], rcond=None)
            assert np.max(np.abs(refit - leaf.model.gamma)) < 1e-7

    def test_no_valid_split_gives_single_leaf(self):
        # constant rho: no candidate thresholds at the root
        rng = np.random.default_rng(6)
        ds = TimeSeriesDataset(
            u=rng.standard_normal((300, 1)),
            y=rng.standard_normal((300, 1)),
            rho=np.zeros((300, 1)),
        )
        tree = grow_segmentation_tree(ds, 2, 5)
        assert tree.leaf_count == 1

    def test_insufficient_samples_rejected(self):
        ds = switching_ds(T=100, seed=7)
        with pytest.raises(ConfigError):
            grow_segmentation_tree(ds, 5, 10)  # 10 * 16 > 100

    def test_determinism(self):
        ds = simulate_synthetic(SyntheticConfig(T=2500, seed=8))
        t1 = grow_segmentation_tree(ds, 4, 5)
        t2 = grow_segmentation_tree(ds, 4, 5)
        assert t1.to_dict() == t2.to_dict()

    def test_serialization_round_trip(self):
        ds = switching_ds(T=3000, seed=9)
        tree = grow_segmentation_tree(ds, 3, 3)
        back = type(tree).from_dict(tree.to_dict())
        assert back.to_dict() == tree.to_dict()
        for r in ([0.1], [0.9], [1.4]):
            np.testing.assert_array_equal(
                back.lookup(r).model.gamma, tree.lookup(r).model.gamma
            )


class TestExtraction:
    def test_single_leaf(self):
        ds = simulate_synthetic(SyntheticConfig(T=1500, seed=10))
        tree = grow_segmentation_tree(ds, 3, 1)
        assert len(extract_local_models(tree)) == 1

    def test_switching_order_strictly_increasing(self):
        ds = switching_ds(seed=11)
        tree = grow_segmentation_tree(ds, 5, 4)
        locals_ = extract_local_models(tree)
        assert len(locals_) == 4
        values = [rho[0] for rho, _ in locals_]
        assert all(a < b for a, b in zip(values, values[1:]))

    def test_extraction_deterministic(self):
        ds = switching_ds(T=4000, seed=12)
        tree = grow_segmentation_tree(ds, 4, 4)
        first = extract_local_models(tree)
        second = extract_local_models(tree)
        for (r1, g1), (r2, g2) in zip(first, second):
            np.testing.assert_array_equal(r1, r2)
            np.testing.assert_array_equal(g1.gamma, g2.gamma)
