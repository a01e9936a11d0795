import numpy as np
import pytest
from numpy.testing import assert_allclose, assert_array_equal

from hetmed.core_model import ThetaParams, dataset_from_arrays
from hetmed.errors import InvalidConfig, Underdetermined
from hetmed.inference import (
    estimate_covariance,
    select_and_refit,
    split_inference,
    wald_ci,
    wald_effects,
    _stratified_half_split,
)
from hetmed.mediation import caie
from hetmed.simulation import DgpConfig, generate
from hetmed.solvers import SolverOptions
from hetmed.stacker import phi_pair_from_stacked, stack_model, theta_from_fits
from hetmed.solvers import fit_ols

from conftest import random_dataset, random_theta
from oracles import qx_block_limit


def fit_theta_ols(d):
    fm = fit_ols(stack_model(d, "mediator"))
    fo = fit_ols(stack_model(d, "outcome"))
    return theta_from_fits(
        phi_pair_from_stacked(fm.phi, d.p), phi_pair_from_stacked(fo.phi, d.p + 1)
    )


class TestEstimateCovariance:
    def test_noiseless_residual_variances_zero(self):
        # Exactly zero mediator noise would make [Z U M V] singular (M in
        # span(Z,U)), violating the full-rank precondition; a vanishing
        # mediator disturbance plus an exactly noiseless outcome equation
        # demonstrates the zero-residual limit within that precondition.
        n, p = 60, 3
        rng = np.random.default_rng(1)
        theta = random_theta(p, seed=1)
        z = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
        t = rng.choice([-1.0, 1.0], n)
        m = z @ theta.alpha0 + t * (z @ theta.alpha1) + 1e-3 * rng.standard_normal(n)
        y = z @ theta.gamma0 + t * (z @ theta.gamma1) + theta.beta0 * m + theta.beta1 * t * m
        d = dataset_from_arrays(z, t, m, y)
        cov = estimate_covariance(d, theta)
        assert cov.sigma_y2 <= 1e-20  # zero residuals up to float rounding
        assert cov.sigma_m2 <= 1e-5

    def test_duplication_leaves_qx_unchanged(self):
        d, theta = random_dataset(n=50, p=3, seed=2)
        d2 = dataset_from_arrays(
            np.vstack([d.z, d.z]),
            np.concatenate([d.t, d.t]),
            np.concatenate([d.m, d.m]),
            np.concatenate([d.y, d.y]),
        )
        c1 = estimate_covariance(d, theta)
        c2 = estimate_covariance(d2, theta)
        assert_allclose(np.linalg.inv(c1.qx_inv), np.linalg.inv(c2.qx_inv), rtol=1e-8)

    def test_symmetry_and_positive_definite(self):
        d, theta = random_dataset(n=80, p=4, seed=3)
        cov = estimate_covariance(d, theta)
        assert np.max(np.abs(cov.qx_inv - cov.qx_inv.T)) <= 1e-10
        assert np.linalg.eigvalsh(cov.qx_inv)[0] > 0.0

    def test_underdetermined(self):
        d, theta = random_dataset(n=9, p=4, seed=4)
        with pytest.raises(Underdetermined):
            estimate_covariance(d, theta)

    def test_block_limit_oracle_moderate_n(self):
        # smaller-n version of the block-construction check; the acceptance
        # suite runs the n=10,000 variant at the stated 0.1 tolerance
        cfg = DgpConfig(n=4000, p=8, n_continuous=4, n_binary=4, seed=5)
        d, theta_star, _ = generate(cfg)
        theta = fit_theta_ols(d)
        cov = estimate_covariance(d, theta)
        qx = np.linalg.inv(cov.qx_inv)
        pi1 = float(np.mean(d.t))
        oracle = qx_block_limit(
            d.z, (pi1, 1.0, pi1, 1.0), theta_star.alpha0, theta_star.alpha1, 0.25
        )
        rel = np.linalg.norm(qx - oracle) / np.linalg.norm(oracle)
        assert rel <= 0.15


class TestWaldCI:
    def test_zero_gradient_zero_se(self):
        p = 3
        theta = ThetaParams(
            alpha0=np.array([1.0, 0.2, -0.3]),
            alpha1=np.zeros(p),
            gamma0=np.zeros(p),
            gamma1=np.array([0.5, 0.0, 0.0]),
            beta0=0.0,
            beta1=0.0,
        )
        d, _ = random_dataset(n=60, p=p, seed=6)
        cov = estimate_covariance(d, theta)
        res = wald_ci(theta, cov, d.z[0], 1)
        assert res.caie == 0.0
        assert res.caie_se == 0.0

    def test_duplication_scales_se(self):
        # doubling the data by duplication halves the variance (up to the
        # finite-sample denominator correction, so a loose tolerance)
        d, theta = random_dataset(n=400, p=3, seed=7)
        theta_hat = fit_theta_ols(d)
        d2 = dataset_from_arrays(
            np.vstack([d.z, d.z]),
            np.concatenate([d.t, d.t]),
            np.concatenate([d.m, d.m]),
            np.concatenate([d.y, d.y]),
        )
        c1 = estimate_covariance(d, theta_hat)
        c2 = estimate_covariance(d2, theta_hat)
        r1 = wald_ci(theta_hat, c1, d.z[0], 1)
        r2 = wald_ci(theta_hat, c2, d.z[0], 1)
        assert_allclose(r2.caie_se / r1.caie_se, 1.0 / np.sqrt(2.0), rtol=0.02)
        assert_allclose(r2.cade_se / r1.cade_se, 1.0 / np.sqrt(2.0), rtol=0.02)

    def test_ci_contains_estimate_and_level_order(self):
        d, _ = random_dataset(n=100, p=4, seed=8)
        theta_hat = fit_theta_ols(d)
        cov = estimate_covariance(d, theta_hat)
        narrow = wald_ci(theta_hat, cov, d.z[3], 1, level=0.5)
        wide = wald_ci(theta_hat, cov, d.z[3], 1, level=0.99)
        assert narrow.caie_ci[0] <= narrow.caie <= narrow.caie_ci[1]
        assert wide.caie_ci[1] - wide.caie_ci[0] > narrow.caie_ci[1] - narrow.caie_ci[0]

    def test_vectorized_matches_single(self):
        d, _ = random_dataset(n=90, p=3, seed=9)
        theta_hat = fit_theta_ols(d)
        cov = estimate_covariance(d, theta_hat)
        w = wald_effects(theta_hat, cov, d.z[:5], -1, 0.9)
        for i in range(5):
            single = wald_ci(theta_hat, cov, d.z[i], -1, 0.9)
            assert_allclose(w.caie[i], single.caie)
            assert_allclose(w.caie_se[i], single.caie_se)
            assert_allclose(w.cade_hi[i], single.cade_ci[1])

    def test_variance_nonnegative_psd(self):
        d, _ = random_dataset(n=120, p=4, seed=10)
        theta_hat = fit_theta_ols(d)
        cov = estimate_covariance(d, theta_hat)
        w = wald_effects(theta_hat, cov, d.z, 1)
        assert np.all(w.caie_se >= 0.0)
        assert np.all(w.cade_se >= 0.0)
        # the Kronecker sandwich itself is symmetric PSD
        sandwich = np.kron(np.diag([cov.sigma_m2, cov.sigma_y2]), cov.qx_inv)
        assert np.max(np.abs(sandwich - sandwich.T)) <= 1e-10
        assert np.linalg.eigvalsh(sandwich)[0] >= -1e-12

    def test_width_shrinks_like_root_n(self):
        widths = {}
        for n in (200, 1000, 2000):
            cfg = DgpConfig(n=n, p=6, n_continuous=3, n_binary=3, seed=11)
            d, _, _ = generate(cfg)
            theta_hat = fit_theta_ols(d)
            cov = estimate_covariance(d, theta_hat)
            w = wald_effects(theta_hat, cov, d.z[:50], 1)
            widths[n] = float(np.median(w.caie_hi - w.caie_lo))
        for a, b in ((200, 1000), (1000, 2000)):
            ratio = widths[a] / widths[b]
            assert abs(ratio - np.sqrt(b / a)) <= 0.2 * np.sqrt(b / a)


class TestSplitInference:
    def make_data(self, n=120, p=6, seed=0):
        cfg = DgpConfig(n=n, p=p, n_continuous=p - p // 2, n_binary=p // 2, sparsity=0.5, seed=seed)
        return generate(cfg)

    def test_deterministic(self):
        d, _, _ = self.make_data()
        a = split_inference(d, B=4, seed=3, opts=SolverOptions(grid_size=15))
        b = split_inference(d, B=4, seed=3, opts=SolverOptions(grid_size=15))
        assert_array_equal(a.caie_draws, b.caie_draws)
        assert_array_equal(a.caie_lo, b.caie_lo)
        assert_array_equal(a.selection_frequency, b.selection_frequency)

    def test_identical_subseeds_degenerate(self):
        d, _, _ = self.make_data(seed=1)
        si = split_inference(
            d, B=2, seed=0, opts=SolverOptions(grid_size=12), split_seeds=[(7, 7), (7, 7)]
        )
        assert_array_equal(si.caie_draws[0], si.caie_draws[1])
        assert_allclose(si.caie_hi - si.caie_lo, 0.0)

    def test_point_estimate_within_draw_range(self):
        d, _, _ = self.make_data(seed=2)
        si = split_inference(d, B=6, seed=9, opts=SolverOptions(grid_size=12))
        assert np.all(si.caie_est >= si.caie_draws.min(axis=0) - 1e-12)
        assert np.all(si.caie_est <= si.caie_draws.max(axis=0) + 1e-12)
        assert np.all(si.caie_lo <= si.caie_hi)

    def test_stratified_split_keeps_arms(self):
        d, _, _ = self.make_data(seed=3)
        rng = np.random.default_rng(0)
        for _ in range(10):
            first, second = _stratified_half_split(d, rng)
            assert set(np.sign(d.t[first])) == {-1.0, 1.0}
            assert set(np.sign(d.t[second])) == {-1.0, 1.0}
            assert len(np.intersect1d(first, second)) == 0
            assert len(first) + len(second) == d.n
            assert len(first) >= len(second)

    def test_validation_errors(self):
        d, _, _ = self.make_data()
        with pytest.raises(InvalidConfig):
            split_inference(d, B=1, seed=0)
        small, _ = random_dataset(n=6, p=2, seed=0)
        with pytest.raises(InvalidConfig):
            split_inference(small, B=2, seed=0)

    def test_parallel_equals_serial(self):
        # results are a function of (d, B, seed, opts) only, not scheduling
        d, _, _ = self.make_data(seed=5)
        serial = split_inference(d, B=4, seed=6, opts=SolverOptions(grid_size=12), n_jobs=1)
        parallel = split_inference(d, B=4, seed=6, opts=SolverOptions(grid_size=12), n_jobs=2)
        assert_array_equal(serial.caie_draws, parallel.caie_draws)
        assert_array_equal(serial.cade_hi, parallel.cade_hi)

    def test_noiseless_recovery_sparse_truth(self):
        # ground-truth oracle: near-noiseless sparse signal, median of the
        # aggregated per-unit effects close to truth for nearly all units
        n, p = 1000, 20
        rng = np.random.default_rng(33)
        z = np.column_stack([np.ones(n), rng.standard_normal((n, p - 1))])
        t = rng.choice([-1.0, 1.0], n)
        alpha0 = np.zeros(p)
        alpha1 = np.zeros(p)
        gamma0 = np.zeros(p)
        gamma1 = np.zeros(p)
        alpha0[[0, 2]] = [1.0, 1.2]
        alpha1[[0, 3]] = [0.5, 0.9]
        gamma0[[0, 4]] = [0.7, 1.1]
        gamma1[[0, 5]] = [0.4, 0.8]
        theta_star = ThetaParams(
            alpha0=alpha0, alpha1=alpha1, gamma0=gamma0, gamma1=gamma1, beta0=1.0, beta1=0.5
        )
        m = z @ alpha0 + t * (z @ alpha1) + 1e-3 * rng.standard_normal(n)
        y = (
            z @ gamma0
            + t * (z @ gamma1)
            + 1.0 * m
            + 0.5 * t * m
            + 1e-3 * rng.standard_normal(n)
        )
        d = dataset_from_arrays(z, t, m, y)
        si = split_inference(d, B=8, seed=5, opts=SolverOptions(grid_size=20))
        truth = caie(theta_star, z, 1)
        close = np.abs(si.caie_est - truth) <= 0.05
        assert np.mean(close) >= 0.95

    def test_selection_frequency_separates_signal(self):
        cfg = DgpConfig(n=600, p=20, n_continuous=10, n_binary=10, sparsity=0.8, seed=21)
        d, theta_star, _ = generate(cfg)
        si = split_inference(d, B=12, seed=4, opts=SolverOptions(grid_size=20))
        signal = (
            (np.abs(theta_star.alpha0) > 0)
            | (np.abs(theta_star.alpha1) > 0)
            | (np.abs(theta_star.gamma0) > 0)
            | (np.abs(theta_star.gamma1) > 0)
        )
        signal[0] = False  # intercept always kept
        null_freqs = si.selection_frequency[1:][~signal[1:]]
        sig_freqs = si.selection_frequency[1:][signal[1:]]
        assert np.all(sig_freqs >= np.median(null_freqs))


def test_select_and_refit_full_length_embedding():
    cfg = DgpConfig(n=300, p=10, n_continuous=5, n_binary=5, sparsity=0.6, seed=8)
    d, theta_star, _ = generate(cfg)
    theta, selected = select_and_refit(d, d, SolverOptions(grid_size=15))
    assert theta.p == d.p
    assert selected.shape == (d.p,)
    assert selected[0]
    # coefficients vanish off the selected support
    assert np.all(theta.alpha0[~selected] == 0.0)
    assert np.all(theta.gamma1[~selected] == 0.0)
