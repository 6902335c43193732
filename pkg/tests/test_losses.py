import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from trajclone import losses as L
from trajclone.network import Normalizer


def random_gmm(rng, k=None, d=None):
    k = k or int(rng.integers(1, 4))
    d = d or int(rng.integers(1, 5))
    return L.GmmParams(rng.standard_normal(k), rng.standard_normal((k, d)),
                       rng.uniform(-2, 2, (k, d)))


class TestGmmNll:
    def test_single_gaussian_reduction(self):
        # K=1, unit variance: loss is 0.5*||y-mu||^2 + (D/2) log 2pi
        rng = np.random.default_rng(0)
        for _ in range(10):
            d = int(rng.integers(1, 6))
            mu = rng.standard_normal(d)
            y = rng.standard_normal(d)
            params = L.GmmParams(np.zeros(1), mu[None, :], np.zeros((1, d)))
            loss, grad = L.gmm_nll(params, y)
            expected = 0.5 * np.sum((y - mu) ** 2) + 0.5 * d * math.log(2 * math.pi)
            assert loss == pytest.approx(expected, abs=1e-12)
            assert grad.mu[0] == pytest.approx(mu - y, abs=1e-12)
            assert grad.log_pi[0] == pytest.approx(0.0, abs=1e-12)

    def test_symmetric_modes_zero_logit_gradient(self):
        m = np.array([1.7])
        params = L.GmmParams(np.zeros(2), np.stack([m, -m]), np.zeros((2, 1)))
        _, grad = L.gmm_nll(params, np.zeros(1))
        assert grad.log_pi == pytest.approx(np.zeros(2), abs=1e-14)

    def test_direct_density_oracle(self):
        import mpmath as mp

        mp.mp.dps = 50
        rng = np.random.default_rng(1)
        for _ in range(40):
            params = random_gmm(rng, k=2, d=3)
            y = rng.standard_normal(3)
            loss, _ = L.gmm_nll(params, y)
            logits = [mp.mpf(v) for v in params.log_pi]
            z = mp.fsum(mp.e**l for l in logits)
            density = mp.mpf(0)
            for i in range(2):
                comp = mp.e**logits[i] / z
                for j in range(3):
                    var = mp.e**mp.mpf(params.log_var[i, j])
                    diff = mp.mpf(y[j]) - mp.mpf(params.mu[i, j])
                    comp *= mp.e**(-diff**2 / (2 * var)) / mp.sqrt(2 * mp.pi * var)
                density += comp
            oracle = float(-mp.log(density))
            assert abs(loss - oracle) <= 1e-10 * max(1.0, abs(oracle))

    def test_extreme_log_var_stays_finite(self):
        for lv in (-30.0, 30.0):
            params = L.GmmParams(np.zeros(2), np.zeros((2, 4)),
                                 np.full((2, 4), lv))
            loss, grad = L.gmm_nll(params, np.ones(4))
            assert math.isfinite(loss)
            assert np.all(np.isfinite(grad.to_raw()))

    def test_mode_permutation_invariance(self):
        rng = np.random.default_rng(2)
        for _ in range(10):
            params = random_gmm(rng, k=3, d=2)
            y = rng.standard_normal(2)
            loss, _ = L.gmm_nll(params, y)
            perm = rng.permutation(3)
            loss_p, _ = L.gmm_nll(L.GmmParams(
                params.log_pi[perm], params.mu[perm], params.log_var[perm]), y)
            assert loss_p == pytest.approx(loss, abs=1e-12)

    def test_gradient_matches_finite_differences(self):
        rng = np.random.default_rng(3)
        h = 1e-6
        for _ in range(50):
            k = int(rng.integers(1, 4))
            d = int(rng.integers(1, 5))
            params = random_gmm(rng, k=k, d=d)
            y = rng.standard_normal(d)
            raw = params.to_raw()
            _, grad = L.gmm_nll(params, y)
            g = grad.to_raw()
            fd = np.empty_like(raw)
            for j in range(raw.size):
                up = raw.copy(); up[j] += h
                dn = raw.copy(); dn[j] -= h
                lu, _ = L.gmm_nll(L.GmmParams.from_raw(up, k, d), y)
                ld, _ = L.gmm_nll(L.GmmParams.from_raw(dn, k, d), y)
                fd[j] = (lu - ld) / (2 * h)
            denom = np.maximum(np.abs(fd), 1.0)
            assert np.max(np.abs(g - fd) / denom) < 1e-4

    def test_batch_matches_single(self):
        rng = np.random.default_rng(4)
        k, d = 2, 3
        raws = np.stack([random_gmm(rng, k, d).to_raw() for _ in range(6)])
        ys = rng.standard_normal((6, d))
        losses, grads = L.gmm_nll_batch(raws, ys, k, d)
        for i in range(6):
            li, gi = L.gmm_nll(L.GmmParams.from_raw(raws[i], k, d), ys[i])
            assert losses[i] == pytest.approx(li, abs=1e-14)
            assert grads[i] == pytest.approx(gi.to_raw(), abs=1e-14)


class TestSigmaFreeze:
    def test_frozen_epochs(self):
        rng = np.random.default_rng(5)
        k, d = 2, 3
        g = rng.standard_normal((4, k * (1 + 2 * d)))
        out = L.sigma_freeze(g, epoch=0, freeze_epochs=5, k_modes=k, d_target=d)
        assert np.all(out[:, k + k * d:] == 0.0)
        assert np.array_equal(out[:, :k + k * d], g[:, :k + k * d])

    def test_boundary_epoch_open(self):
        g = np.ones((2, 2 * 7))
        out = L.sigma_freeze(g, epoch=5, freeze_epochs=5, k_modes=2, d_target=3)
        assert np.array_equal(out, g)

    def test_zero_freeze_is_identity(self):
        g = np.ones(14)
        out = L.sigma_freeze(g, epoch=0, freeze_epochs=0, k_modes=2, d_target=3)
        assert np.array_equal(out, g)


class TestSelectTrajectory:
    def test_argmax_mode(self):
        params = L.GmmParams(np.log([0.7, 0.3]),
                             np.array([[1.0, 2.0], [3.0, 4.0]]),
                             np.zeros((2, 2)))
        traj = L.select_trajectory(params)
        assert traj == pytest.approx(np.array([[1.0, 2.0]]))

    def test_tie_breaks_to_lowest_index(self):
        params = L.GmmParams(np.zeros(2), np.array([[1.0, 2.0], [3.0, 4.0]]),
                             np.zeros((2, 2)))
        assert L.select_trajectory(params) == pytest.approx(np.array([[1.0, 2.0]]))

    def test_logit_shift_invariance(self):
        rng = np.random.default_rng(6)
        params = random_gmm(rng, k=3, d=4)
        shifted = L.GmmParams(params.log_pi + 123.0, params.mu, params.log_var)
        assert np.array_equal(L.select_trajectory(params),
                              L.select_trajectory(shifted))

    def test_inverse_normalization(self):
        params = L.GmmParams(np.array([0.0]), np.array([[1.0, -1.0]]),
                             np.zeros((1, 2)))
        nz = Normalizer(np.array([10.0, 20.0]), np.array([2.0, 4.0]))
        traj = L.select_trajectory(params, nz)
        assert traj == pytest.approx(np.array([[12.0, 16.0]]))


def brute_cvar(values, alpha):
    ordered = sorted(float(v) for v in values)
    n = len(ordered)
    k = math.ceil(alpha * n)
    if k == 0:
        return sum(ordered) / n
    nu = ordered[k - 1]
    tail = [v for v in ordered if v > nu]
    if not tail:
        tail = ordered[n - math.ceil((1 - alpha) * n):]
    return sum(tail) / len(tail)


class TestCvar:
    def test_deciles_example(self):
        losses = np.arange(1.0, 11.0)
        assert L.cvar_estimate(losses, 0.9) == 10.0

    def test_alpha_zero_is_exact_mean(self):
        rng = np.random.default_rng(7)
        v = rng.standard_normal(137)
        assert L.cvar_estimate(v, 0.0) == float(np.mean(v))

    def test_all_equal(self):
        assert L.cvar_estimate(np.full(50, 3.25), 0.9) == 3.25

    def test_brute_force_oracle(self):
        rng = np.random.default_rng(8)
        for case in range(300):
            n = int(rng.integers(1, 500))
            if case % 3 == 0:
                v = rng.integers(0, 5, n).astype(float)  # ties
            else:
                v = rng.standard_normal(n) * rng.uniform(0.1, 10)
            alpha = float(rng.uniform(0, 0.99))
            assert L.cvar_estimate(v, alpha) == pytest.approx(
                brute_cvar(v, alpha), rel=1e-12)

    def test_mask_consistency(self):
        rng = np.random.default_rng(9)
        for _ in range(100):
            v = rng.standard_normal(int(rng.integers(20, 200)))
            alpha = float(rng.uniform(0, 0.9))
            mask = L.cvar_batch_mask(v, alpha)
            assert float(np.mean(v[mask])) == L.cvar_estimate(v, alpha)

    def test_mask_example_and_alpha_zero(self):
        v = np.arange(1.0, 11.0)
        mask = L.cvar_batch_mask(v, 0.9)
        assert mask.sum() == 1 and mask[-1]
        assert L.cvar_batch_mask(v, 0.0).all()

    def test_small_batch_rejected(self):
        with pytest.raises(ValueError, match="at least 10"):
            L.cvar_batch_mask(np.ones(5), 0.9)

    def test_percentile_curve(self):
        flat = L.cvar_percentile_curve(np.full(100, 2.0))
        assert all(v == 2.0 for _, v in flat)
        curve = dict(L.cvar_percentile_curve(np.arange(1.0, 101.0)))
        assert curve[90] == pytest.approx(95.5)
        assert curve[0] == pytest.approx(50.5)

    @given(st.lists(st.floats(-1e6, 1e6), min_size=1, max_size=300))
    @settings(max_examples=100)
    def test_percentile_curve_monotone(self, values):
        curve = [v for _, v in L.cvar_percentile_curve(np.asarray(values))]
        for a, b in zip(curve, curve[1:]):
            assert b >= a - 1e-9 * max(1.0, abs(a))


class TestMultitask:
    def test_zero_aux_weight(self):
        w = L.MultiTaskWeights(1.0, 0.0)
        assert L.multitask_loss(2.5, 99.0, w) == 2.5

    def test_unit_weights(self):
        assert L.multitask_loss(2.0, 3.0, L.MultiTaskWeights(1.0, 1.0)) == 5.0

    def test_invalid_weights(self):
        with pytest.raises(ValueError):
            L.MultiTaskWeights(0.0, 1.0)
        with pytest.raises(ValueError):
            L.MultiTaskWeights(1.0, -0.1)


class TestCvarGradientMc:
    def test_alpha_zero_reduction(self):
        report = L.mc_verify_cvar_gradient(2, 0.0, 50_000, seed=0)
        assert report["relative_error"] < 1e-6  # quadratic: central FD is exact

    def test_tail_gradient_small_n(self):
        report = L.mc_verify_cvar_gradient(1, 0.9, 200_000, seed=1)
        assert report["relative_error"] < 0.01

    def test_stationary_point(self):
        # damped fixed-point iteration on the estimator finds a CVaR minimum,
        # where the estimator norm must vanish
        rng = np.random.default_rng(2)
        z = rng.standard_normal((100_000, 1))
        theta = np.array([0.5])
        for _ in range(400):
            diff = theta[None, :] - z
            losses = 0.5 * (diff * diff).sum(axis=1)
            mask = L.cvar_batch_mask(losses, 0.9)
            grad = diff[mask].mean(axis=0)
            theta = theta - 0.2 * grad
        assert abs(grad[0]) < 1e-2
