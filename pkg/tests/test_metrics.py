import numpy as np
import pytest

from tiltboost.dynamics import make_rng
from tiltboost.metrics import (
    MetricsError,
    autocorrelation,
    hypercube_states,
    importance_sampling,
    integrated_autocorrelation_time,
    ising_bruteforce,
    per_site_iat,
    sliced_wasserstein,
    state_indices,
    tv_distance,
    tv_sampling_floor,
)
from tiltboost.priors import HypercubePrior
from tiltboost.spectral import QuadraticTilt


class TestSlicedWasserstein:
    def test_identical_batches_zero(self):
        x = make_rng(0).standard_normal((500, 3))
        assert sliced_wasserstein(x, x.copy(), seed=1) < 1e-12

    def test_translated_gaussians_1d(self):
        # 1-D translated samples: SW -> |m| (projections are +-1)
        r = make_rng(1)
        m = 0.8
        x = r.standard_normal((40000, 1))
        y = r.standard_normal((40000, 1)) + m
        assert sliced_wasserstein(x, y, seed=2) == pytest.approx(m, abs=0.02)

    def test_translation_per_projection(self):
        # per-projection distance of X vs X + c equals |<theta, c>| exactly
        r = make_rng(2)
        x = r.standard_normal((300, 4))
        c = np.array([1.0, -2.0, 0.5, 0.0])
        dirs = make_rng(7).standard_normal((64, 4))
        dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
        expected = np.abs(dirs @ c).mean()
        got = sliced_wasserstein(x, x + c, n_proj=64, seed=7)
        assert got == pytest.approx(expected, rel=1e-10)

    def test_unequal_sizes_exact_coupling(self):
        # against a brute-force integral of the two step quantile functions
        a = np.sort(make_rng(3).standard_normal(7))
        b = np.sort(make_rng(4).standard_normal(12))
        u = (np.arange(100000) + 0.5) / 100000
        qa = a[np.minimum((u * 7).astype(int), 6)]
        qb = b[np.minimum((u * 12).astype(int), 11)]
        brute = np.sqrt(np.mean((qa - qb) ** 2))
        got = sliced_wasserstein(a[:, None], b[:, None], n_proj=1, seed=0)
        # the single random projection in 1-D is +-1; either sign matches
        assert got == pytest.approx(brute, abs=1e-4)

    def test_symmetry_and_triangle(self):
        r = make_rng(5)
        x, y, z = (r.standard_normal((80, 3)) + shift for shift in (0.0, 0.5, 1.5))
        sxy = sliced_wasserstein(x, y, seed=9)
        syx = sliced_wasserstein(y, x, seed=9)
        assert abs(sxy - syx) < 1e-10
        sxz = sliced_wasserstein(x, z, seed=9)
        syz = sliced_wasserstein(y, z, seed=9)
        assert sxz <= sxy + syz + 1e-12

    def test_determinism_and_dimension_check(self):
        x = make_rng(6).standard_normal((50, 2))
        y = make_rng(7).standard_normal((60, 2))
        assert sliced_wasserstein(x, y, seed=3) == sliced_wasserstein(x, y, seed=3)
        with pytest.raises(MetricsError):
            sliced_wasserstein(x, make_rng(8).standard_normal((50, 3)))


class TestAutocorrelation:
    def test_iid_noise_is_white(self):
        x = make_rng(10).standard_normal(20000)
        series = autocorrelation(x, max_lag=50)
        assert series.acf[0] == 1.0
        assert np.abs(series.acf[1:]).max() < 3.5 / np.sqrt(20000) * 3
        assert series.iat == pytest.approx(0.5, abs=0.05)

    def test_ar1_analytic(self):
        rho = 0.9
        r = make_rng(11)
        n = 200000
        x = np.empty(n)
        x[0] = 0.0
        noise = r.standard_normal(n)
        for i in range(1, n):
            x[i] = rho * x[i - 1] + noise[i]
        series = autocorrelation(x, max_lag=60)
        lags = np.arange(20)
        assert np.allclose(series.acf[:20], rho**lags, atol=0.03)
        # IAT of AR(1): 1/2 + sum rho^k = 1/2 + rho/(1-rho)
        assert series.iat == pytest.approx(0.5 + rho / (1 - rho), rel=0.15)

    def test_site_averaging(self):
        r = make_rng(12)
        x = r.standard_normal((5000, 4))
        series = autocorrelation(x, max_lag=20)
        assert series.acf.shape == (21,)
        assert per_site_iat(x, 20).shape == (4,)

    def test_constant_trace_rejected(self):
        with pytest.raises(MetricsError):
            autocorrelation(np.ones(1000), max_lag=10)

    def test_short_trace_rejected(self):
        with pytest.raises(MetricsError):
            autocorrelation(make_rng(13).standard_normal(99), max_lag=10)

    def test_iat_floor(self):
        # strongly negative lag-1 correlation cannot push IAT below 1/2
        acf = np.array([1.0, -0.4, 0.1, 0.0])
        assert integrated_autocorrelation_time(acf) >= 0.5


class TestImportanceSampling:
    def test_zero_tilt_ess_is_n(self):
        x = make_rng(14).standard_normal((1000, 3))
        tilt = QuadraticTilt(eigvecs=np.eye(3), q=np.zeros(3), xi=np.zeros(3))
        est, ess = importance_sampling(x, tilt)
        assert ess == pytest.approx(1000.0)
        assert np.allclose(est, x.mean(axis=0))

    def test_ess_bounds(self):
        r = make_rng(15)
        x = r.standard_normal((500, 2))
        tilt = QuadraticTilt(eigvecs=np.eye(2), q=np.array([3.0, 1.0]),
                             xi=np.array([0.5, -0.2]))
        _, ess = importance_sampling(x, tilt)
        assert 1.0 <= ess <= 500.0

    def test_estimate_matches_direct_computation(self):
        r = make_rng(16)
        x = r.standard_normal((2000, 1))
        tilt = QuadraticTilt(eigvecs=np.eye(1), q=np.array([1.0]), xi=np.array([0.7]))
        w = np.exp(-0.5 * x[:, 0] ** 2 + 0.7 * x[:, 0])
        direct = (w * x[:, 0] ** 2).sum() / w.sum()
        est, _ = importance_sampling(x, tilt, f=lambda z: z[:, 0] ** 2)
        assert est == pytest.approx(direct, rel=1e-10)


class TestIsingOracles:
    def test_uniform_when_no_tilt(self):
        table = ising_bruteforce(np.zeros((3, 3)), np.zeros(3))
        assert np.allclose(table.probs, 1 / 8)
        assert abs(table.probs.sum() - 1.0) < 1e-12

    def test_single_spin_field(self):
        h = 0.8
        table = ising_bruteforce(np.zeros((1, 1)), np.array([h]))
        p_plus = np.exp(h) / (np.exp(h) + np.exp(-h))
        idx_plus = state_indices(np.array([[1.0]]))[0]
        assert table.probs[idx_plus] == pytest.approx(p_plus, rel=1e-12)

    def test_two_spin_hand_enumeration(self):
        # ferromagnetic pair: energies -J s1 s2 summed by hand over 4 states
        J = 0.6
        Q = np.array([[0.0, -J], [-J, 0.0]])  # -1/2 s^T Q s = J s1 s2
        table = ising_bruteforce(Q, np.zeros(2))
        z = 2 * np.exp(J) + 2 * np.exp(-J)
        aligned = np.exp(J) / z
        for state, prob in zip(table.states, table.probs):
            expect = aligned if state[0] == state[1] else np.exp(-J) / z
            assert prob == pytest.approx(expect, rel=1e-12)
        assert table.mean == pytest.approx([0.0, 0.0], abs=1e-15)
        assert table.cov[0, 1] == pytest.approx(np.tanh(J), rel=1e-12)

    def test_global_flip_invariance(self):
        r = make_rng(17)
        Q = r.standard_normal((4, 4))
        Q = (Q + Q.T) / 2
        table = ising_bruteforce(Q, np.zeros(4))
        flipped = state_indices(-table.states)
        assert np.allclose(table.probs, table.probs[flipped])

    def test_states_match_corner_enumeration(self):
        assert np.array_equal(hypercube_states(4), HypercubePrior(4, 0.1).corners())

    def test_dimension_guard(self):
        with pytest.raises(MetricsError):
            ising_bruteforce(np.zeros((16, 16)), np.zeros(16))


class TestTvDistance:
    def test_exact_sampler_noise_floor(self):
        table = ising_bruteforce(np.zeros((6, 6)), np.zeros(6))
        r = make_rng(18)
        n = 200000
        idx = r.choice(64, size=n, p=table.probs)
        samples = table.states[idx]
        tv = tv_distance(samples, table)
        assert tv < tv_sampling_floor(6, n)

    def test_skewed_table_direct(self):
        table = ising_bruteforce(np.zeros((2, 2)), np.array([1.0, 0.0]))
        samples = np.array([[1.0, 1.0], [1.0, -1.0], [-1.0, 1.0], [-1.0, -1.0]])
        emp = np.full(4, 0.25)
        direct = 0.5 * np.abs(emp - table.probs).sum()
        assert tv_distance(samples, table) == pytest.approx(direct, rel=1e-12)
