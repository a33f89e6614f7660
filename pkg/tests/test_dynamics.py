import numpy as np
import pytest

from tiltboost.dynamics import (
    DynamicsError,
    SampleBatch,
    SdeConfig,
    langevin,
    langevin_trace,
    make_rng,
    probability_flow,
    reverse_sde,
    thermalize,
)
from tiltboost.experiments import sample_posterior_analytic, tilted_logdensity
from tiltboost.priors import (
    HEAT,
    OU,
    GaussianMixturePrior,
    gmm_posterior_analytic,
)
from tiltboost.spectral import build_measurement, posterior_tilt
from tiltboost.tilt import solve_tilt, working_time
from tiltboost import metrics


def gaussian_prior(d, mean=0.0, delta=1.0):
    return GaussianMixturePrior(np.full((1, d), mean), np.ones(1), delta)


def gaussian_problem(seed=0, d=3):
    rng = make_rng(seed)
    prior = gaussian_prior(d, mean=0.7)
    A = rng.standard_normal((d, d))
    sigma = 0.9
    y = A @ prior.as_diag_gmm().sample(1, rng)[0] + sigma * rng.standard_normal(d)
    return prior, build_measurement(A, sigma, y)


class TestSdeConfig:
    def test_grid_endpoints(self):
        cfg = SdeConfig(n_steps=50, t_start=1.0, t_end=0.2, grid="geometric")
        ts = cfg.times()
        assert ts[0] == 1.0 and ts[-1] == 0.2
        assert len(ts) == 51
        assert np.all(np.diff(ts) < 0)

    def test_geometric_clusters_near_end(self):
        ts = SdeConfig(n_steps=100, t_start=1.0, t_end=0.0, grid="geometric").times()
        steps = -np.diff(ts)
        assert steps[-1] < steps[0] / 100

    def test_validation(self):
        with pytest.raises(DynamicsError):
            SdeConfig(n_steps=10, t_start=0.1, t_end=0.5)
        with pytest.raises(DynamicsError):
            SdeConfig(n_steps=10, t_start=0.5, t_end=0.0, grid="weird")


class TestReverseSde:
    def test_zero_steps_identity(self):
        prior = gaussian_prior(2)
        start = SampleBatch(make_rng(0).standard_normal((5, 2)))
        out = reverse_sde(prior, start, SdeConfig(n_steps=0, t_start=0.3, t_end=0.3), OU)
        assert np.array_equal(out.samples, start.samples)

    def test_gaussian_reversal_moments(self):
        # start from the stationary standard Gaussian at large t and reverse:
        # the output must be the prior N(0, I)
        prior = gaussian_prior(3, mean=0.0, delta=1.0)
        n = 20000
        start = SampleBatch(make_rng(1).standard_normal((n, 3)))
        out = reverse_sde(prior, start, SdeConfig(n_steps=400, t_start=3.0, seed=2), OU)
        assert np.abs(out.samples.mean(axis=0)).max() < 3.5 / np.sqrt(n)
        assert np.abs(np.cov(out.samples.T) - np.eye(3)).max() < 0.05

    def test_determinism(self):
        prior, model = gaussian_problem(3)
        t = working_time(model, OU)
        start = SampleBatch(make_rng(4).standard_normal((50, 3)))
        cfg = SdeConfig(n_steps=60, t_start=t, seed=77)
        a = reverse_sde(prior, start, cfg, OU)
        b = reverse_sde(prior, start, cfg, OU)
        assert np.array_equal(a.samples, b.samples)

    def test_marginal_checkpoint_matches_analytic_law(self):
        # stopping the reverse integration at s gives the analytic tilted law
        prior = GaussianMixturePrior(np.array([[1.5], [-1.5]]), np.array([0.5, 0.5]), 0.1)
        model = build_measurement(np.eye(1), 1.0, np.array([0.8]))
        t = working_time(model, OU)
        s = t / 2
        n = 8000
        start = SampleBatch(
            gmm_posterior_analytic(prior, solve_tilt(model, t, OU).base, t, OU)
            .sample(n, make_rng(5)))
        mid = reverse_sde(prior, start, SdeConfig(n_steps=600, t_start=t, t_end=s, seed=6), OU)
        ref = gmm_posterior_analytic(prior, solve_tilt(model, s, OU).base, s, OU) \
            .sample(n, make_rng(7))
        assert metrics.sliced_wasserstein(mid.samples, ref, seed=8) < 0.05

    def test_divergence_policy(self):
        class BadPrior(gaussian_prior(1).__class__):
            def score_t(self, x, t, semigroup=OU):
                s = super().score_t(x, t, semigroup)
                s[x[:, 0] > 6.0] = np.nan
                return s

        prior = BadPrior(np.zeros((1, 1)), np.ones(1), 1.0)
        start = SampleBatch(np.array([[0.0], [7.0]]))
        out = reverse_sde(prior, start, SdeConfig(n_steps=20, t_start=0.5, seed=1), OU)
        assert out.meta["diverged"] == 1
        assert out.samples.shape[0] == 1


class TestProbabilityFlow:
    def test_gaussian_end_to_end_moments(self):
        prior, model = gaussian_problem(11)
        t = working_time(model, OU)
        state = solve_tilt(model, t, OU)
        n = 4000
        start = SampleBatch(
            gmm_posterior_analytic(prior, state.base, t, OU).sample(n, make_rng(12)))
        out = probability_flow(prior, start, SdeConfig(n_steps=300, t_start=t, seed=13),
                               tilt_path=lambda s: solve_tilt(model, s, OU), semigroup=OU)
        post = gmm_posterior_analytic(prior, posterior_tilt(model))
        std = np.sqrt(np.diag(post.cov()))
        assert np.all(np.abs(out.samples.mean(axis=0) - post.mean()) < 4 * std / np.sqrt(n))
        rel = np.linalg.norm(np.cov(out.samples.T) - post.cov()) / np.linalg.norm(post.cov())
        assert rel < 0.1

    def test_deterministic_single_particle(self):
        prior, model = gaussian_problem(14)
        t = working_time(model, OU)
        start = SampleBatch(np.ones((1, 3)))
        cfg = SdeConfig(n_steps=50, t_start=t, seed=0)
        path = lambda s: solve_tilt(model, s, OU)
        a = probability_flow(prior, start, cfg, path, OU)
        b = probability_flow(prior, start, cfg, path, OU)
        assert np.array_equal(a.samples, b.samples)

    def test_flow_agrees_with_reverse_sde_on_gmm(self):
        prior = GaussianMixturePrior(np.array([[1.2], [-1.2]]), np.array([0.5, 0.5]), 0.2)
        model = build_measurement(np.eye(1), 1.2, np.array([0.4]))
        t = working_time(model, OU)
        state = solve_tilt(model, t, OU)
        n = 6000
        start = SampleBatch(
            gmm_posterior_analytic(prior, state.base, t, OU).sample(n, make_rng(15)))
        flow = probability_flow(prior, start, SdeConfig(n_steps=250, t_start=t, seed=16),
                                lambda s: solve_tilt(model, s, OU), OU)
        sde = reverse_sde(prior, start, SdeConfig(n_steps=800, t_start=t, seed=17), OU)
        assert metrics.sliced_wasserstein(flow.samples, sde.samples, seed=18) < 0.06


class TestLangevin:
    def test_gaussian_stationarity(self):
        prior = gaussian_prior(1)

        def logdensity(x):
            return -0.5 * (x**2).sum(axis=1), -x

        init = SampleBatch(make_rng(20).standard_normal((4000, 1)))
        out = langevin(logdensity, init, step=0.05, n_steps=400, seed=21)
        n_eff = out.samples.shape[0]
        assert abs(out.samples.mean()) < 3.5 / np.sqrt(n_eff)
        assert abs(out.samples.var() - 1.0) < 0.08

    def test_mala_acceptance_near_one_for_tiny_step(self):
        def logdensity(x):
            return -0.5 * (x**2).sum(axis=1), -x

        init = SampleBatch(make_rng(22).standard_normal((500, 2)))
        out = langevin(logdensity, init, step=1e-6, n_steps=50, seed=23, variant="mala")
        assert out.meta["acceptance_rate"] > 0.999

    def test_mala_matches_target_on_slc_posterior(self):
        prior, model = gaussian_problem(24)
        post = gmm_posterior_analytic(prior, posterior_tilt(model))
        init = SampleBatch(post.mean() + make_rng(25).standard_normal((3000, 3)))
        out = langevin(tilted_logdensity(prior, posterior_tilt(model)), init,
                       step=0.05, n_steps=600, seed=26, variant="mala")
        ref = post.sample(3000, make_rng(27))
        assert metrics.sliced_wasserstein(out.samples, ref, seed=28) < 0.08

    def test_sw_shrinks_with_more_steps(self):
        prior, model = gaussian_problem(29)
        post = gmm_posterior_analytic(prior, posterior_tilt(model))
        ref = post.sample(4000, make_rng(30))
        init = SampleBatch(prior.as_diag_gmm().sample(2000, make_rng(31)))
        ld = tilted_logdensity(prior, posterior_tilt(model))
        sw = [metrics.sliced_wasserstein(
            langevin(ld, init, 0.02, n, seed=32).samples, ref, seed=33)
            for n in (5, 50, 500)]
        assert sw[2] < sw[1] < sw[0]

    def test_trace_deterministic_and_shaped(self):
        grad = lambda x: -x
        tr = langevin_trace(grad, np.zeros((2, 3)), 0.1, 25, seed=5)
        tr2 = langevin_trace(grad, np.zeros((2, 3)), 0.1, 25, seed=5)
        assert tr.shape == (25, 2, 3)
        assert np.array_equal(tr, tr2)


class TestThermalize:
    def test_zero_duration_identity(self):
        prior, model = gaussian_problem(34)
        batch = SampleBatch(make_rng(35).standard_normal((10, 3)))
        out = thermalize(tilted_logdensity(prior, posterior_tilt(model)), batch, 0.0, 0.01)
        assert out is batch

    def test_pinned_coordinates_preserved(self):
        prior, model = gaussian_problem(36)
        batch = SampleBatch(make_rng(37).standard_normal((50, 3)))
        out = thermalize(tilted_logdensity(prior, posterior_tilt(model)), batch,
                         duration=0.5, step=0.01, pinned=np.array([1]),
                         pinned_values=np.array([2.5]), seed=38)
        assert np.all(out.samples[:, 1] == 2.5)
        assert not np.allclose(out.samples[:, 0], batch.samples[:, 0])

    def test_stationarity_on_gaussian_posterior(self):
        # exact posterior samples stay distributionally invariant
        prior, model = gaussian_problem(39)
        post = gmm_posterior_analytic(prior, posterior_tilt(model))
        n = 20000
        start = SampleBatch(post.sample(n, make_rng(40)))
        out = thermalize(tilted_logdensity(prior, posterior_tilt(model)), start,
                         duration=1.0, step=0.002, seed=41)
        std = np.sqrt(np.diag(post.cov()))
        assert np.all(np.abs(out.samples.mean(axis=0) - post.mean()) < 4 * std / np.sqrt(n))
        rel = np.linalg.norm(np.cov(out.samples.T) - post.cov()) / np.linalg.norm(post.cov())
        assert rel < 0.05


class TestRobustness:
    def test_initialization_error_degrades_gracefully(self):
        # biased start at the boosted time yields a bounded final error that
        # shrinks with the size of the perturbation
        prior, model = gaussian_problem(42)
        t = working_time(model, OU)
        state = solve_tilt(model, t, OU)
        boosted = gmm_posterior_analytic(prior, state.base, t, OU)
        post = gmm_posterior_analytic(prior, posterior_tilt(model))
        ref = post.sample(6000, make_rng(43))
        errs = []
        for shift in (0.0, 0.05, 0.2):
            start = SampleBatch(boosted.sample(6000, make_rng(44)) + shift)
            out = reverse_sde(prior, start, SdeConfig(n_steps=500, t_start=t, seed=45), OU)
            errs.append(metrics.sliced_wasserstein(out.samples, ref, seed=46))
        assert errs[0] < errs[1] < errs[2]
        assert errs[2] < 0.5


class TestSampleBatchIo:
    def test_csv_round_trip(self, tmp_path):
        batch = SampleBatch(make_rng(50).standard_normal((7, 3)), meta={"seed": 1})
        path = tmp_path / "batch.csv"
        batch.save(path)
        loaded = SampleBatch.load(path)
        assert np.allclose(loaded.samples, batch.samples)
        assert loaded.meta["seed"] == 1
