import numpy as np
import pytest

from tiltboost.certify import (
    CertificateError,
    certify_slc,
    chi_bound,
    chi_numeric_1d,
    chi_numeric_discrete,
    phase_diagram,
)
from tiltboost.priors import GaussianMixturePrior, HypercubePrior, Phi4Prior
from tiltboost.spectral import SpectralOperator, MeasurementModel, build_measurement
from tiltboost.tilt import working_time, solve_tilt


def model_with_q_eigs(eigs, seed=0, y_scale=1.0):
    eigs = np.asarray(eigs, dtype=float)
    d = len(eigs)
    rng = np.random.Generator(np.random.Philox(seed))
    q, r = np.linalg.qr(rng.standard_normal((d, d)))
    V = q * np.sign(np.diag(r))
    op = SpectralOperator(U=np.eye(d), singulars=np.sqrt(np.sort(eigs)[::-1]), V=V)
    return MeasurementModel(A=op, sigma=1.0, y=y_scale * rng.standard_normal(d))


class TestChiNumeric:
    @pytest.mark.parametrize("t", [0.1, 1.0, 10.0])
    def test_gaussian_closed_form(self, t):
        got = chi_numeric_1d(lambda u: -0.5 * u**2, t)
        assert abs(got - 1.0 / (1.0 + t)) < 1e-6

    def test_quartic_site_base_value(self):
        # sup over linear tilts of the variance of exp(-u^4 + u^2)
        eta = chi_numeric_1d(lambda u: -u**4 + u**2, 0.0)
        assert abs(eta - 0.52) < 0.02

    def test_two_point_measure(self):
        got = chi_numeric_discrete(np.array([-1.0, 1.0]), np.log([0.5, 0.5]), t=2.0)
        assert abs(got - 1.0) < 1e-9

    def test_monotone_in_tilt_strength(self):
        prior = Phi4Prior(2, 0.4)
        values = [chi_numeric_1d(prior.site_logdensity, t) for t in (0.0, 0.5, 1.0, 2.0, 4.0)]
        assert np.all(np.diff(values) <= 1e-10)

    def test_off_center_density(self):
        # shifted Gaussian: susceptibility is translation invariant
        got = chi_numeric_1d(lambda u: -0.5 * (u - 3.0) ** 2, 1.0)
        assert abs(got - 0.5) < 1e-6


class TestChiBound:
    def test_gaussian_prior(self):
        prior = GaussianMixturePrior(np.zeros((1, 4)), np.ones(1), 1.0)
        assert chi_bound(prior, 1.0) == pytest.approx(0.5)

    def test_hypercube(self):
        assert chi_bound(HypercubePrior(6, 0.0), 3.7) == 1.0

    def test_compact_mixture_bound(self):
        # R=2, delta=0.5, t=2 -> (2/2)^2 + 0.5/2 = 1.25
        prior = GaussianMixturePrior(np.array([[2.0, 0.0], [0.0, -1.0]]),
                                     np.array([0.5, 0.5]), 0.5)
        assert chi_bound(prior, 2.0) == pytest.approx(1.25)

    def test_phi4_uses_site_density(self):
        prior = Phi4Prior(2, 0.25)
        # at t = 4*beta the quadratic term cancels to the base quartic density
        assert abs(chi_bound(prior, 4 * 0.25) - 0.5209) < 0.005

    def test_tensorization_matches_1d(self):
        # chi of a product of identical sites equals the single-site value
        prior = Phi4Prior(3, 0.3)
        site = chi_numeric_1d(prior.site_logdensity, 0.7)
        assert chi_bound(prior, 0.7) == pytest.approx(site)


class TestCertifySlc:
    def test_ising_gap_below_one_passes(self):
        m = model_with_q_eigs(np.linspace(1.0, 0.1, 5))  # gap 0.9
        report = certify_slc(HypercubePrior(5, 0.0), m)
        assert report.passed
        assert report.margin == pytest.approx(1 / 0.9 - 1.0)

    def test_ising_flip_exactly_at_gap_one(self):
        for gap, expect in ((1.0 - 1e-9, True), (1.0 + 1e-9, False)):
            m = model_with_q_eigs([0.5 + gap, 0.5])
            report = certify_slc(HypercubePrior(2, 0.0), m)
            assert report.passed is expect

    def test_phi4_thresholds(self):
        from tiltboost.spectral import lattice_coupling
        passed = certify_slc(Phi4Prior(4, 0.4), lattice_coupling(4, 0.4))
        failed = certify_slc(Phi4Prior(4, 0.6), lattice_coupling(4, 0.6))
        assert passed.passed and not failed.passed
        assert np.isinf(passed.kappa_q)  # lattice coupling is degenerate

    def test_denoising_always_passes(self):
        m = build_measurement(np.eye(3), 0.7, np.ones(3))
        report = certify_slc(GaussianMixturePrior(np.zeros((1, 3)), np.ones(1), 1.0), m)
        assert np.isinf(report.rhs) and report.passed

    def test_gmm_hessian_spot_check_when_passed(self):
        # certificate passed -> the boosted-target Hessian is negative
        # definite at sampled points (boosted time just before blow-up)
        prior = GaussianMixturePrior(np.array([[0.8, 0.0], [-0.8, 0.4]]),
                                     np.array([0.5, 0.5]), 0.5)
        m = model_with_q_eigs([2.0, 1.9], seed=3, y_scale=0.3)
        report = certify_slc(prior, m)
        assert report.passed
        t = working_time(m, "ou", eps=1e-4)
        state = solve_tilt(m, t, "ou")
        rng = np.random.Generator(np.random.Philox(5))
        x = rng.standard_normal((200, 2)) * 2.0
        hess = prior.hessian_logpdf_t(x, t, "ou")
        q_dense = state.base.dense_q()
        for h in hess:
            top = np.linalg.eigvalsh(h - q_dense).max()
            assert top < 0

    def test_report_fields(self):
        m = model_with_q_eigs([2.0, 1.0])
        report = certify_slc(HypercubePrior(2, 0.0), m)
        assert report.kappa_q == pytest.approx(2.0)
        assert report.q_norm == pytest.approx(2.0)
        assert report.passed == (report.margin > 0)
        assert "hypercube" in report.provenance


class TestPhaseDiagram:
    def test_denoising_column_infinite(self):
        margins = phase_diagram({"R": 1.0, "delta": 0.1},
                                np.array([0.5, 1.0]), np.array([1.0, 2.0]))
        assert np.all(np.isinf(margins[:, 0]))
        assert np.all(np.isfinite(margins[:, 1]))

    def test_u_shape_in_snr(self):
        snr = np.logspace(-3, 3, 121)
        margins = phase_diagram({"R": 1.0, "delta": 0.01}, snr, np.array([10.0]))
        signs = margins[:, 0] > 0
        assert signs[0] and signs[-1] and not signs.all()
        flips = np.count_nonzero(np.diff(signs))
        assert flips == 2  # positive, negative, positive again

    def test_sign_agrees_with_certificate(self):
        # a measurement at (snr, kappa) built to match the grid conventions:
        # snr is lam_min(A)/sigma, so Q eigenvalues span [snr^2, (kappa snr)^2]
        rng = np.random.Generator(np.random.Philox(8))
        R, delta = 1.5, 0.2
        prior = GaussianMixturePrior(
            np.stack([np.array([R, 0.0]), np.array([-R, 0.0])]),
            np.array([0.5, 0.5]), delta)
        assert prior.support_radius == pytest.approx(R)
        for _ in range(100):
            snr = float(10 ** rng.uniform(-2, 1.5))
            kappa = float(rng.uniform(1.05, 20.0))
            margins = phase_diagram({"R": R, "delta": delta},
                                    np.array([snr]), np.array([kappa]))
            m = model_with_q_eigs([(kappa * snr) ** 2, snr**2], seed=int(rng.integers(1e6)))
            report = certify_slc(prior, m)
            if abs(margins[0, 0]) > 1e-9:  # skip exact boundary cells
                assert (margins[0, 0] > 0) == report.passed

    def test_rejects_bad_grids(self):
        with pytest.raises(CertificateError):
            phase_diagram({"R": 1.0, "delta": 0.1}, np.array([-1.0]), np.array([2.0]))
