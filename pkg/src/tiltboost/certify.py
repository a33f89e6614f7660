"""Susceptibility bounds and strong-log-concavity certificates.

The boosted target at blow-up is strongly log-concave whenever the prior's
susceptibility at tilt strength ||Q|| stays below 1/(lam_max(Q) - lam_min(Q)).
That threshold form makes the certificate exact for the hypercube prior,
where the susceptibility is exactly one and the pass/fail boundary sits at
spectral gap one.  The condition number entering the inequality is the one of
Q itself, i.e. the squared condition number of the measurement operator.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import simpson

from .priors import PriorModel
from .spectral import MeasurementModel


class CertificateError(ValueError):
    pass


@dataclass(frozen=True)
class CertificateReport:
    """Outcome of the strong-log-concavity check with all intermediates."""

    passed: bool
    chi_value: float
    q_norm: float
    kappa_q: float
    rhs: float
    margin: float
    provenance: str

    def as_dict(self) -> dict:
        return {
            "passed": self.passed,
            "chi_value": self.chi_value,
            "q_norm": self.q_norm,
            "kappa_q": self.kappa_q,
            "rhs": self.rhs,
            "margin": self.margin,
            "provenance": self.provenance,
        }


# ---------------------------------------------------------------------------
# Numeric 1-D susceptibility
# ---------------------------------------------------------------------------


def _tilted_variance(u: np.ndarray, log_base: np.ndarray, alpha: float) -> float:
    lw = log_base + alpha * u
    w = np.exp(lw - lw.max())
    z = simpson(w, x=u)
    m = simpson(u * w, x=u) / z
    return float(simpson((u - m) ** 2 * w, x=u) / z)


def _golden_max(f, lo: float, hi: float, tol: float = 1e-9) -> tuple[float, float]:
    inv_phi = (math.sqrt(5.0) - 1.0) / 2.0
    a, b = lo, hi
    c = b - inv_phi * (b - a)
    d = a + inv_phi * (b - a)
    fc, fd = f(c), f(d)
    while b - a > tol * (1.0 + abs(a) + abs(b)):
        if fc > fd:
            b, d, fd = d, c, fc
            c = b - inv_phi * (b - a)
            fc = f(c)
        else:
            a, c, fc = c, d, fd
            d = a + inv_phi * (b - a)
            fd = f(d)
    return (c, fc) if fc > fd else (d, fd)


def chi_numeric_1d(logdensity, t: float, half_width: float | None = None,
                   n_points: int = 4001, n_coarse: int = 201) -> float:
    """sup over tilt centers of the variance of the tilted 1-D density.

    The tilted measure has log density logdensity(u) - t u^2/2 + alpha u; the
    supremum runs over the linear coefficient alpha, which for t > 0 is a
    reparameterization of the tilt center and for t = 0 covers pure linear
    tilts.  Quadrature is composite Simpson on an auto-widened window; the
    coarse argmax over alpha is refined by golden section.
    """
    if t < 0:
        raise CertificateError("tilt strength must be nonnegative")

    w = half_width if half_width is not None else 6.0
    for _ in range(40):
        u = np.linspace(-w, w, n_points)
        lw = np.asarray(logdensity(u), dtype=float) - 0.5 * t * u**2
        peak = lw.max()
        if max(lw[0], lw[-1]) - peak < math.log(1e-12):
            dens = np.exp(lw - peak)
            z = simpson(dens, x=u)
            mean = simpson(u * dens, x=u) / z
            sigma = math.sqrt(simpson((u - mean) ** 2 * dens, x=u) / z)
            if w >= abs(mean) + 6.0 * sigma:
                break
            w = max(1.5 * w, abs(mean) + 6.0 * sigma)
        else:
            w *= 1.5
    else:
        raise CertificateError("could not find a window containing the mass")

    u = np.linspace(-w, w, n_points)
    log_base = np.asarray(logdensity(u), dtype=float) - 0.5 * t * u**2

    var0 = _tilted_variance(u, log_base, 0.0)
    alpha_span = 2.0 * (t + 1.0 / var0 + 1.0) * w
    for _ in range(8):
        alphas = np.linspace(-alpha_span, alpha_span, n_coarse)
        vals = np.array([_tilted_variance(u, log_base, a) for a in alphas])
        j = int(np.argmax(vals))
        if 0 < j < n_coarse - 1:
            lo, hi = alphas[j - 1], alphas[j + 1]
            _, best = _golden_max(lambda a: _tilted_variance(u, log_base, a), lo, hi)
            return best
        alpha_span *= 2.0
    raise CertificateError("variance still rising at the tilt-center grid edge")


def chi_numeric_discrete(atoms: np.ndarray, logweights: np.ndarray, t: float) -> float:
    """Susceptibility of a discrete 1-D measure under quadratic+linear tilts."""
    atoms = np.asarray(atoms, dtype=float)
    base = np.asarray(logweights, dtype=float) - 0.5 * t * atoms**2

    def var(alpha: float) -> float:
        lw = base + alpha * atoms
        w = np.exp(lw - lw.max())
        w /= w.sum()
        m = w @ atoms
        return float(w @ (atoms - m) ** 2)

    span = 1.0 + t * float(np.abs(atoms).max())
    for _ in range(20):
        alphas = np.linspace(-span, span, 401)
        vals = np.array([var(a) for a in alphas])
        j = int(np.argmax(vals))
        if 0 < j < 400:
            _, best = _golden_max(var, alphas[j - 1], alphas[j + 1])
            return best
        span *= 2.0
    raise CertificateError("variance still rising at the tilt-center grid edge")


# ---------------------------------------------------------------------------
# Certificates
# ---------------------------------------------------------------------------


def chi_bound(prior: PriorModel, t: float) -> float:
    """Best available susceptibility value for the prior at tilt strength t.

    Analytic bounds are used when the prior declares one; product priors fall
    back to the numeric 1-D susceptibility of their site density, which by
    tensorization equals the susceptibility of the product.
    """
    if prior.has_chi_bound:
        return prior.chi_value(t)
    site = getattr(prior, "site_logdensity", None)
    if site is not None:
        return chi_numeric_1d(site, t)
    raise CertificateError(f"no susceptibility bound available for {prior.name}")


def _chi_provenance(prior: PriorModel) -> str:
    if prior.has_chi_bound:
        return f"analytic:{prior.name}"
    return f"numeric-1d-tensorized:{prior.name}"


def certify_slc(prior: PriorModel, model: MeasurementModel) -> CertificateReport:
    """Strong-log-concavity certificate for the blow-up target.

    Passes iff chi_{||Q||}(prior) < 1/(lam_max(Q) - lam_min(Q)); the right
    side reduces to 1/||Q|| for degenerate Q and to +inf for pure denoising.
    """
    qv = model.q_eigvals()
    q_norm = float(qv[0])
    q_min = float(qv.min())
    if q_norm <= 0:
        raise CertificateError("Q must be nonzero to certify")
    kappa_q = math.inf if q_min == 0 else q_norm / q_min
    gap = q_norm - q_min
    rhs = math.inf if gap == 0 else 1.0 / gap
    chi = float(chi_bound(prior, q_norm))
    margin = rhs - chi
    return CertificateReport(
        passed=bool(chi < rhs),
        chi_value=chi,
        q_norm=q_norm,
        kappa_q=kappa_q,
        rhs=rhs,
        margin=margin,
        provenance=_chi_provenance(prior),
    )


def phase_diagram(prior_params: dict, snr_grid: np.ndarray,
                  kappa_grid: np.ndarray) -> np.ndarray:
    """Certificate margin over an (snr, kappa) grid for a compact mixture.

    prior_params holds the support radius R and the component variance delta.
    The snr axis uses the amplitude convention snr = lam_min(A)/sigma, whose
    square is lam_min(Q); kappa is the condition number of A.  Cells with
    kappa = 1 (denoising) have +inf margin.  margin > 0 certifies the cell;
    the zero level set traces a U-shaped contour in snr for suitable (R,
    delta).
    """
    R = float(prior_params["R"])
    delta = float(prior_params["delta"])
    snr = np.asarray(snr_grid, dtype=float)
    kap = np.asarray(kappa_grid, dtype=float)
    if np.any(snr <= 0) or np.any(kap < 1):
        raise CertificateError("need snr > 0 and kappa >= 1")
    s2 = snr[:, None] ** 2
    k2 = kap[None, :] ** 2
    with np.errstate(divide="ignore"):
        rhs = (1.0 + delta * s2) * (delta * k2 + 1.0 / s2) / (k2 - 1.0)
    margins = rhs - R**2
    margins[:, kap == 1.0] = math.inf
    return margins
