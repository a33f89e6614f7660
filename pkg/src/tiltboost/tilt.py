"""Closed-form tilt evolution, blow-up times, boosted models, and schedules.

The posterior tilt (Q, b) evolves along first-order ODEs whose solutions are
diagonal in the eigenbasis of Q.  Under the variance-preserving semigroup the
eigenvalues follow q' = 2(1+q)q and under the variance-exploding one
q' = 2q^2; in both cases the linear term is recovered from the invariant
ratio xi/q, so no numerical integration is ever needed.  The top eigenvalue
diverges at the blow-up time T, the natural working endpoint.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from .priors import HEAT, OU, _norm_semigroup
from .spectral import MeasurementModel, QuadraticTilt, SpectralOperator, posterior_tilt

WORK_EPS = 0.01  # default absolute back-off from the blow-up time
TIE_REL = 1e-12
LEG_MERGE_TOL = 1e-9


class TiltError(ValueError):
    pass


@dataclass(frozen=True)
class TiltState:
    """Tilt (Q_t, b_t) at time t, with its semigroup and blow-up time."""

    t: float
    base: QuadraticTilt
    semigroup: str
    T_blowup: float

    def __post_init__(self):
        if not (0 <= self.t < self.T_blowup):
            raise TiltError(f"t={self.t} outside [0, T={self.T_blowup})")


def _q_at(q0: np.ndarray, t: float, semigroup: str) -> np.ndarray:
    q0 = np.asarray(q0, dtype=float)
    if _norm_semigroup(semigroup) == OU:
        e2t = math.exp(2.0 * t)
        denom = 1.0 + q0 - q0 * e2t
    else:
        denom = 1.0 - 2.0 * t * q0
    if np.any(denom[q0 > 0] <= 0):
        raise TiltError(f"tilt blew up before t={t}")
    out = np.zeros_like(q0)
    pos = q0 > 0
    scale = math.exp(2.0 * t) if _norm_semigroup(semigroup) == OU else 1.0
    out[pos] = scale * q0[pos] / denom[pos]
    return out


def blowup_time(model: MeasurementModel, semigroup: str = OU) -> float:
    """Time at which the top tilt eigenvalue diverges; +inf for Q = 0."""
    q_max = model.q_eigvals()[0]
    if q_max == 0:
        return math.inf
    if _norm_semigroup(semigroup) == OU:
        return 0.5 * math.log1p(1.0 / q_max)
    return 0.5 / q_max


def working_time(model: MeasurementModel, semigroup: str = OU, eps: float = WORK_EPS) -> float:
    """T - eps, clamped to at least T/2 so short transports stay usable."""
    T = blowup_time(model, semigroup)
    if math.isinf(T):
        raise TiltError("Q = 0 has no finite blow-up time")
    return max(T - eps, 0.5 * T)


def solve_tilt(model: MeasurementModel, t: float, semigroup: str = OU) -> TiltState:
    """Closed-form (Q_t, b_t) in the eigenbasis of Q.

    Every nonzero tilt eigenvalue is strictly increasing in t; the linear term
    follows from d/dt (xi/q) = -xi/q (variance-preserving) or = 0
    (variance-exploding).
    """
    if t < 0:
        raise TiltError("t must be nonnegative")
    T = blowup_time(model, semigroup)
    if t >= T:
        raise TiltError(f"t={t} is past the blow-up time T={T}")
    tilt0 = posterior_tilt(model)
    q_t = _q_at(tilt0.q, t, semigroup)
    ratio_scale = math.exp(-t) if _norm_semigroup(semigroup) == OU else 1.0
    xi_t = np.zeros_like(q_t)
    pos = tilt0.q > 0
    xi_t[pos] = ratio_scale * tilt0.xi[pos] / tilt0.q[pos] * q_t[pos]
    base = QuadraticTilt(eigvecs=tilt0.eigvecs, q=q_t, xi=xi_t)
    return TiltState(t=float(t), base=base, semigroup=_norm_semigroup(semigroup), T_blowup=T)


def boosted_observation(model: MeasurementModel, t: float, semigroup: str = OU) -> MeasurementModel:
    """The boosted model at time t: unit noise, A_t in SVD form.

    The returned model's posterior tilt equals solve_tilt(model, t) exactly in
    spectral coordinates: singulars are sqrt(q_i(t)) with data chosen so the
    linear term matches.
    """
    state = solve_tilt(model, t, semigroup)
    d_prime = model.d_prime
    q_t = state.base.q[:d_prime]
    s_t = np.sqrt(q_t)
    y_t = np.zeros(d_prime)
    pos = s_t > 0
    y_t[pos] = state.base.xi[:d_prime][pos] / s_t[pos]
    op = SpectralOperator(U=np.eye(d_prime), singulars=s_t, V=model.A.V)
    return MeasurementModel(A=op, sigma=1.0, y=y_t)


def boosted_heat_target(model: MeasurementModel,
                        allow_pinned: bool = True) -> tuple[QuadraticTilt, float]:
    """Blow-up tilt of the variance-exploding transport and its smoothing.

    Returns (Q_star, smoothing) where the target measure is the Q_star tilt of
    the prior convolved with a Gaussian of variance `smoothing` = 1/||Q||.
    Directions whose eigenvalue equals ||Q|| become delta constraints, tagged
    q = +inf with xi holding the pinned coordinate value; pass
    allow_pinned=False to get an error instead.
    """
    tilt0 = posterior_tilt(model)
    q0 = tilt0.q
    q_max = q0[0]
    if q_max <= 0:
        raise TiltError("Q must be nonzero")
    top = np.isclose(q0, q_max, rtol=1e-12, atol=0.0)
    if np.any(top) and not allow_pinned:
        raise TiltError("top eigendirections pin to deltas at blow-up")
    q_star = np.zeros_like(q0)
    xi_star = np.zeros_like(q0)
    pos = (q0 > 0) & ~top
    q_star[pos] = q0[pos] / (1.0 - q0[pos] / q_max)
    xi_star[pos] = tilt0.xi[pos] / (1.0 - q0[pos] / q_max)
    q_star[top] = np.inf
    xi_star[top] = tilt0.xi[top] / q0[top]  # pinned coordinate value
    return (
        QuadraticTilt(eigvecs=tilt0.eigvecs, q=q_star, xi=xi_star),
        1.0 / q_max,
    )


# ---------------------------------------------------------------------------
# Iterated schedule
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Leg:
    """One reverse-transport leg, ending with coordinates 1..k pinned."""

    k: int
    t_start: float
    t_end: float

    @property
    def duration(self) -> float:
        return self.t_start - self.t_end


@dataclass(frozen=True)
class IteratedSchedule:
    """Per-eigenvalue blow-up schedule of the variance-exploding transport.

    lambdas are the (tie-perturbed, descending) eigenvalues of Q; thresholds
    T_j = 1/(2 lambda_j) are strictly increasing over the r nonzero
    directions.  pinned_values[j] is the coordinate at which direction j
    collapses, the invariant ratio xi_j / lambda_j.  legs run from the k_star
    state down to time zero, with near-coincident thresholds merged.
    """

    eigvecs: np.ndarray
    lambdas: np.ndarray
    xi0: np.ndarray
    thresholds: np.ndarray
    pinned_values: np.ndarray
    k_star: int
    legs: tuple[Leg, ...]

    @property
    def rank(self) -> int:
        return self.thresholds.shape[0]

    def lambda_bar(self, t: float) -> np.ndarray:
        """Tilt eigenvalues at time t; +inf on directions already blown."""
        out = np.full(self.lambdas.shape, np.inf)
        alive = (self.lambdas > 0) & (2.0 * t * self.lambdas < 1.0)
        out[alive] = self.lambdas[alive] / (1.0 - 2.0 * t * self.lambdas[alive])
        out[self.lambdas == 0] = 0.0
        return out

    def xi_bar(self, t: float) -> np.ndarray:
        """Linear coefficients at time t on directions not yet blown, else 0."""
        lam = self.lambda_bar(t)
        out = np.zeros_like(self.xi0)
        ok = np.isfinite(lam) & (self.lambdas > 0)
        out[ok] = self.xi0[ok] / self.lambdas[ok] * lam[ok]
        return out

    def lambda_tilde(self, k: int) -> np.ndarray:
        """Eigenvalues of the re-inflated tilt at T_k after the leg from T_{k+1}.

        The first k+1 directions share the value of the trajectory that blows
        exactly at T_{k+1}; the rest follow their own trajectories.
        """
        lam = self.lambdas
        lam_next = lam[k]  # lambda_{k+1} in 1-based notation
        out = np.zeros_like(lam)
        t_k = 0.0 if k == 0 else self.thresholds[k - 1]
        shared = lam_next / (1.0 - 2.0 * t_k * lam_next)
        out[: k + 1] = shared
        rest = np.arange(k + 1, lam.shape[0])
        pos = rest[lam[rest] > 0]
        out[pos] = lam[pos] / (1.0 - 2.0 * t_k * lam[pos])
        return out

    def lipschitz_bound(self, k: int, chi_at: float) -> float:
        """Upper bound on the largest Hessian eigenvalue of the k-th target."""
        lam_k = float(self.lambdas[k - 1])
        lam_min = float(self.lambdas.min())  # 0 when Q is degenerate
        # kappa_k/(kappa_k - 1) with kappa_k = lam_k/lam_min; the limit at
        # lam_min = 0 is 1 and at lam_k = lam_min it is +inf
        frac = math.inf if lam_k == lam_min else lam_k / (lam_k - lam_min)
        return (1.0 + lam_k) * (lam_k * chi_at - frac)

    def to_json(self) -> str:
        return json.dumps(
            {
                "lambdas": self.lambdas.tolist(),
                "thresholds": self.thresholds.tolist(),
                "pinned_values": self.pinned_values.tolist(),
                "k_star": self.k_star,
                "legs": [(leg.k, leg.t_start, leg.t_end) for leg in self.legs],
            }
        )


def iterated_schedule(model: MeasurementModel, chi_bound=None) -> IteratedSchedule:
    """Build the iterated blow-up schedule for the variance-exploding flow.

    chi_bound maps a tilt strength to a susceptibility value for the prior;
    k_star is the first truncation index whose certificate passes.  Without a
    bound the full schedule is used (every nonzero direction pinned).  Tied
    eigenvalues are perturbed by 1e-12 relative and legs shorter than 1e-9
    merged.
    """
    tilt0 = posterior_tilt(model)
    lam = tilt0.q.copy()
    xi0 = tilt0.xi.copy()
    if lam[0] <= 0:
        raise TiltError("Q must be nonzero")
    jitter = TIE_REL * lam[0]
    for j in range(1, lam.shape[0]):
        if lam[j] > 0:
            lam[j] = min(lam[j], lam[j - 1] - jitter)
            if lam[j] <= 0:
                lam[j] = 0.0
    r = int(np.count_nonzero(lam))
    thresholds = 0.5 / lam[:r]
    pinned_values = xi0[:r] / lam[:r]

    lam_min = lam[lam > 0].min() if r == lam.shape[0] else 0.0
    k_star = r
    if chi_bound is not None:
        for k in range(1, r + 1):
            lam_k = lam[k - 1]
            rhs = math.inf if lam_k <= lam_min else 1.0 / (lam_k - lam_min)
            if chi_bound(lam_k) <= rhs:
                k_star = k
                break

    legs: list[Leg] = []
    t_hi = thresholds[k_star - 1]
    for k in range(k_star - 1, -1, -1):
        t_lo = thresholds[k - 1] if k >= 1 else 0.0
        if t_hi - t_lo < LEG_MERGE_TOL:
            continue
        legs.append(Leg(k=k, t_start=t_hi, t_end=t_lo))
        t_hi = t_lo

    return IteratedSchedule(
        eigvecs=tilt0.eigvecs,
        lambdas=lam,
        xi0=xi0,
        thresholds=thresholds,
        pinned_values=pinned_values,
        k_star=k_star,
        legs=tuple(legs),
    )
