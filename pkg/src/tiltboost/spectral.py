"""Measurement models in SVD form and the quadratic-tilt parameterization.

All tilt algebra downstream works in the fixed eigenbasis V of Q = AᵀA/σ²,
where every evolution ODE is diagonal.  Singular values below 1e-12 times the
largest one are truncated to exactly zero so that divisions by the singular
value are never attempted on noise-level entries.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np

ORTHO_TOL = 1e-10
RECONSTRUCT_TOL = 1e-12
SINGULAR_TRUNCATION = 1e-12


class SpectralError(ValueError):
    pass


@dataclass(frozen=True)
class SpectralOperator:
    """A d'×d matrix stored as U diag(singulars) Vᵀ with d' <= d.

    U is d'×d' orthogonal, V is d×d orthogonal, singulars has length d' and is
    sorted nonincreasing with all entries >= 0.
    """

    U: np.ndarray
    singulars: np.ndarray
    V: np.ndarray

    def __post_init__(self):
        U, s, V = self.U, self.singulars, self.V
        d_prime, d = U.shape[0], V.shape[0]
        if d_prime > d:
            raise SpectralError(f"d'={d_prime} exceeds d={d}")
        if s.shape != (d_prime,):
            raise SpectralError("singular vector length must equal d'")
        if np.any(s < 0) or np.any(np.diff(s) > 0):
            raise SpectralError("singulars must be nonnegative and nonincreasing")
        for M, name in ((U, "U"), (V, "V")):
            err = np.linalg.norm(M.T @ M - np.eye(M.shape[0]))
            if err > ORTHO_TOL:
                raise SpectralError(f"{name} not orthogonal (Frobenius error {err:.3e})")

    @property
    def d(self) -> int:
        return self.V.shape[0]

    @property
    def d_prime(self) -> int:
        return self.U.shape[0]

    @property
    def rank(self) -> int:
        return int(np.count_nonzero(self.singulars))

    def dense(self) -> np.ndarray:
        """Reconstruct the dense matrix U diag-rect(singulars) Vᵀ."""
        rect = np.zeros((self.d_prime, self.d))
        np.fill_diagonal(rect, self.singulars)
        return self.U @ rect @ self.V.T

    @classmethod
    def from_dense(cls, A: np.ndarray) -> "SpectralOperator":
        A = np.asarray(A, dtype=float)
        if A.ndim != 2:
            raise SpectralError("operator must be a 2-D matrix")
        if not np.all(np.isfinite(A)):
            raise SpectralError("operator has non-finite entries")
        d_prime, d = A.shape
        if d_prime > d:
            raise SpectralError(f"d'={d_prime} exceeds d={d}; transpose the problem first")
        try:
            U, s, Vt = np.linalg.svd(A, full_matrices=True)
        except np.linalg.LinAlgError as exc:
            raise SpectralError(f"SVD failed: {exc}") from exc
        if s.size and s[0] > 0:
            s = np.where(s < SINGULAR_TRUNCATION * s[0], 0.0, s)
        return cls(U=U, singulars=s, V=Vt.T)


@dataclass(frozen=True)
class MeasurementModel:
    """Observation y = A x + sigma w with A in SVD form.

    Derived tilt: Q = AᵀA/σ² (eigenvalues λᵢ²/σ² in basis V) and b = Aᵀy/σ².
    The sign of b is the one that makes exp(-½xᵀQx + xᵀb) proportional to the
    Gaussian likelihood exp(-||Ax - y||²/(2σ²)).
    """

    A: SpectralOperator
    sigma: float
    y: np.ndarray

    def __post_init__(self):
        if not (self.sigma > 0):
            raise SpectralError("sigma must be positive")
        if self.y.shape != (self.A.d_prime,):
            raise SpectralError("y must have length d'")
        if not np.all(np.isfinite(self.y)):
            raise SpectralError("y has non-finite entries")

    @property
    def d(self) -> int:
        return self.A.d

    @property
    def d_prime(self) -> int:
        return self.A.d_prime

    def q_eigvals(self) -> np.ndarray:
        """Eigenvalues of Q in the basis V, length d (zeros beyond rank)."""
        q = np.zeros(self.d)
        q[: self.d_prime] = (self.A.singulars / self.sigma) ** 2
        return q

    def to_json(self) -> str:
        return json.dumps(
            {
                "d": self.d,
                "d_prime": self.d_prime,
                "sigma": self.sigma,
                "A_dense": self.A.dense().ravel().tolist(),
                "y": self.y.tolist(),
            }
        )

    @classmethod
    def from_json(cls, text: str) -> "MeasurementModel":
        doc = json.loads(text)
        A = np.asarray(doc["A_dense"], dtype=float).reshape(doc["d_prime"], doc["d"])
        return build_measurement(A, doc["sigma"], np.asarray(doc["y"], dtype=float))


@dataclass(frozen=True)
class QuadraticTilt:
    """Tilt exp(-½ xᵀQx + xᵀb) stored in the eigenbasis of Q.

    q holds the tilt eigenvalues and xi the linear coefficients in the basis
    eigvecs.  Entries of q may be the tagged value +inf only inside iterated
    transport bookkeeping, encoding a delta-constrained direction; every
    arithmetic consumer must mask them via `finite_mask` first.
    """

    eigvecs: np.ndarray
    q: np.ndarray
    xi: np.ndarray

    def __post_init__(self):
        d = self.eigvecs.shape[0]
        if self.q.shape != (d,) or self.xi.shape != (d,):
            raise SpectralError("q and xi must have length d")
        if np.any(self.q[np.isfinite(self.q)] < 0):
            raise SpectralError("finite tilt eigenvalues must be nonnegative")
        zero = self.q == 0
        if np.any(self.xi[zero] != 0):
            raise SpectralError("xi must vanish where q does")

    @property
    def d(self) -> int:
        return self.q.shape[0]

    def finite_mask(self) -> np.ndarray:
        return np.isfinite(self.q)

    def dense_q(self) -> np.ndarray:
        if not np.all(np.isfinite(self.q)):
            raise SpectralError("dense form undefined with delta-constrained directions")
        return self.eigvecs @ (self.q[:, None] * self.eigvecs.T)

    def dense_b(self) -> np.ndarray:
        if not np.all(np.isfinite(self.q)):
            raise SpectralError("dense form undefined with delta-constrained directions")
        return self.eigvecs @ self.xi

    def log_factor(self, x: np.ndarray) -> np.ndarray:
        """-½ xᵀQx + xᵀb for a batch of points x of shape (n, d)."""
        z = np.atleast_2d(x) @ self.eigvecs
        m = self.finite_mask()
        return -0.5 * (z[:, m] ** 2 * self.q[m]).sum(axis=1) + z[:, m] @ self.xi[m]

    def grad_log_factor(self, x: np.ndarray) -> np.ndarray:
        """Gradient of the tilt log-factor, shape matching x (n, d)."""
        z = np.atleast_2d(x) @ self.eigvecs
        m = self.finite_mask()
        g = np.zeros_like(z)
        g[:, m] = self.xi[m] - z[:, m] * self.q[m]
        return g @ self.eigvecs.T


def build_measurement(A_dense: np.ndarray, sigma: float, y: np.ndarray) -> MeasurementModel:
    """Build a MeasurementModel from a dense operator, noise std and data."""
    op = SpectralOperator.from_dense(np.asarray(A_dense, dtype=float))
    return MeasurementModel(A=op, sigma=float(sigma), y=np.asarray(y, dtype=float))


def posterior_tilt(model: MeasurementModel) -> QuadraticTilt:
    """Quadratic tilt (Q, b) of the posterior, in the eigenbasis V of Q."""
    q = model.q_eigvals()
    xi = np.zeros(model.d)
    s = model.A.singulars
    uy = model.A.U.T @ model.y
    xi[: model.d_prime] = s / model.sigma**2 * uy
    xi[q == 0] = 0.0
    return QuadraticTilt(eigvecs=model.A.V, q=q, xi=xi)


def condition_numbers(model: MeasurementModel) -> tuple[float, float, float]:
    """(kappa_A, snr, q_norm) of the measurement.

    kappa_A is λ₁/λ_d' when the operator is square with full rank, +inf
    otherwise; snr is λmin(Q) over all d directions (0 when degenerate);
    q_norm is ||Q|| = λ₁²/σ².
    """
    s = model.A.singulars
    if model.A.rank == 0:
        raise SpectralError("all singular values are zero")
    q_norm = (s[0] / model.sigma) ** 2
    degenerate = model.d_prime < model.d or s[-1] == 0
    kappa = np.inf if degenerate else s[0] / s[-1]
    snr = 0.0 if degenerate else (s[-1] / model.sigma) ** 2
    return kappa, snr, q_norm


def lattice_coupling(side: int, beta: float) -> MeasurementModel:
    """Lattice field coupling Q for a periodic side×side grid, as a measurement.

    Q is half the graph Laplacian scaled by beta, so the operator norm is
    exactly 4*beta and the diagonal compensation per site is 2*beta, matching
    the (1 + 2*beta) quadratic coefficient of the single-site density.  The
    data vector is zero, i.e. the model is the Gibbs measure itself.
    """
    if beta < 0:
        raise SpectralError("beta must be nonnegative")
    d = side * side
    lap = np.zeros((d, d))
    idx = np.arange(d).reshape(side, side)
    for shift_axis in (0, 1):
        nbr = np.roll(idx, 1, axis=shift_axis)
        lap[idx.ravel(), nbr.ravel()] -= 1.0
        lap[nbr.ravel(), idx.ravel()] -= 1.0
    np.fill_diagonal(lap, 4.0)
    Q = 0.5 * beta * lap
    eigvals, eigvecs = np.linalg.eigh(Q)
    eigvals = np.clip(eigvals, 0.0, None)
    order = np.argsort(eigvals)[::-1]
    eigvals, eigvecs = eigvals[order], eigvecs[:, order]
    s = np.sqrt(eigvals)
    if s[0] > 0:
        s = np.where(s < SINGULAR_TRUNCATION * s[0], 0.0, s)
    op = SpectralOperator(U=np.eye(d), singulars=s, V=eigvecs)
    return MeasurementModel(A=op, sigma=1.0, y=np.zeros(d))
